"""
Management command to fit a background model on a spectra CSV.
"""
import logging

import numpy as np

from background.exceptions import NumericalCheckError, ParameterError
from background.management.base import SpectraCommand, coerce, overlay
from background.schemas import Method
from background.services import model_service, spectra_service
from background.services.poisson_epca_service import fit_options

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-10
FLAG_FIT_OPTIONS = ('seed', 'max_iters', 'tol', 'restarts', 'inner_steps', 'use_offset')


class Command(SpectraCommand):
    help = 'Fit a Gaussian PCA or Poisson PCA background model and save it as JSON'

    defaults = {
        'input': None,
        'method': None,
        'k': None,
        'out': None,
        'seed': 0,
        'max_iters': None,
        'tol': None,
        'restarts': None,
        'inner_steps': None,
        'use_offset': None,
        'fit_options': None,
    }
    required = ('input', 'method', 'k', 'out')

    def add_command_arguments(self, parser):
        parser.add_argument('--input', help='Training spectra CSV')
        parser.add_argument('--method', choices=[m.value for m in Method])
        parser.add_argument('--k', type=int, help='Number of components')
        parser.add_argument('--out', help='Model JSON path')
        parser.add_argument('--seed', type=int, help='Initialization seed (poisson)')
        parser.add_argument('--max-iters', type=int, help='Outer alternating passes (poisson)')
        parser.add_argument('--tol', type=float, help='Relative loss-change tolerance (poisson)')
        parser.add_argument('--restarts', type=int, help='Independent initializations; best loss wins')
        parser.add_argument('--inner-steps', type=int, help='Newton steps per block per pass')
        parser.add_argument('--no-offset', dest='use_offset', action='store_false', default=None,
                            help='Factorize the natural parameters without a per-bin offset')

    def run(self, params):
        try:
            method = Method(params['method'])
        except ValueError:
            raise ParameterError(f"unknown method {params['method']!r}") from None
        k = coerce('k', params['k'])
        opts = fit_options(**overlay(
            params['fit_options'],
            **{key: params[key] for key in FLAG_FIT_OPTIONS},
        ))
        # the manifest records every resolved value so a replay ignores current settings
        params = dict(
            params,
            fit_options=opts.model_dump(mode='json'),
            **{key: getattr(opts, key) for key in FLAG_FIT_OPTIONS},
        )

        train = spectra_service.load_spectra(params['input'])
        model = model_service.fit_model(method, train, k, opts)
        model_service.save_model(model, params['out'])

        reloaded = model_service.load_model(params['out'])
        if method == Method.GAUSSIAN:
            gram = reloaded.basis @ reloaded.basis.T
            if not np.allclose(gram, np.eye(k), rtol=0.0, atol=ORTHONORMAL_TOLERANCE):
                raise NumericalCheckError("saved basis is not orthonormal")

        self.write_manifest(params, [params['input']], params['out'],
                            master_seed=params['seed'])

        if method == Method.GAUSSIAN:
            summary = f"explained variance {float(model.explained_variance.sum()):.6g}"
        else:
            summary = f"loss {model.final_loss:.10g} after {model.fit_trace[-1][0]} passes"
        self.stdout.write(self.style.SUCCESS(
            f"✓ Fitted {method.value} k={k} on {train.n_rows} spectra ({summary}) -> {params['out']}"
        ))
