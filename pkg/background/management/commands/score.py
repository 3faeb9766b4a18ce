"""
Management command to score spectra with a saved background model.
"""
import csv
import logging

from background.management.base import SpectraCommand, overlay
from background.schemas import ScoreKind
from background.exceptions import ParameterError
from background.services import model_service, spectra_service
from background.services.poisson_epca_service import encode_options

logger = logging.getLogger(__name__)


class Command(SpectraCommand):
    help = 'Write the reconstruction-error score of every spectrum as CSV (row_index, score)'

    defaults = {
        'model': None,
        'input': None,
        'out': None,
        'score_kind': ScoreKind.DEVIANCE.value,
        'encode_max_iters': None,
        'encode_tol': None,
        'encode_options': None,
    }
    required = ('model', 'input', 'out')

    def add_command_arguments(self, parser):
        parser.add_argument('--model', help='Model JSON written by fit')
        parser.add_argument('--input', help='Spectra CSV to score')
        parser.add_argument('--out', help='Scores CSV path')
        parser.add_argument('--score-kind', choices=[kind.value for kind in ScoreKind],
                            help='Poisson models only: deviance (default) or nll')
        parser.add_argument('--encode-max-iters', type=int, help='Newton iterations per spectrum (poisson)')
        parser.add_argument('--encode-tol', type=float, help='Encoding tolerance (poisson)')

    def run(self, params):
        try:
            kind = ScoreKind(params['score_kind'])
        except ValueError:
            raise ParameterError(f"unknown score kind {params['score_kind']!r}") from None
        opts = encode_options(**overlay(
            params['encode_options'],
            max_iters=params['encode_max_iters'],
            tol=params['encode_tol'],
        ))
        params = dict(
            params,
            encode_options=opts.model_dump(mode='json'),
            encode_max_iters=opts.max_iters,
            encode_tol=opts.tol,
        )

        model = model_service.load_model(params['model'])
        spectra = spectra_service.load_spectra(params['input'])
        scores = model_service.score_spectra(model, spectra, opts, kind)

        with open(params['out'], 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(['row_index', 'score'])
            for index, score in enumerate(scores):
                writer.writerow([index, repr(float(score))])

        self.write_manifest(params, [params['model'], params['input']], params['out'])
        self.stdout.write(self.style.SUCCESS(
            f"✓ Scored {spectra.n_rows} spectra with {model.type} k={model.k} -> {params['out']}"
        ))
