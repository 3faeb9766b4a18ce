"""
Management command comparing Poisson and Gaussian fits for one energy bin.
"""
import json
import logging
from pathlib import Path

from background.exceptions import ParameterError
from background.management.base import SpectraCommand, coerce
from background.services import skl_service, spectra_service

logger = logging.getLogger(__name__)


class Command(SpectraCommand):
    help = "Fit Poisson and Gaussian models to one bin's counts and report both log-likelihoods"

    defaults = {
        'input': None,
        'bin_index': None,
        'out': None,
    }
    required = ('input', 'bin_index', 'out')

    def add_command_arguments(self, parser):
        parser.add_argument('--input', help='Spectra CSV')
        parser.add_argument('--bin-index', type=int, help='0-based energy bin')
        parser.add_argument('--out', help='Diagnostic JSON path')

    def run(self, params):
        spectra = spectra_service.load_spectra(params['input'])
        bin_index = coerce('bin_index', params['bin_index'])
        if not 0 <= bin_index < spectra.bin_count:
            raise ParameterError(
                f"bin index {bin_index} outside 0..{spectra.bin_count - 1}"
            )

        samples = spectra.counts[:, bin_index]
        fit = skl_service.bin_model_fit(samples)
        payload = {
            'bin_index': bin_index,
            'fit': fit.model_dump(mode='json'),
            'histogram': {str(value): count for value, count in skl_service.count_histogram(samples).items()},
        }
        Path(params['out']).write_text(json.dumps(payload, indent=2) + '\n', encoding='utf-8')

        self.write_manifest(params, [params['input']], params['out'])
        better = 'poisson' if fit.loglik_poisson > fit.loglik_gaussian else 'gaussian'
        self.stdout.write(self.style.SUCCESS(
            f"✓ Bin {bin_index}: loglik poisson {fit.loglik_poisson:.6g}, "
            f"gaussian {fit.loglik_gaussian:.6g} ({better} fits better) -> {params['out']}"
        ))
        if fit.degenerate:
            self.stdout.write(self.style.WARNING(
                f"⚠ Bin {bin_index} is constant; gaussian sd was floored"
            ))
