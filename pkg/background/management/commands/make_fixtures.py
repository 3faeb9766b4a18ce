"""
Management command to write the bundled synthetic fixtures.

The files are SYNTHETIC stand-ins for measured background: every CSV carries
`# source=synthetic` in its metadata header.
"""
import logging
from pathlib import Path

from django.conf import settings

from background.management.base import SpectraCommand, coerce
from background.services import injector_service, spectra_service, synthetic_service
from background.services.manifest_service import derive_seed

logger = logging.getLogger(__name__)


class Command(SpectraCommand):
    help = 'Generate synthetic train/test background spectra and a source model'

    defaults = {
        'out_dir': None,
        'train_size': 1000,
        'test_size': 1000,
        'bins': None,
        'rank': 3,
        'strength': 400.0,
        'exponent': 2.0,
        'seed': 0,
    }

    def add_command_arguments(self, parser):
        parser.add_argument('--out-dir', help='Target directory (default: BACKGROUND_FIXTURES_DIR)')
        parser.add_argument('--train-size', type=int, help='Training spectra to generate')
        parser.add_argument('--test-size', type=int, help='Test spectra to generate')
        parser.add_argument('--bins', type=int, help='Energy bins per spectrum')
        parser.add_argument('--rank', type=int, help='Latent log-intensity factors')
        parser.add_argument('--strength', type=float, help='Source counts per spectrum at 1 m')
        parser.add_argument('--exponent', type=float, help='Distance falloff exponent')
        parser.add_argument('--seed', type=int, help='Master seed')

    def run(self, params):
        out_dir = Path(params['out_dir'] or settings.FIXTURES_DIR)
        bins = coerce('bins', params['bins'] or settings.BACKGROUND_DEFAULTS['bin_count'])
        seed = coerce('seed', params['seed'])
        rank = coerce('rank', params['rank'])
        out_dir.mkdir(parents=True, exist_ok=True)

        train = synthetic_service.generate_background(
            coerce('train_size', params['train_size']), bins, rank, derive_seed(seed, 'fixture', 'train'),
        )
        test = synthetic_service.generate_background(
            coerce('test_size', params['test_size']), bins, rank, derive_seed(seed, 'fixture', 'test'),
        )
        source = injector_service.build_source(
            injector_service.default_source_template(bins),
            coerce('strength', params['strength'], float),
            coerce('exponent', params['exponent'], float),
        )

        paths = [out_dir / 'train.csv', out_dir / 'test.csv', out_dir / 'source.json']
        spectra_service.save_spectra(train, paths[0])
        spectra_service.save_spectra(test, paths[1])
        injector_service.save_source(source, paths[2])

        params = dict(params, out_dir=str(out_dir), bins=bins)
        self.write_manifest(params, [], out_dir, outputs=[str(p) for p in paths], master_seed=seed)

        for row in injector_service.injection_schedule(source, [1.0, 10.0, 20.0]):
            self.stdout.write(f"  source at {row['distance_m']:g} m adds {row['expected_counts']:.4g} counts per spectrum")
        self.stdout.write(self.style.SUCCESS(
            f"✓ Wrote synthetic fixtures ({train.n_rows} train, {test.n_rows} test, D={bins}) -> {out_dir}"
        ))
