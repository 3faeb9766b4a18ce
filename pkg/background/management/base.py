"""
Shared plumbing for the background management commands.

Option precedence: explicit flags > --config JSON file > command defaults.
Exit codes: 0 success, 1 user or configuration error, 2 numerical failure.
"""
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Tuple

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import BackgroundError, ParameterError
from ..services import manifest_service

logger = logging.getLogger(__name__)

USAGE_ERROR = 1
NUMERICAL_ERROR = 2


def _one_line(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {' '.join(str(exc).split())}"


def coerce(name: str, value, cast=int):
    """Cast an option value, reporting failures as ParameterError."""
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ParameterError(f"option {name} has invalid value {value!r}") from None


def parse_number_list(name: str, value, cast=float) -> list:
    """'1,2,5', '1-20' (inclusive, step 1) or a JSON list -> list of numbers."""
    try:
        if isinstance(value, (list, tuple)):
            return [cast(v) for v in value]
        text = str(value).strip()
        if '-' in text and ',' not in text:
            start, _, stop = text.partition('-')
            start, stop = cast(start), cast(stop)
            return [cast(start + i) for i in range(int(stop - start) + 1)]
        return [cast(part) for part in text.split(',') if part.strip()]
    except (TypeError, ValueError):
        raise ParameterError(f"option {name} has invalid list {value!r}") from None


def overlay(base, **values) -> Dict[str, Any]:
    """Copy of a recorded option dict with every non-None value laid over it."""
    if base is not None and not isinstance(base, dict):
        raise ParameterError(f"recorded options must be a JSON object, got {base!r}")
    merged = dict(base or {})
    merged.update({key: value for key, value in values.items() if value is not None})
    return merged


class SpectraCommand(BaseCommand):
    """
    Base for commands whose options may come from flags or a JSON config file.

    Subclasses declare `defaults` (every option the command understands, with
    None for options that have no default) and `required`, and implement run().
    Flags must use default=None so an omitted flag never masks a file value.
    """

    requires_system_checks = []
    defaults: Dict[str, Any] = {}
    required: Tuple[str, ...] = ()

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            help='JSON file supplying any option (kebab- or snake-case keys); '
                 'a run manifest replays that run',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        raise NotImplementedError

    def run_from_argv(self, argv):
        self._options_parsed = False
        try:
            super().run_from_argv(argv)
        except SystemExit as exc:
            # argparse exits with 2 on malformed flags; that is a usage error here
            if exc.code == 2 and not self._options_parsed:
                sys.exit(USAGE_ERROR)
            raise

    def execute(self, *args, **options):
        self._options_parsed = True
        return super().execute(*args, **options)

    def handle(self, *args, **options):
        self.verbosity = options.get('verbosity', 1)
        try:
            params = self.resolve_options(options)
            self.run(params)
        except CommandError:
            raise
        except BackgroundError as exc:
            raise CommandError(_one_line(exc), returncode=exc.exit_code) from exc
        except OSError as exc:
            raise CommandError(_one_line(exc), returncode=USAGE_ERROR) from exc
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.exception("Numerical failure")
            raise CommandError(_one_line(exc), returncode=NUMERICAL_ERROR) from exc

    # -- options ----------------------------------------------------------

    def load_config_file(self, path) -> Dict[str, Any]:
        try:
            payload = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as exc:
            raise CommandError(f"ConfigError: cannot read {path}: {exc}", returncode=USAGE_ERROR)
        if not isinstance(payload, dict):
            raise CommandError(f"ConfigError: {path} must hold a JSON object", returncode=USAGE_ERROR)
        if 'command' in payload and isinstance(payload.get('config'), dict):
            payload = payload['config']
        values = {str(key).replace('-', '_'): value for key, value in payload.items()}
        unknown = sorted(set(values) - set(self.defaults))
        if unknown:
            raise CommandError(
                f"ConfigError: {path} sets unknown option(s) {', '.join(unknown)}",
                returncode=USAGE_ERROR,
            )
        return values

    def resolve_options(self, options: Dict[str, Any]) -> Dict[str, Any]:
        params = dict(self.defaults)
        if options.get('config'):
            params.update(self.load_config_file(options['config']))
        params.update({
            key: value for key, value in options.items()
            if key in self.defaults and value is not None
        })
        missing = [key for key in self.required if params.get(key) is None]
        if missing:
            flags = ', '.join('--' + key.replace('_', '-') for key in missing)
            raise CommandError(f"UsageError: missing required option(s) {flags}", returncode=USAGE_ERROR)
        return params

    def run(self, params: Dict[str, Any]) -> None:
        raise NotImplementedError

    # -- outputs ----------------------------------------------------------

    def write_manifest(self, params: Dict[str, Any], inputs: Iterable[str], output,
                       outputs: Iterable = (), master_seed=None) -> Path:
        manifest = manifest_service.build_manifest(
            command=self.command_name,
            config=params,
            inputs=inputs,
            master_seed=master_seed,
            outputs=outputs or [output],
        )
        return manifest_service.write_manifest(manifest, manifest_service.manifest_path_for(output))

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]
