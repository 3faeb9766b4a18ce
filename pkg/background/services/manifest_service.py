"""
Reproducibility helpers: coordinate-hashed seeds, input digests and run manifests.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .. import __version__
from ..schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = '.manifest.json'


def derive_seed(master_seed: int, *coordinates: Any) -> int:
    """
    Seed for one unit of work: the first 8 bytes of
    sha256("master|coord1|coord2|...") as an unsigned integer below 2**63.

    Depends only on the coordinates, never on the order in which work runs.
    """
    key = '|'.join(str(part) for part in (master_seed, *coordinates))
    digest = hashlib.sha256(key.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big') & (2**63 - 1)


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with Path(path).open('rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            sha.update(chunk)
    return f'sha256:{sha.hexdigest()}'


def build_manifest(command: str, config: Dict[str, Any], inputs: Iterable[str] = (),
                   master_seed: Optional[int] = None, outputs: Iterable[str] = ()) -> RunManifest:
    return RunManifest(
        command=command,
        config=config,
        input_hashes={str(path): file_digest(path) for path in inputs if path},
        master_seed=master_seed,
        tool_version=__version__,
        outputs=[str(path) for path in outputs],
    )


def manifest_path_for(output) -> Path:
    """`scores.csv` -> `scores.csv.manifest.json`; a directory gets `manifest.json` inside."""
    output = Path(output)
    if output.is_dir():
        return output / 'manifest.json'
    return output.with_name(output.name + MANIFEST_SUFFIX)


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    payload = json.dumps(manifest.model_dump(mode='json'), indent=2, sort_keys=True)
    path.write_text(payload + '\n', encoding='utf-8')
    logger.info(f"Wrote run manifest {path}")
    return path


def load_manifest(path) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding='utf-8'))
