"""
Model persistence and method dispatch shared by the commands and the sweep.
"""
import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError

from ..exceptions import ParameterError
from ..schemas import (
    EncodeOptions,
    FitOptions,
    GaussianPcaModel,
    Method,
    PoissonEpcaModel,
    ScoreKind,
    SpectraSet,
    background_model_adapter,
)
from . import gaussian_pca_service, poisson_epca_service

logger = logging.getLogger(__name__)

Model = Union[GaussianPcaModel, PoissonEpcaModel]


def fit_model(method: Method, train: SpectraSet, k: int,
              fit_opts: Optional[FitOptions] = None) -> Model:
    method = Method(method)
    if method == Method.GAUSSIAN:
        return gaussian_pca_service.fit_gaussian(train, k)
    return poisson_epca_service.fit_poisson(train, k, fit_opts)


def score_spectra(model: Model, spectra, encode_opts: Optional[EncodeOptions] = None,
                  kind: ScoreKind = ScoreKind.DEVIANCE) -> np.ndarray:
    """Reconstruction-error score for every row, whichever model type."""
    if isinstance(model, GaussianPcaModel):
        return gaussian_pca_service.score_gaussian_batch(model, spectra)
    return poisson_epca_service.score_poisson_batch(model, spectra, encode_opts, kind)


def save_model(model: Model, path) -> None:
    """JSON document; floats are written in shortest round-trip form."""
    Path(path).write_text(model.model_dump_json(indent=2) + '\n', encoding='utf-8')
    logger.info(f"Saved {model.type} model (k={model.k}) to {path}")


def load_model(path) -> Model:
    try:
        payload = json.loads(Path(path).read_text(encoding='utf-8'))
        return background_model_adapter.validate_python(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParameterError(f"{path}: not valid UTF-8 JSON: {exc}") from exc
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ParameterError(
            f"{path}: not a valid model file ({'.'.join(map(str, error['loc']))}: {error['msg']})"
        ) from exc
