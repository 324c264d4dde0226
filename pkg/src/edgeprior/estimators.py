"""scikit-learn style wrappers so the image steps compose in a ``Pipeline``.

``X`` is always a sequence of images: :class:`RasterImage` objects, uint8
arrays, or paths to PNG/JPEG files.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import imaging
from .imaging import CannyParams, RasterImage
from .repair import repair_loop
from .vlm_client import (EDGEFLOW, FixtureKey, GenerationParams, build_bundle, extract_code_block,
                         generate)

__all__ = [
    "check_images",
    "FlowchartPreprocessor",
    "CannyEdgeDetector",
    "NoiseProfiler",
    "FlowchartConverter",
]


def check_images(X) -> List[RasterImage]:
    """Coerce a batch of images; a single image is rejected to avoid silent row iteration."""
    single_array = isinstance(X, np.ndarray) and (X.ndim == 2 or (X.ndim == 3 and X.shape[-1] in (3, 4)))
    if isinstance(X, (RasterImage, str, Path)) or single_array:
        raise ValueError("expected a sequence of images, got a single image")
    out = []
    for item in X:
        if isinstance(item, RasterImage):
            out.append(item)
        elif isinstance(item, (str, Path)):
            out.append(imaging.read_image(item))
        elif isinstance(item, imaging.EdgeMap):
            out.append(item.to_raster())
        else:
            out.append(RasterImage(np.asarray(item)))
    if not out:
        raise ValueError("empty image batch")
    return out


class FlowchartPreprocessor(TransformerMixin, BaseEstimator):
    """Alpha compositing onto white followed by adaptive downscaling."""

    def __init__(self, max_dim: int = 4000):
        self.max_dim = max_dim

    def fit(self, X, y=None):
        if self.max_dim < 1:
            raise ValueError("max_dim must be >= 1")
        self.n_images_seen_ = len(check_images(X))
        return self

    def transform(self, X) -> List[RasterImage]:
        check_is_fitted(self, "n_images_seen_")
        return [imaging.preprocess(img, self.max_dim) for img in check_images(X)]


class CannyEdgeDetector(TransformerMixin, BaseEstimator):
    def __init__(self, low: float = 100, high: float = 200, aperture: int = 3):
        self.low = low
        self.high = high
        self.aperture = aperture

    @classmethod
    def from_config(cls, name: str) -> "CannyEdgeDetector":
        p = imaging.canny_config(name)
        return cls(p.low, p.high, p.aperture)

    def fit(self, X=None, y=None):
        self.params_ = CannyParams(self.low, self.high, self.aperture)
        return self

    def transform(self, X) -> List[imaging.EdgeMap]:
        check_is_fitted(self, "params_")
        return [imaging.canny(img, self.params_) for img in check_images(X)]


class NoiseProfiler(TransformerMixin, BaseEstimator):
    """Maps each image to ``[background_noise_sigma, color_instability]``."""

    def fit(self, X=None, y=None):
        self.feature_names_out_ = np.array(["background_noise_sigma", "color_instability"])
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "feature_names_out_")
        rows = []
        for img in check_images(X):
            rep = imaging.noise_report(img)
            rows.append([rep.background_noise_sigma, rep.color_instability_mu])
        return np.asarray(rows, dtype=np.float64)

    def get_feature_names_out(self, input_features=None):
        return self.feature_names_out_


class FlowchartConverter(BaseEstimator):
    """Image to validated Mermaid code.

    ``predict`` runs preprocessing, the optional edge map, one model call and
    the repair loop per image, returning the final code strings. Invalid
    results come back as they are; inspect ``last_outcomes_`` for validity.
    """

    def __init__(self, endpoint=None, fixer=None, condition: str = EDGEFLOW,
                 canny: Optional[CannyParams] = None, generation: Optional[GenerationParams] = None,
                 max_dim: int = 4000):
        self.endpoint = endpoint
        self.fixer = fixer
        self.condition = condition
        self.canny = canny
        self.generation = generation
        self.max_dim = max_dim

    def fit(self, X=None, y=None):
        if self.endpoint is None:
            raise ValueError("an endpoint is required")
        self.canny_ = self.canny or imaging.canny_config("C3")
        self.generation_ = self.generation or GenerationParams()
        return self

    def predict(self, X, ids=None, run: int = 1) -> List[str]:
        check_is_fitted(self, "canny_")
        images = check_images(X)
        ids = list(ids) if ids is not None else [str(i) for i in range(len(images))]
        codes, outcomes = [], []
        for fid, img in zip(ids, images):
            prep = imaging.preprocess(img, self.max_dim)
            edges = imaging.canny(prep, self.canny_) if self.condition == EDGEFLOW else None
            bundle = build_bundle(self.condition, prep, edges)
            key = FixtureKey(fid, self.condition, run)
            reply = generate(bundle, self.generation_, self.endpoint, key=key)
            outcome = repair_loop(extract_code_block(reply.raw_text), self.fixer, key=key,
                                  params=self.generation_)
            outcomes.append(outcome)
            codes.append(outcome.final_code)
        self.last_outcomes_ = outcomes
        return codes
