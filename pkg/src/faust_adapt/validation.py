"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


def check_samples(X, raster_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce X to a float64 model-input array.

    2-d X is taken as (n_samples, n_features). When ``raster_shape`` is
    given, rows are reshaped to single-channel rasters (n, 1, H, W).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected 2-d sample array, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty sample array")
    if not np.isfinite(X).all():
        raise ValueError("samples contain non-finite values")
    if raster_shape is not None:
        h, w = raster_shape
        if X.shape[1] != h * w:
            raise ValueError(
                f"raster_shape {raster_shape} needs {h * w} features, got {X.shape[1]}"
            )
        return X.reshape(len(X), 1, h, w)
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(f"expected {n_samples} 1-d labels, got shape {y.shape}")
    return y
