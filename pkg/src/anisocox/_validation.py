"""Input coercion shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np

from .covariance import ModelSpec
from .geometry import MultiTypePattern, PointPattern, Window


def check_window(window):
    if window is None:
        return Window.unit()
    if isinstance(window, Window):
        return window
    if isinstance(window, dict):
        return Window.from_dict(window)
    w = np.asarray(window, dtype=float).ravel()
    if w.shape != (4,):
        raise ValueError("window must be a Window, a dict or (xmin, xmax, ymin, ymax)")
    return Window(*w)


def check_pattern(X, window=None, type_order=None) -> MultiTypePattern:
    """Coerce ``X`` to a multitype pattern.

    Accepts a ``MultiTypePattern``, a single ``PointPattern``, an ``(n, 2)``
    array of locations (one type) or an ``(n, 3)`` array of ``type, x, y``.
    """
    if isinstance(X, MultiTypePattern):
        return X
    w = check_window(window)
    if isinstance(X, PointPattern):
        return MultiTypePattern((X,), X.window)
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(f"expected an (n, 2) or (n, 3) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("pattern contains non-finite values")
    if arr.shape[1] == 2:
        return MultiTypePattern((PointPattern(arr, w, 1),), w)
    types = arr[:, 0]
    if np.any(types != np.round(types)):
        raise ValueError("type labels must be integers")
    return MultiTypePattern.from_arrays(types.astype(int), arr[:, 1:], w, type_order)


def check_model(model) -> ModelSpec:
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, dict):
        return ModelSpec.from_dict(model)
    raise TypeError(f"expected a ModelSpec or dict, got {type(model).__name__}")
