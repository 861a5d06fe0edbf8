"""Input validation helpers shared by estimators, metrics, and the CLI."""

import numpy as np


def check_windows(X, height, width):
    """Coerce X to a (n, height, width) float array of feature windows.

    Accepts a single (height, width) window or a stack of them. Rejects
    non-finite values and wrong spatial dimensions.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"windows must be (n, {height}, {width}) or ({height}, {width}); got ndim={X.ndim}")
    if X.shape[1] != height:
        raise ValueError(f"window height {X.shape[1]} != expected {height}")
    if X.shape[2] != width:
        raise ValueError(f"window width {X.shape[2]} != expected {width}")
    if X.dtype.kind != "f":
        X = X.astype(np.float64)
    if not np.isfinite(X).all():
        raise ValueError("windows contain non-finite values")
    return X


def check_labels(y, n_classes, n=None):
    """Coerce y to int64 labels in [0, n_classes)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got ndim={y.ndim}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} samples")
    if y.dtype.kind not in "iu":
        if not np.all(y == y.astype(np.int64)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    return y


def check_posteriors(p, n_classes=None, atol=1e-6):
    """Validate a posterior vector or row matrix: nonnegative, rows sum to 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim not in (1, 2):
        raise ValueError(f"posteriors must be 1-d or 2-d, got ndim={p.ndim}")
    if n_classes is not None and p.shape[-1] != n_classes:
        raise ValueError(f"posterior length {p.shape[-1]} != {n_classes} classes")
    if np.any(p < 0):
        raise ValueError("posterior has negative entries")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ValueError("posterior rows do not sum to 1")
    return p


def check_unit_interval(name, value):
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return v


def check_mixture_weights(weights, n=None, atol=1e-9):
    """Nonnegative weights summing to 1."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("mixture weights must be 1-d")
    if n is not None and w.shape[0] != n:
        raise ValueError(f"expected {n} weights, got {w.shape[0]}")
    if np.any(w < 0):
        raise ValueError("mixture weights must be nonnegative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"mixture weights sum to {w.sum()}, not 1")
    return w


def check_odd(name, value):
    v = int(value)
    if v < 1 or v % 2 == 0:
        raise ValueError(f"{name} must be odd and positive, got {value}")
    return v
