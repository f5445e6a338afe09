"""Input validation helpers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError


def as_matrix(X, name: str = "input") -> np.ndarray:
    """Finite float64 2-D array; 1-D input becomes a single column."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    try:
        return check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc


def as_vector(x, name: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def unwrap_panel(X):
    """``(values, dates)`` from a :class:`PricePanel` or an array (dates None)."""
    from .panel import PricePanel

    if isinstance(X, PricePanel):
        return as_matrix(X.values, "panel"), X.dates
    return as_matrix(X, "panel"), None


def check_probability_vector(p, name: str = "probabilities", atol: float = 1e-8) -> np.ndarray:
    p = as_vector(p, name)
    if np.any(p < -atol) or abs(p.sum() - 1.0) > atol:
        raise ValidationError(f"{name} must be non-negative and sum to one")
    return np.clip(p, 0.0, None)


def check_transition(P, atol: float = 1e-10) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError("transition matrix must be square")
    if not np.all(np.isfinite(P)) or np.any(P < -atol) or np.any(P > 1 + atol):
        raise ValidationError("transition probabilities must lie in [0, 1]")
    if not np.allclose(P.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise ValidationError("transition matrix rows must sum to one")
    return np.clip(P, 0.0, 1.0)
