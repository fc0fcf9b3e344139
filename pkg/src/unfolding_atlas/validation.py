"""Input validation helpers shared by functions and estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import DomainError, ParameterShapeError


def as_point(z, name: str = "z") -> np.ndarray:
    """Return a finite float64 array of shape (2,)."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.shape != (2,):
        raise ParameterShapeError(f"{name} must be a planar point, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} is not finite: {arr}")
    return arr


def as_points(z, name: str = "points") -> np.ndarray:
    """Return a finite float64 array of shape (m, 2); a single point becomes (1, 2)."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ParameterShapeError(f"{name} must have shape (m, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def as_params(p, names: Sequence[str]) -> np.ndarray:
    """Coerce a ParamPoint, mapping or sequence to a float64 vector matching ``names``."""
    coords = getattr(p, "coords", p)
    if isinstance(coords, dict):
        missing = [k for k in names if k not in coords]
        if missing or len(coords) != len(names):
            raise ParameterShapeError(f"parameter keys {sorted(coords)} do not match {list(names)}")
        coords = [coords[k] for k in names]
    arr = np.atleast_1d(np.asarray(coords, dtype=np.float64))
    if arr.ndim != 1 or arr.size != len(names):
        raise ParameterShapeError(
            f"expected {len(names)} parameters {list(names)}, got {arr.size}"
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError("parameters must be finite")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_int(value, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value
