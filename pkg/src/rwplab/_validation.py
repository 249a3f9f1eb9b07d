"""Input validation helpers built on top of scikit-learn's checks."""

from numbers import Integral, Real

import numpy as np
from sklearn.utils import check_array

from .exceptions import InputError


def as_vector(x, length=None, name="x"):
    """Return ``x`` as a finite 1-d float64 array, optionally of a given length."""
    try:
        arr = check_array(x, ensure_2d=False, dtype=np.float64, copy=False,
                          ensure_all_finite=True, input_name=name)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{name}: {exc}") from exc
    arr = arr.reshape(-1) if arr.ndim == 2 and 1 in arr.shape else arr
    if arr.ndim != 1:
        raise InputError(f"{name} must be a vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise InputError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def as_matrix(A, name="A"):
    try:
        return check_array(A, dtype=np.float64, ensure_all_finite=True,
                           input_name=name)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{name}: {exc}") from exc


def check_positive(value, name, *, strict=True, integer=False):
    kind = Integral if integer else Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise InputError(f"{name} must be {'an integer' if integer else 'a real number'}, "
                         f"got {value!r}")
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise InputError(f"{name} must be {bound}, got {value!r}")
    return int(value) if integer else float(value)
