"""Small argument-checking helpers used by the public entry points."""

import numpy as np

from .errors import InvalidInputError


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")


def check_positive(value, name):
    if not value > 0:
        raise InvalidInputError(f"{name} must be positive, got {value!r}")


def check_nonnegative(value, name):
    if not value >= 0:
        raise InvalidInputError(f"{name} must be >= 0, got {value!r}")


def check_positive_int(value, name):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")


def check_choice(value, options, name):
    if value not in options:
        raise InvalidInputError(
            f"{name} must be one of {sorted(options)}, got {value!r}"
        )


def check_shape(arr, shape, name):
    if tuple(arr.shape) != tuple(shape):
        raise InvalidInputError(
            f"{name} must have shape {tuple(shape)}, got {tuple(arr.shape)}"
        )


def as_complex_array(data, name, ndim=None):
    """Coerce to a C-contiguous complex128 array, checking finiteness."""
    arr = np.ascontiguousarray(data, dtype=np.complex128)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-D, got {arr.ndim}-D")
    check_finite(arr, name)
    return arr


def as_float_array(data, name, ndim=None):
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-D, got {arr.ndim}-D")
    check_finite(arr, name)
    return arr
