"""Input validation helpers used across the package."""
import numpy as np

from .exceptions import InvalidInputError


def as_points(x, dim):
    """Coerce ``x`` to a float array of shape ``(..., dim)``.

    Scalars and 1-d arrays are accepted when ``dim == 1``; a 1-d array of
    length ``dim`` is read as a single point.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise InvalidInputError(f"scalar point given for dimension {dim}")
        return arr.reshape(1)
    if arr.shape[-1] != dim:
        if dim == 1:
            return arr[..., np.newaxis]
        raise InvalidInputError(
            f"point has trailing dimension {arr.shape[-1]}, expected {dim}")
    return arr


def as_vector(y, dim):
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.size != dim:
        raise InvalidInputError(f"vector has length {arr.size}, expected {dim}")
    return arr


def as_path_array(values, name="path"):
    """Return ``values`` as ``(n_paths, n_steps + 1, d)``.

    A 1-d array is one scalar path; a 2-d array is read as ``(n_steps + 1, d)``
    unless ``d`` would exceed the number of time points, in which case it is
    an ensemble of scalar paths ``(n_paths, n_steps + 1)``.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        return arr[np.newaxis, :, np.newaxis]
    if arr.ndim == 2:
        if arr.shape[1] > arr.shape[0]:
            return arr[:, :, np.newaxis]
        return arr[np.newaxis]
    if arr.ndim == 3:
        return arr
    raise InvalidInputError(f"{name} must have at most 3 dimensions, got {arr.ndim}")


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise InvalidInputError(
            f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}")


def check_decreasing(schedule, name):
    s = np.asarray(schedule, dtype=float).reshape(-1)
    if s.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise InvalidInputError(f"{name} must be positive and strictly decreasing")
    return s


def geometric_schedule(start=1.0, terms=12):
    """``start * 2**-k`` for ``k = 0 .. terms - 1``."""
    return start * 2.0 ** -np.arange(terms)
