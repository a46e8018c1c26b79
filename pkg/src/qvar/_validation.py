"""Input validation helpers shared by the public API."""

from __future__ import annotations

import numpy as np


class InvalidInputError(ValueError):
    """Shapes, multiplicities or dimensions do not agree."""


class DomainError(ValueError):
    """A point or sub-cube lies outside the field's domain."""


def as_float_array(x, *, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_points(points, n: int | None = None) -> np.ndarray:
    """Coerce a Q-tuple of vectors to a (Q, n) float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"points must be a non-empty (Q, n) array, got shape {arr.shape}")
    if n is not None and arr.shape[1] != n:
        raise InvalidInputError(f"expected n={n}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("points contain non-finite values")
    return arr


def check_matrix(A, n: int, m: int, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(A, dtype=float)
    if arr.ndim == 1 and n * m == arr.size:
        arr = arr.reshape(n, m)
    if arr.shape != (n, m):
        raise InvalidInputError(f"{name} must be {n}x{m}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_symmetric(A, size: int | None = None) -> np.ndarray:
    """Return the symmetric part of a square matrix."""
    arr = as_float_array(A, ndim=2, name="quadratic form")
    if arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"quadratic form must be square, got {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InvalidInputError(f"quadratic form must be {size}x{size}, got {arr.shape}")
    return 0.5 * (arr + arr.T)


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or int(value) < minimum:
        raise InvalidInputError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; every random draw in the package goes through here."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (list, tuple)):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(s) for s in seed])))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def vec_colmajor(M: np.ndarray) -> np.ndarray:
    """Column-major flattening of (..., n, m) matrices to (..., n*m)."""
    M = np.asarray(M)
    return np.swapaxes(M, -1, -2).reshape(M.shape[:-2] + (M.shape[-2] * M.shape[-1],))


def unvec_colmajor(v: np.ndarray, n: int, m: int) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (m, n)), -1, -2)


class ConfigurationError(InvalidInputError):
    """An integrand or experiment was configured without a required piece."""


class InvalidIntegrandError(InvalidInputError):
    """An integrand fails a structural requirement (e.g. permutation symmetry)."""
