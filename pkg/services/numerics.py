"""Dense float64 helpers shared by every other service.

Matrices are plain ``numpy.ndarray`` objects in float64, row-major (C order).
Randomness always flows through a ``numpy.random.Generator`` backed by PCG64,
so an integer seed replays the same draws on every platform.
"""

from typing import Callable, Optional, Tuple

import numpy as np

from utils.errors import DomainError, NumericError, ShapeError

Matrix = np.ndarray
RngState = np.random.Generator

SYMMETRY_TOLERANCE = 1e-10


def make_rng(seed: Optional[int] = None) -> RngState:
    """Seeded PCG64 generator; OS entropy is used only when seed is None."""
    if seed is None:
        return np.random.Generator(np.random.PCG64())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def as_matrix(values, name: str = "matrix") -> Matrix:
    m = np.array(values, dtype=np.float64, order="C")
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def ensure_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        bad = int(np.flatnonzero(~np.isfinite(np.ravel(m)))[0])
        raise NumericError(f"{name} has a non-finite entry at flat index {bad}", component=bad)
    return m


def matmul(a, b) -> Matrix:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return ensure_finite(a @ b, "product")


def uniform(rng: RngState, lo: float, hi: float, n: int) -> np.ndarray:
    """n draws in [lo, hi)."""
    if not lo < hi:
        raise DomainError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
    if n < 0:
        raise DomainError(f"draw count must be >= 0, got {n}")
    draws = lo + (hi - lo) * rng.random(int(n))
    # the scaled draw can round up to hi
    return np.minimum(draws, np.nextafter(hi, lo))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at x."""
    if not h > 0:
        raise DomainError(f"step h must be > 0, got {h}")
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        up = float(f(x + step))
        down = float(f(x - step))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"function is not finite around component {k}", component=k)
        grad[k] = (up - down) / (2.0 * h)
    return grad


def sym_eigen(m) -> Tuple[np.ndarray, Matrix]:
    """Eigenpairs of a symmetric matrix sorted by |eigenvalue|, largest first.

    Eigenvectors are the columns of the returned matrix.
    """
    m = as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"sym_eigen needs a square matrix, got {m.shape[0]}x{m.shape[1]}")
    ensure_finite(m, "m")
    if not np.allclose(m, m.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
        raise DomainError("sym_eigen needs a symmetric matrix")
    values, vectors = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(-np.abs(values), kind="stable")
    return values[order], np.ascontiguousarray(vectors[:, order])


def spawn_rngs(seed, count: int):
    """Independent child generators derived from one seed (int or int sequence)."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]
