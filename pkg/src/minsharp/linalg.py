"""Dense float64 matrix helpers and seeded randomness.

Everything downstream works on plain numpy arrays: matrices are 2-D
float64 in row-major (C) order, vectors are 1-D float64.  The wrappers
here add the shape validation and the handful of identities the rest of
the package leans on; anything heavier is plain numpy.

All reductions run in numpy's sequential element order, so results are
reproducible run to run on the same build.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray
Vector = np.ndarray

# Salts for deriving independent random streams from one base seed
# (seed XOR salt).  Values are the splitmix64 mixing constants.
SALT_INIT = 0x9E3779B97F4A7C15
SALT_SHUFFLE = 0xBF58476D1CE4E5B9
SALT_CORRUPT = 0x94D049BB133111EB
SALT_DATA = 0xD6E8FEB86659FD93

_MASK64 = 0xFFFFFFFFFFFFFFFF


class Rng:
    """Deterministic random stream (PCG64 behind numpy's Generator).

    The bit generator is pinned to PCG64, so one seed yields one stream
    on every platform.  Independent substreams come from ``split``,
    which XORs the seed with a fixed salt; concurrent consumers must
    each own their own Rng.
    """

    __slots__ = ("seed", "_gen")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, salt: int) -> "Rng":
        return Rng(self.seed ^ (int(salt) & _MASK64))

    def normal(self, shape, stddev: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * stddev

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def as_matrix(data) -> Matrix:
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def as_vector(data) -> Vector:
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {a.shape}")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.shape[0]}x{a.shape[1]} times "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def frobenius_sq(a: np.ndarray) -> float:
    """Sum of squared entries (the squared Frobenius norm)."""
    return float(np.sum(a * a))


def outer(x: Vector, y: Vector) -> Matrix:
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError(
            f"outer expects two vectors, got shapes {x.shape} and {y.shape}"
        )
    return np.outer(x, y)


def transpose(a: Matrix) -> Matrix:
    return np.ascontiguousarray(a.T)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * float(c)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def square(a: np.ndarray) -> np.ndarray:
    """Elementwise square (Hadamard self-product)."""
    return a * a


def kron(a: Matrix, b: Matrix) -> Matrix:
    return np.kron(a, b)


def trace(a: Matrix) -> float:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"trace needs a square matrix, got shape {a.shape}")
    return float(np.trace(a))


def gaussian_fill(rng: Rng, rows: int, cols: int, stddev: float) -> Matrix:
    return rng.normal((rows, cols), stddev)
