"""Dense float64 linear algebra used throughout the package.

Matrices and vectors are plain ``numpy.ndarray`` objects (2-D and 1-D,
``float64``). The helpers here add the shape and finiteness checks the rest
of the code relies on, a one-sided Jacobi singular value routine, and the
seeded generators used for every random draw.
"""
from __future__ import annotations

import math

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


def as_matrix(x, name="matrix"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def as_vector(x, name="vector"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def outer(b, a):
    """Rank-one matrix ``b a^T`` with shape ``(len(b), len(a))``."""
    return np.outer(as_vector(b, "b"), as_vector(a, "a"))


def fro_norm(m):
    return float(np.sqrt(np.sum(np.square(as_matrix(m)))))


def rank_one_fro_norm(b, a):
    """Frobenius norm of ``outer(b, a)`` without forming the product.

    ``||b a^T||_F = ||b||_2 * ||a||_2``.
    """
    return float(np.linalg.norm(as_vector(b, "b")) * np.linalg.norm(as_vector(a, "a")))


def singular_values(m, tol=1e-12, max_sweeps=100):
    """Singular values of ``m`` in non-increasing order.

    One-sided (Hestenes) Jacobi: plane rotations orthogonalize the columns of
    a working copy until every pair satisfies
    ``|c_i . c_j| <= tol * ||c_i|| ||c_j||``; the column norms are then the
    singular values. Wide inputs are transposed first, so ``min(rows, cols)``
    values are returned.
    """
    work = as_matrix(m).copy()
    if work.shape[0] < work.shape[1]:
        work = work.T.copy()
    # scale to unit max entry so squared norms neither underflow nor overflow
    scale = float(np.max(np.abs(work))) if work.size else 0.0
    if scale == 0.0:
        return np.zeros(work.shape[1])
    work /= scale
    k = work.shape[1]
    if k > 1:
        for _ in range(max_sweeps):
            rotated = False
            for i in range(k - 1):
                for j in range(i + 1, k):
                    ci = work[:, i]
                    cj = work[:, j]
                    alpha = ci @ ci
                    beta = cj @ cj
                    gamma = ci @ cj
                    if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0.0:
                        continue
                    zeta = float(beta - alpha) / (2.0 * float(gamma))
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                    if t == 0.0:
                        continue
                    rotated = True
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = c * t
                    new_i = c * ci - s * cj
                    new_j = s * ci + c * cj
                    work[:, i] = new_i
                    work[:, j] = new_j
            if not rotated:
                break
    sigma = np.sqrt(np.sum(np.square(work), axis=0))
    return np.sort(sigma)[::-1] * scale


def make_rng(seed):
    """Counter-based (Philox) generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn_rngs(seed, count):
    """``count`` independent Philox streams derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def kaiming_init(rng, fan_in, length):
    """Kaiming-normal vector: i.i.d. N(0, 2 / fan_in) entries."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.standard_normal(int(length)) * math.sqrt(2.0 / fan_in)
