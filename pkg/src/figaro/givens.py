"""Givens rotation primitives and the (generalized) head/tail block transforms.

A head/tail pair is the closed form of a fixed sequence of Givens rotations
applied to a block whose rows share a common (possibly scaled) prefix: the head
is the single surviving row, the tail the residual rows. Both are computed with
one running prefix sum, so a block of ``m x n`` costs ``O(mn)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GivensCoeffs:
    c: float
    s: float
    r: float


def givens_coeffs(a: float, b: float) -> GivensCoeffs:
    """Rotation that maps ``(a, b)`` to ``(r, 0)``.

    ``c = |a|/h``, ``s = -sign(a) b/h`` and ``r = sign(a) h`` with
    ``h = hypot(a, b)`` and ``sign(0) = +1``. For ``b == 0`` the identity is
    returned. NaN inputs propagate into all three fields.
    """
    if b == 0:
        return GivensCoeffs(1.0, 0.0, float(a))
    h = math.hypot(a, b)
    sgn = -1.0 if a < 0 else 1.0
    return GivensCoeffs(abs(a) / h, -sgn * b / h, sgn * h)


def apply_givens(M: np.ndarray, i: int, j: int, g: GivensCoeffs) -> np.ndarray:
    """Rotate rows ``i`` and ``j`` of ``M`` in place and return ``M``."""
    m = M.shape[0]
    if i == j:
        raise IndexError("rotation rows must differ")
    if not (-m <= i < m and -m <= j < m):
        raise IndexError(f"row index out of range for a matrix with {m} rows")
    top = M[i].copy()
    bot = M[j]
    M[i] = top * g.c - bot * g.s
    M[j] = top * g.s + bot * g.c
    return M


class WeightVector:
    """Strictly positive row weights with cached running norms."""

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("weights must be a vector")
        if not np.all(v > 0):
            raise ValueError("weights must be strictly positive")
        self.values = v

    def __len__(self):
        return len(self.values)

    @cached_property
    def running_norms(self) -> np.ndarray:
        """``norms[j] = ||v[0..j]||``."""
        return np.sqrt(np.cumsum(self.values * self.values))

    @property
    def norm(self) -> float:
        return float(self.running_norms[-1])


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    return A


def head_and_tail(A) -> tuple[np.ndarray, np.ndarray]:
    A = _as_matrix(A)
    m = A.shape[0]
    if m == 0:
        raise ValueError("head/tail of an empty matrix")
    prefix = np.cumsum(A, axis=0)
    head = prefix[-1:] / np.sqrt(m)
    j = np.arange(1, m, dtype=np.float64)[:, None]
    rj = np.sqrt(j)
    tail = (rj * A[1:] - prefix[:-1] / rj) / np.sqrt(j + 1.0)
    return head, tail


def head(A) -> np.ndarray:
    """``H(A) = (1/sqrt(m)) * sum_i A[i]`` as a ``1 x n`` row."""
    return head_and_tail(A)[0]


def tail(A) -> np.ndarray:
    """``T(A)[j] = (sqrt(j) A[j+1] - (A[1]+...+A[j]) / sqrt(j)) / sqrt(j+1)``."""
    return head_and_tail(A)[1]


def _weights(v, m: int) -> WeightVector:
    w = v if isinstance(v, WeightVector) else WeightVector(v)
    if len(w) != m:
        raise ValueError(f"weight vector has length {len(w)}, matrix has {m} rows")
    return w


def generalized_head_and_tail(A, v) -> tuple[np.ndarray, np.ndarray]:
    A = _as_matrix(A)
    m = A.shape[0]
    if m == 0:
        raise ValueError("head/tail of an empty matrix")
    w = _weights(v, m)
    vals, norms = w.values, w.running_norms
    prefix = np.cumsum(vals[:, None] * A, axis=0)
    head = prefix[-1:] / norms[-1]
    before = norms[:-1, None]
    tail = (before * A[1:] - vals[1:, None] * prefix[:-1] / before) / norms[1:, None]
    return head, tail


def generalized_head(A, v) -> np.ndarray:
    """``H(A, v) = (1/||v||) * sum_i v[i] A[i]``."""
    return generalized_head_and_tail(A, v)[0]


def generalized_tail(A, v) -> np.ndarray:
    return generalized_head_and_tail(A, v)[1]


def rotation_sequence_oracle(S, T, v=None, cap: int = 64) -> np.ndarray:
    """Apply the explicit rotation product ``G = R_m ... R_2`` to ``[S (x) v, T]``.

    ``R_i`` rotates rows 1 and i with ``sin = -v[i]/||v[1..i]||`` and
    ``cos = ||v[1..i-1]||/||v[1..i]||``. Dense ``m x m`` matrices are formed,
    so this is only meant for small ``m``.
    """
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    T = _as_matrix(T)
    m = T.shape[0]
    if S.shape[0] != 1:
        raise ValueError("S must have exactly one row")
    if m > cap:
        raise ValueError(f"rotation oracle limited to {cap} rows, got {m}")
    v = np.ones(m) if v is None else np.asarray(v, dtype=np.float64)
    if v.shape != (m,) or not np.all(v > 0):
        raise ValueError("v must be a positive vector with one entry per row of T")
    A = np.hstack([v[:, None] * S, T])
    G = np.eye(m)
    for i in range(1, m):
        prev = math.sqrt(float(np.sum(v[:i] ** 2)))
        cur = math.sqrt(float(np.sum(v[: i + 1] ** 2)))
        sin, cos = -v[i] / cur, prev / cur
        R = np.eye(m)
        R[0, 0] = R[i, i] = cos
        R[0, i] = -sin
        R[i, 0] = sin
        G = R @ G
    return G @ A
