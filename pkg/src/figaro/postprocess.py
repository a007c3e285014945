"""Turning R0 into the canonical triangular factor R, plus Q recovery and a
Householder reference implementation."""

from __future__ import annotations

import csv
from collections.abc import Iterable, Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import OutAccumulator
from .errors import RankError
from .relational import JoinTree, Relation, iter_join_chunks


@dataclass
class TriangularFactor:
    """Square upper-triangular factor; ``zero_diagonal`` lists rank-deficient rows."""

    matrix: np.ndarray
    zero_diagonal: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class WorkerPartition:
    ranges: tuple[range, ...]

    @classmethod
    def even(cls, rows: int, workers: int) -> "WorkerPartition":
        workers = max(1, min(workers, max(rows, 1)))
        bounds = np.linspace(0, rows, workers + 1).astype(int)
        return cls(tuple(range(bounds[k], bounds[k + 1]) for k in range(workers)))

    def merge_schedule(self) -> list[list[tuple[int, int]]]:
        """Rounds of the balanced pairwise tournament over the worker partials."""
        rounds, alive = [], list(range(len(self.ranges)))
        while len(alive) > 1:
            pairs = [(alive[k], alive[k + 1]) for k in range(0, len(alive) - 1, 2)]
            rounds.append(pairs)
            alive = alive[0::2]
        return rounds


def _rotate(M: np.ndarray, top: np.ndarray, bot: np.ndarray, col: int) -> None:
    """Zero ``M[bot, col]`` against ``M[top, col]`` for every pair at once."""
    a, b = M[top, col], M[bot, col]
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.hypot(a, b)
        sgn = np.where(a < 0, -1.0, 1.0)
        c = np.where(b == 0, 1.0, np.abs(a) / h)
        s = np.where(b == 0, 0.0, -sgn * b / h)
    r = np.where(b == 0, a, sgn * h)
    upper, lower = M[top, col + 1:], M[bot, col + 1:]
    M[top, col + 1:] = upper * c[:, None] - lower * s[:, None]
    M[bot, col + 1:] = upper * s[:, None] + lower * c[:, None]
    M[top, col] = r
    M[bot, col] = 0.0


def triangularize_block(B) -> np.ndarray:
    """Reduce ``B`` to row-echelon upper-trapezoidal form with Givens rotations.

    Columns are processed left to right. In column ``j`` the rows below the
    current pivot row that are nonzero in ``j`` are eliminated in a pairwise
    tree, each round rotating disjoint row pairs at once. Rows that end up
    exactly zero are dropped, so at most ``min(m, n)`` rows remain and
    ``B^T B`` is preserved.
    """
    M = np.array(B, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("expected a 2-d block")
    m, n = M.shape
    p = 0
    for j in range(n):
        if p >= m:
            break
        below = np.flatnonzero(M[p + 1:, j]) + p + 1
        if len(below) == 0:
            if M[p, j] != 0:
                p += 1
            continue
        cand = np.concatenate(([p], below))
        while len(cand) > 1:
            half = len(cand) // 2
            _rotate(M, cand[0:2 * half:2], cand[1:2 * half:2], j)
            cand = cand[0::2]
        p += 1
    return M[:p] + 0.0


def _to_square(E: np.ndarray, n: int) -> TriangularFactor:
    R = np.zeros((n, n))
    for row in E:
        nz = np.flatnonzero(row)
        if len(nz):
            R[nz[0]] = row
    zero = tuple(int(k) for k in np.flatnonzero(np.diag(R) == 0))
    return TriangularFactor(R, zero)


def thin_merge(blocks: Sequence[np.ndarray], workers: int = 1) -> TriangularFactor:
    """Triangularize a stack of row blocks: split the rows among ``workers``,
    reduce each share, then merge the partial factors in a pairwise tournament.
    The result is not sign-normalized."""
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if not blocks:
        raise ValueError("thin_merge needs at least one block")
    n = blocks[0].shape[1]
    if any(b.shape[1] != n for b in blocks):
        raise ValueError("all blocks must have the same number of columns")
    stacked = np.vstack(blocks)
    part = WorkerPartition.even(stacked.shape[0], workers)

    def run(fn, items):
        if workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    partials = run(lambda r: triangularize_block(stacked[r.start:r.stop]), list(part.ranges))
    partials = dict(enumerate(partials))
    for pairs in part.merge_schedule():
        merged = run(lambda ab: triangularize_block(np.vstack([partials[ab[0]], partials[ab[1]]])),
                     pairs)
        for (a, b), res in zip(pairs, merged):
            partials[a] = res
            del partials[b]
    (final,) = partials.values()
    return _to_square(final, n)


def normalize_signs(R) -> TriangularFactor:
    """Negate rows with a negative diagonal entry; zero-diagonal rows are flagged."""
    M = np.array(R.matrix if isinstance(R, TriangularFactor) else R, dtype=np.float64)
    d = np.diag(M)
    M[d < 0] *= -1.0
    M += 0.0
    zero = tuple(int(k) for k in np.flatnonzero(d == 0))
    return TriangularFactor(M, zero)


def householder_oracle(M) -> TriangularFactor:
    """Sign-normalized R from textbook Householder QR of a dense matrix."""
    R = np.array(M, dtype=np.float64)
    m, n = R.shape
    for k in range(min(m, n)):
        x = R[k:, k]
        norm = np.linalg.norm(x)
        if norm == 0:
            continue
        alpha = -norm if x[0] >= 0 else norm
        v = x.copy()
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0:
            continue
        v /= vn
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        R[k, k] = alpha
        R[k + 1:, k] = 0.0
    out = np.zeros((n, n))
    rows = min(m, n)
    out[:rows] = np.triu(R[:rows])
    return normalize_signs(out)


def postprocess(r0: OutAccumulator, engine: str = "thin", workers: int = 1) -> TriangularFactor:
    """Triangularize each R0 block, then merge all rows into the final R."""
    n = r0.width
    if engine == "householder":
        return householder_oracle(r0.to_dense())
    if engine != "thin":
        raise ValueError(f"unknown post-processing engine {engine!r}")
    rows = []
    for start, block in r0.blocks:
        tri = triangularize_block(block)
        if tri.shape[0]:
            full = np.zeros((tri.shape[0], n))
            full[:, start:start + tri.shape[1]] = tri
            rows.append(full)
    if not rows:
        return TriangularFactor(np.zeros((n, n)), tuple(range(n)))
    return normalize_signs(thin_merge(rows, workers))


def recover_q(relations: Mapping[str, Relation], tree: JoinTree, R,
              chunk_rows: int = 1 << 16) -> Iterator[np.ndarray]:
    """Stream ``Q = A R^-1`` chunk by chunk without materializing ``A``.

    Rows come out in the enumeration order of :func:`iter_join_chunks`.
    """
    M = np.asarray(R.matrix if isinstance(R, TriangularFactor) else R, dtype=np.float64)
    d = np.abs(np.diag(M))
    if np.any(d <= 1e-12 * np.linalg.norm(M)):
        raise RankError("R is singular to working precision; Q = A R^-1 is undefined")

    def produce():
        for chunk in iter_join_chunks(relations, tree, chunk_rows):
            yield solve_triangular(M, chunk.T, trans="T", lower=False).T

    return produce()


def write_q_csv(path, chunks: Iterable[np.ndarray], columns: Sequence[str]) -> int:
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for chunk in chunks:
            writer.writerows([[format(x, ".17g") for x in row] for row in chunk])
            rows += len(chunk)
    return rows


def write_r_csv(path, R, columns: Sequence[str]) -> None:
    """Header of qualified column names, then the rows of R (17 significant
    digits, strict lower triangle as a literal 0)."""
    M = R.matrix if isinstance(R, TriangularFactor) else np.asarray(R)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i, row in enumerate(M):
            writer.writerow(["0" if j < i else format(x + 0.0, ".17g") for j, x in enumerate(row)])


def read_r_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    return header, np.array(rows).reshape(len(rows), len(header))
