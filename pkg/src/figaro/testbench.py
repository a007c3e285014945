"""Random instances, the ground-truth accuracy harness and timing helpers."""

from __future__ import annotations

import statistics
import time
import timeit
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .core import compute_r0
from .counts import compute_counts
from .errors import EmptyJoinError, JoinSizeError
from .pipeline import figaro_qr
from .postprocess import normalize_signs
from .relational import (
    JoinTree,
    Relation,
    iter_join_chunks,
    materialize_join,
    semi_join_reduce,
    validate_join_tree,
)


@dataclass
class GroundTruthInstance:
    r_fixed: np.ndarray
    relations: dict[str, Relation]
    tree: JoinTree
    seed: int


@dataclass
class ErrorReport:
    relative_frobenius: float
    rows: int
    cols: int
    engine: str
    seed: int


def cartesian_product_database(p: int, q: int, n1: int, n2: int, seed: int = 0,
                               S: np.ndarray | None = None, T: np.ndarray | None = None):
    """Two key-less relations whose join is their Cartesian product."""
    rng = np.random.default_rng(seed)
    if S is None:
        S = rng.uniform(-3.0, 3.0, size=(p, n1))
    if T is None:
        T = rng.uniform(-3.0, 3.0, size=(q, n2))
    rels = {
        "S": Relation.from_rows("S", [], [f"s{k}" for k in range(S.shape[1])],
                                [()] * S.shape[0], S),
        "T": Relation.from_rows("T", [], [f"t{k}" for k in range(T.shape[1])],
                                [()] * T.shape[0], T),
    }
    return rels, JoinTree.from_term("S(T)", rels)


def generate_ground_truth(p: int, q: int, n1: int, n2: int, seed: int = 0) -> GroundTruthInstance:
    """Build ``S`` (p x n1) and ``T`` (q x n2) whose product has a known R block.

    ``S = Q_s R_fixed / sqrt(q)`` with orthonormal ``Q_s`` makes the leading
    Gram block ``q S^T S`` equal ``R_fixed^T R_fixed``; zero column sums in
    ``T`` make the cross block vanish, so the leading block of R is R_fixed.
    """
    if p < n1:
        raise ValueError(f"need p >= n1, got p={p}, n1={n1}")
    if q < 1:
        raise ValueError("need q >= 1")
    rng = np.random.default_rng(seed)
    r_fixed = np.triu(rng.uniform(-1.0, 1.0, size=(n1, n1)), 1)
    r_fixed[np.diag_indices(n1)] = rng.uniform(1.0, 2.0, size=n1)
    q_s, _ = np.linalg.qr(rng.standard_normal((p, n1)))
    S = q_s @ r_fixed / np.sqrt(q)
    T = rng.uniform(-3.0, 3.0, size=(q, n2))
    T -= T.mean(axis=0)
    T -= T.sum(axis=0) / q
    rels, tree = cartesian_product_database(p, q, n1, n2, S=S, T=T)
    return GroundTruthInstance(r_fixed, rels, tree, seed)


def relative_error(r_hat, r_fixed) -> float:
    """``||R_fixed - R_hat||_F / ||R_fixed||_F`` after sign normalization."""
    a, b = np.asarray(r_hat, dtype=np.float64), np.asarray(r_fixed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a, b = normalize_signs(a).matrix, normalize_signs(b).matrix
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def accuracy_experiment(rows: int, cols: int, seed: int = 0, engine: str = "thin",
                        threads: int = 1) -> ErrorReport:
    inst = generate_ground_truth(rows, rows, cols, cols, seed)
    res = figaro_qr(inst.relations, inst.tree, threads=threads, engine=engine)
    err = relative_error(res.R.matrix[:cols, :cols], inst.r_fixed)
    return ErrorReport(err, rows, cols, f"figaro-{engine}", seed)


def _attempt(rng, num_relations, max_rows, max_data_cols, key_domain):
    parent: list[int | None] = [None]
    keys: list[list[str]] = [[]]
    edge_attr: list[str | None] = [None]
    for i in range(1, num_relations):
        p = int(rng.integers(0, i))
        parent.append(p)
        mine = []
        if rng.random() < 0.9:
            attr = f"k{i}"
            mine.append(attr)
            keys[p].append(attr)
            edge_attr.append(attr)
        else:
            edge_attr.append(None)
        if edge_attr[p] is not None and rng.random() < 0.3:
            # the parent's own join attribute continues down: path stays connected
            mine.append(edge_attr[p])
        keys.append(mine)
    for i in range(num_relations):
        if rng.random() < 0.15:
            keys[i].append(f"p{i}")

    cols = [0] * num_relations
    budget = int(rng.integers(1, max_data_cols + 1))
    for _ in range(budget):
        cols[int(rng.integers(0, num_relations))] += 1

    rels = {}
    for i in range(num_relations):
        m = int(rng.integers(1, max_rows + 1))
        ks = [tuple(int(v) for v in rng.integers(0, key_domain, size=len(keys[i])))
              for _ in range(m)]
        data = rng.uniform(-3.0, 3.0, size=(m, cols[i]))
        name = f"R{i}"
        rels[name] = Relation.from_rows(name, keys[i], [f"y{i}_{c}" for c in range(cols[i])],
                                        ks, data)
    names = [f"R{i}" for i in range(num_relations)]
    return rels, JoinTree.from_parents(names, parent, rels)


def random_acyclic_database(num_relations: int = 3, max_rows: int = 20, max_data_cols: int = 4,
                            key_domain: int = 3, seed: int = 0, full_rank: bool = False,
                            join_cap: int = 50_000, max_attempts: int = 1000):
    """Random fully reduced database over a random join tree.

    ``max_data_cols`` bounds the total number of data columns. Data are
    uniform in [-3, 3). Draws whose join exceeds ``join_cap`` rows are
    rejected. With ``full_rank`` the materialized join is checked to
    have full column rank (condition number below 1e8); rejected draws are
    redrawn from the same seeded stream, so the result depends only on the
    arguments.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        rels, tree = _attempt(rng, num_relations, max_rows, max_data_cols, key_domain)
        validate_join_tree(tree)
        try:
            reduced = semi_join_reduce(rels, tree)
            if compute_counts(reduced, tree).total_join_size(tree) > join_cap:
                continue
            if full_rank:
                A = materialize_join(reduced, tree, cap=join_cap).matrix
                if A.shape[0] < A.shape[1]:
                    continue
                sv = np.linalg.svd(A, compute_uv=False)
                if sv[-1] <= 1e-8 * sv[0]:
                    continue
        except (EmptyJoinError, JoinSizeError):
            continue
        return reduced, tree
    raise RuntimeError(f"no acceptable database after {max_attempts} attempts")


def oracle_r_streaming(relations: Mapping[str, Relation], tree: JoinTree,
                       chunk_rows: int = 1 << 12) -> np.ndarray:
    """R of the materialized join, folding join chunks through LAPACK QR."""
    n = tree.num_columns
    R = np.zeros((0, n))
    for chunk in iter_join_chunks(relations, tree, chunk_rows):
        R = np.linalg.qr(np.vstack([R, chunk]), mode="r")
    return normalize_signs(R[:n]).matrix


def _median_time(fn, runs: int) -> float:
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def time_figaro(relations, tree, runs: int = 5, threads: int = 1) -> float:
    """Median time of the counts + recursion phases (no post-processing).

    Each run repeats the call enough times to last at least 0.2 s, so that
    sub-millisecond timings are not dominated by clock noise.
    """
    timer = timeit.Timer(lambda: compute_r0(relations, tree, compute_counts(relations, tree),
                                            threads=threads))
    number, _ = timer.autorange()
    return statistics.median(timer.repeat(repeat=runs, number=number)) / number


def time_materialized(relations, tree, runs: int = 5) -> float:
    return _median_time(lambda: oracle_r_streaming(relations, tree), runs)


def scaling_experiment(min_rows: int, max_rows: int, cols: int = 16, runs: int = 5,
                       seed: int = 0, with_oracle: bool = True) -> list[dict]:
    """Time both paths on Cartesian products, doubling rows per relation."""
    records = []
    rows = min_rows
    while rows <= max_rows:
        rels, tree = cartesian_product_database(rows, rows, cols, cols, seed)
        records.append(dict(engine="figaro", rows=rows, cols=2 * cols,
                            seconds=time_figaro(rels, tree, runs)))
        if with_oracle:
            records.append(dict(engine="materialized", rows=rows, cols=2 * cols,
                                seconds=time_materialized(rels, tree, runs)))
        rows *= 2
    return records
