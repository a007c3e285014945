"""End-to-end computation of R for a join: reduce, count, recurse, post-process."""

from __future__ import annotations

import time
from collections.abc import Mapping
from dataclasses import dataclass, field

from .core import OutAccumulator, compute_r0
from .counts import CountTables, compute_counts
from .postprocess import TriangularFactor, postprocess
from .relational import JoinTree, Relation, semi_join_reduce, validate_join_tree


@dataclass
class FigaroResult:
    R: TriangularFactor
    r0: OutAccumulator
    counts: CountTables
    relations: dict[str, Relation]
    columns: list[str]
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def input_rows(self) -> int:
        return sum(len(r) for r in self.relations.values())


def figaro_qr(relations: Mapping[str, Relation], tree: JoinTree, *, threads: int = 1,
              engine: str = "thin", assume_reduced: bool = False) -> FigaroResult:
    """Compute the sign-normalized R of the join's data matrix."""
    timings = {}
    t0 = time.perf_counter()
    validate_join_tree(tree)
    rels = dict(relations) if assume_reduced else semi_join_reduce(relations, tree)
    t1 = time.perf_counter()
    counts = compute_counts(rels, tree)
    t2 = time.perf_counter()
    r0 = compute_r0(rels, tree, counts, threads=threads)
    t3 = time.perf_counter()
    R = postprocess(r0, engine=engine, workers=threads)
    t4 = time.perf_counter()
    timings.update(reduce=t1 - t0, counts=t2 - t1, figaro=t3 - t2, postprocess=t4 - t3)
    return FigaroResult(R, r0, counts, rels, tree.column_names(), timings)
