"""The factorized Givens recursion over a join tree.

``figaro`` walks the join tree bottom-up and produces the almost
upper-triangular matrix R0: every block it emits is the closed form of a long
run of Givens rotations on the (never materialized) join output, so that
``R0^T R0 = A^T A`` for the join matrix ``A``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .counts import CountTables
from .errors import IntegrityError
from .givens import generalized_head_and_tail, head_and_tail
from .relational import JoinTree, Relation


@dataclass
class OutAccumulator:
    """Rows of R0 stored as ``(column start, dense block)`` records."""

    width: int
    blocks: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def append(self, col_start: int, block: np.ndarray) -> None:
        if block.shape[0] == 0 or block.shape[1] == 0:
            return
        if col_start < 0 or col_start + block.shape[1] > self.width:
            raise ValueError("block does not fit the output width")
        self.blocks.append((col_start, block))

    def extend(self, other: "OutAccumulator") -> None:
        self.blocks.extend(other.blocks)

    @property
    def num_rows(self) -> int:
        return sum(b.shape[0] for _, b in self.blocks)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.width))
        row = 0
        for start, block in self.blocks:
            out[row:row + block.shape[0], start:start + block.shape[1]] = block
            row += block.shape[0]
        return out


@dataclass
class FigaroState:
    """Per-node intermediate: ``data[k]`` and ``scales[k]`` belong to ``keys[k]``.

    ``data`` spans the columns of the node's subtree, starting at ``col_start``.
    """

    out: OutAccumulator
    keys: list[tuple]
    data: np.ndarray
    scales: np.ndarray
    col_start: int


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(bounds[k], bounds[k + 1]) for k in range(parts)]


def _parallel_map(fn, n: int, threads: int) -> list:
    """Run ``fn(range)`` over contiguous index chunks; results in chunk order."""
    chunks = _chunks(n, threads)
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def heads_and_tails(node: int, rel: Relation, tree: JoinTree, counts: CountTables,
                    threads: int = 1) -> FigaroState:
    """Per key group of the relation: scaled tail to Out, head to data."""
    starts_col, ends_col, width = tree.column_offsets
    col0 = starts_col[node]
    own = len(rel.data_attrs)
    distinct, starts, sizes = rel.groups
    data = np.zeros((len(distinct), ends_col[node] - col0))
    scales = np.sqrt(sizes.astype(np.float64))
    circ = counts.phi_circ[node]

    def work(chunk: range):
        tails = []
        for g in chunk:
            s, c = starts[g], sizes[g]
            if c == 1:
                data[g, :own] = rel.data[s]
                continue
            h, t = head_and_tail(rel.data[s:s + c])
            data[g, :own] = h[0]
            tails.append(t * math.sqrt(circ[distinct[g]]))
        return tails

    out = OutAccumulator(width)
    for tails in _parallel_map(work, len(distinct), threads):
        for t in tails:
            out.append(col0, t)
    return FigaroState(out, list(distinct), data, scales, col0)


def process_and_join_children(node: int, state: FigaroState, child_states: Sequence[FigaroState],
                              rel: Relation, tree: JoinTree) -> None:
    """Join the children's one-row-per-key results into ``state`` and rescale."""
    starts_col, ends_col, _ = tree.column_offsets
    own = len(rel.data_attrs)
    kids = tree.children[node]
    picked = []
    for j, child in zip(kids, child_states):
        state.out.extend(child.out)
        where = {k: pos for pos, k in enumerate(child.keys)}
        idx = rel.key_indices(tree.shared(node, j))
        try:
            rows = np.fromiter((where[tuple(k[p] for p in idx)] for k in state.keys),
                               np.int64, len(state.keys))
        except KeyError as exc:
            raise IntegrityError(
                f"{tree.names[node]} key {exc.args[0]} missing in child "
                f"{tree.names[j]}; database is not fully reduced") from None
        picked.append(rows)

    child_scales = [child.scales[rows] for child, rows in zip(child_states, picked)]
    for pos, (j, child, rows) in enumerate(zip(kids, child_states, picked)):
        factor = state.scales.copy()
        for other, cs in enumerate(child_scales):
            if other != pos:
                factor *= cs
        lo, hi = starts_col[j] - state.col_start, ends_col[j] - state.col_start
        state.data[:, lo:hi] = child.data[rows] * factor[:, None]
    prod = np.ones(len(state.keys))
    for cs in child_scales:
        prod *= cs
    state.data[:, :own] *= prod[:, None]
    state.scales *= prod


def project_away_join_attributes(node: int, state: FigaroState, rel: Relation,
                                 tree: JoinTree, counts: CountTables, threads: int = 1) -> None:
    """Collapse ``state`` to one row per value of the parent-shared attributes."""
    idx = rel.key_indices(tree.parent_shared(node))
    xps = [tuple(k[p] for p in idx) for k in state.keys]
    order = sorted(range(len(xps)), key=lambda r: xps[r])
    groups: list[tuple[tuple, list[int]]] = []
    for r in order:
        if groups and groups[-1][0] == xps[r]:
            groups[-1][1].append(r)
        else:
            groups.append((xps[r], [r]))

    phi_up, phi_down = counts.phi_up[node], counts.phi_down[node]
    new_data = np.empty((len(groups), state.data.shape[1]))
    new_scales = np.empty(len(groups))

    def work(chunk: range):
        tails = []
        for g in chunk:
            xp, rows = groups[g]
            new_scales[g] = math.sqrt(phi_down[xp])
            if len(rows) == 1:
                new_data[g] = state.data[rows[0]]
                continue
            h, t = generalized_head_and_tail(state.data[rows], state.scales[rows])
            new_data[g] = h[0]
            tails.append(t * math.sqrt(phi_up[xp]))
        return tails

    for tails in _parallel_map(work, len(groups), threads):
        for t in tails:
            state.out.append(state.col_start, t)
    state.keys = [xp for xp, _ in groups]
    state.data = new_data
    state.scales = new_scales


def figaro(relations: Mapping[str, Relation], tree: JoinTree, counts: CountTables,
           node: int | None = None, threads: int = 1) -> FigaroState:
    """Run the recursion rooted at ``node`` (default: the tree root).

    At the root the final data rows are appended to ``out``, which then holds
    all of R0.
    """
    i = tree.root if node is None else node
    rel = relations[tree.names[i]]
    state = heads_and_tails(i, rel, tree, counts, threads)
    is_root = tree.parent[i] is None
    if tree.children[i]:
        child_states = [figaro(relations, tree, counts, j, threads) for j in tree.children[i]]
        process_and_join_children(i, state, child_states, rel, tree)
        if not is_root:
            project_away_join_attributes(i, state, rel, tree, counts, threads)
    elif not is_root:
        if set(rel.key_attrs) != set(tree.parent_shared(i)):
            # leaf with key attributes private to it: still one row per parent key
            project_away_join_attributes(i, state, rel, tree, counts, threads)
        else:
            # same attributes, but the parent expects them in its own order
            idx = rel.key_indices(tree.parent_shared(i))
            state.keys = [tuple(k[p] for p in idx) for k in state.keys]
    if is_root:
        state.out.append(state.col_start, state.data)
    return state


def compute_r0(relations: Mapping[str, Relation], tree: JoinTree, counts: CountTables,
               threads: int = 1) -> OutAccumulator:
    return figaro(relations, tree, counts, threads=threads).out
