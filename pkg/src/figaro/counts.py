"""Group-by count aggregates over the join tree, computed in two passes.

For node ``i`` with key attributes ``X_i`` and parent-shared attributes ``X_p``:

* ``phi_down[i][x_p]``: size of the join of ``i``'s subtree, grouped by ``X_p``
* ``phi_up[i][x_p]``: size of the join of everything outside the subtree
* ``phi_circ[i][x_i]``: size of the join of all relations except ``i``
* ``theta_down[i][x_i]``: the subtree join grouped by ``X_i``
* ``full_join_size[i][x_i]``: the whole join grouped by ``X_i``
"""

from __future__ import annotations

import csv
from collections.abc import Mapping
from dataclasses import dataclass, field

import pandas as pd

from .errors import CountOverflowError, IntegrityError, JoinSizeError
from .relational import DEFAULT_JOIN_CAP, JoinTree, Relation

UINT64_MAX = 2**64 - 1


@dataclass
class CountTables:
    rows_per_key: list[dict]
    theta_down: list[dict]
    phi_down: list[dict | None]
    phi_up: list[dict | None]
    phi_circ: list[dict]
    full_join_size: list[dict]
    scans: dict[str, int] = field(default_factory=dict)

    def total_join_size(self, tree: JoinTree) -> int:
        return sum(self.full_join_size[tree.root].values())

    def same_counts(self, other: "CountTables") -> bool:
        names = ("rows_per_key", "theta_down", "phi_down", "phi_up", "phi_circ",
                 "full_join_size")
        return all(getattr(self, n) == getattr(other, n) for n in names)


def _mul(a: int, b: int) -> int:
    out = a * b
    if out > UINT64_MAX:
        raise CountOverflowError("join count exceeds the 64-bit range")
    return out


def _add(a: int, b: int) -> int:
    out = a + b
    if out > UINT64_MAX:
        raise CountOverflowError("join count exceeds the 64-bit range")
    return out


def _project(key: tuple, idx: tuple[int, ...]) -> tuple:
    return tuple(key[i] for i in idx)


def _sorted(d: dict) -> dict:
    return dict(sorted(d.items()))


def compute_counts(relations: Mapping[str, Relation], tree: JoinTree) -> CountTables:
    """Compute all count tables with one bottom-up and one top-down pass.

    Each relation's key groups are streamed exactly twice; ``scans`` on the
    result records the number of passes per relation.
    """
    n = len(tree.names)
    rels = [relations[name] for name in tree.names]
    scans: dict[str, int] = {}
    rows_per_key: list[dict] = [{} for _ in range(n)]
    theta: list[dict] = [{} for _ in range(n)]
    phi_down: list[dict | None] = [None if tree.parent[i] is None else {} for i in range(n)]
    phi_up: list[dict | None] = [None if tree.parent[i] is None else {} for i in range(n)]
    phi_circ: list[dict] = [{} for _ in range(n)]
    full: list[dict] = [{} for _ in range(n)]

    child_idx = [
        [(j, rels[i].key_indices(tree.shared(i, j))) for j in tree.children[i]]
        for i in range(n)
    ]
    parent_idx = [rels[i].key_indices(tree.parent_shared(i)) for i in range(n)]

    def pass1(i: int) -> None:
        for j in tree.children[i]:
            pass1(j)
        is_root = tree.parent[i] is None
        for key, count in rels[i].scan_groups(scans):
            rows_per_key[i][key] = count
            t = count
            for j, idx in child_idx[i]:
                down = phi_down[j].get(_project(key, idx), 0)
                if down == 0:
                    raise IntegrityError(
                        f"{tree.names[i]} key {key} has no partner in {tree.names[j]}; "
                        "database is not fully reduced")
                t = _mul(t, down)
            theta[i][key] = t
            if not is_root:
                xp = _project(key, parent_idx[i])
                phi_down[i][xp] = _add(phi_down[i].get(xp, 0), t)

    def pass2(i: int) -> None:
        is_root = tree.parent[i] is None
        for key, count in rels[i].scan_groups(scans):
            if is_root:
                up = 1
            else:
                up = phi_up[i].get(_project(key, parent_idx[i]), 0)
                if up == 0:
                    raise IntegrityError(
                        f"{tree.names[i]} key {key} has no partner above it; "
                        "database is not fully reduced")
            size = _mul(theta[i][key], up)
            full[i][key] = size
            for j, idx in child_idx[i]:
                xij = _project(key, idx)
                phi_up[j][xij] = _add(phi_up[j].get(xij, 0), size)
            circ, rem = divmod(size, count)
            if rem:
                raise IntegrityError(f"inconsistent counts at {tree.names[i]} key {key}")
            phi_circ[i][key] = circ
        for j in tree.children[i]:
            if phi_up[j].keys() != phi_down[j].keys():
                raise IntegrityError(
                    f"{tree.names[j]} has keys that never appear under {tree.names[i]}; "
                    "database is not fully reduced")
            for xij, total in phi_up[j].items():
                up, rem = divmod(total, phi_down[j][xij])
                if rem:
                    raise IntegrityError(f"inconsistent counts at {tree.names[j]} key {xij}")
                phi_up[j][xij] = up
            pass2(j)

    pass1(tree.root)
    pass2(tree.root)
    return CountTables(
        rows_per_key=[_sorted(d) for d in rows_per_key],
        theta_down=[_sorted(d) for d in theta],
        phi_down=[None if d is None else _sorted(d) for d in phi_down],
        phi_up=[None if d is None else _sorted(d) for d in phi_up],
        phi_circ=[_sorted(d) for d in phi_circ],
        full_join_size=[_sorted(d) for d in full],
        scans=scans,
    )


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def _natural_join(frames: list[pd.DataFrame], cap: int) -> pd.DataFrame:
    if not frames:
        return pd.DataFrame(index=[0])
    pending = list(frames)
    out = pending.pop(0)
    while pending:
        pick = next((k for k, f in enumerate(pending)
                     if set(f.columns) & set(out.columns)), 0)
        nxt = pending.pop(pick)
        on = sorted(set(nxt.columns) & set(out.columns))
        if on:
            out = out.merge(nxt, on=on, how="inner")
        else:
            out = out.merge(nxt, how="cross")
        if len(out) > cap:
            raise JoinSizeError(f"brute-force join exceeds the row cap of {cap} rows")
    return out


def _group_sizes(joined: pd.DataFrame, attrs: tuple[str, ...]):
    """Return a lookup ``key tuple -> count`` over the attributes present."""
    present = [a for a in attrs if a in joined.columns]
    pos = [attrs.index(a) for a in present]
    if not present:
        total = len(joined)
        return lambda key: total
    sizes = joined.groupby(present, sort=False).size()
    table = {}
    for k, v in sizes.items():
        table[k if isinstance(k, tuple) else (k,)] = int(v)
    return lambda key: table.get(tuple(key[p] for p in pos), 0)


def brute_force_counts(relations: Mapping[str, Relation], tree: JoinTree,
                       cap: int = DEFAULT_JOIN_CAP) -> CountTables:
    """Evaluate every count table by joining the relevant relations explicitly."""
    n = len(tree.names)
    rels = [relations[name] for name in tree.names]
    frames = []
    for rel in rels:
        cols = {a: [k[c] for k in rel.keys] for c, a in enumerate(rel.key_attrs)}
        frame = pd.DataFrame(cols) if cols else pd.DataFrame(index=range(len(rel)))
        frames.append(frame)

    def join_of(nodes):
        return _natural_join([frames[k] for k in nodes], cap)

    everything = join_of(range(n))
    out = CountTables([], [], [], [], [], [])
    for i in range(n):
        rel = rels[i]
        xi = rel.key_attrs
        distinct = rel.groups[0]
        out.rows_per_key.append({k: int(c) for k, c in zip(distinct, rel.groups[2])})
        inside = tree.subtree(i)
        outside = [k for k in range(n) if k not in inside]
        sub = join_of(inside)
        theta = _group_sizes(sub, xi)
        out.theta_down.append({k: theta(k) for k in distinct})
        fjs = _group_sizes(everything, xi)
        out.full_join_size.append({k: fjs(k) for k in distinct})
        others = _group_sizes(join_of([k for k in range(n) if k != i]), xi)
        out.phi_circ.append({k: others(k) for k in distinct})
        if tree.parent[i] is None:
            out.phi_down.append(None)
            out.phi_up.append(None)
            continue
        xp = tree.parent_shared(i)
        xps = sorted(set(rel.project_keys(xp)))
        down = _group_sizes(sub, xp)
        up = _group_sizes(join_of(outside), xp)
        out.phi_down.append({k: down(k) for k in xps})
        out.phi_up.append({k: up(k) for k in xps})
    return out


def dump_counts(counts: CountTables, tree: JoinTree, relations: Mapping[str, Relation],
                path) -> None:
    """Write ``node,key,phi_down,phi_up,phi_circ`` rows, one per node key."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "key", "phi_down", "phi_up", "phi_circ"])
        for i in tree.preorder():
            rel = relations[tree.names[i]]
            pidx = rel.key_indices(tree.parent_shared(i))
            for key, circ in counts.phi_circ[i].items():
                if tree.parent[i] is None:
                    down = up = ""
                else:
                    xp = _project(key, pidx)
                    down, up = counts.phi_down[i][xp], counts.phi_up[i][xp]
                writer.writerow([tree.names[i], "|".join(map(str, key)), down, up, circ])
