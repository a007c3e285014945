"""Relations, join trees, CSV/config ingestion, semi-join reduction and the
brute-force join materializer used by the oracles."""

from __future__ import annotations

import csv
import re
import shlex
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    EmptyJoinError,
    JoinSizeError,
    JoinTreeError,
    ParseError,
    SchemaError,
)

KeyValue = Union[int, str]
KeyTuple = tuple

DEFAULT_JOIN_CAP = 10**6

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_INT = re.compile(r"^[+-]?\d+$")


def _check_names(where: str, names: Sequence[str]) -> None:
    seen = set()
    for name in names:
        if not isinstance(name, str) or not _IDENT.match(name):
            raise SchemaError(f"{where}: invalid attribute name {name!r}")
        if name in seen:
            raise SchemaError(f"{where}: duplicate attribute {name!r}")
        seen.add(name)


def _normalize_key_value(value) -> KeyValue:
    if isinstance(value, (bool, np.bool_)):
        raise SchemaError(f"boolean key value {value!r} not supported")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, str):
        return value
    raise SchemaError(f"key value {value!r} must be an integer or a string")


@dataclass(frozen=True, eq=False)
class Relation:
    """A relation encoded as a matrix: one key tuple and one data row per tuple.

    Rows are kept sorted by ``(key tuple, data tuple)``; use :meth:`from_rows`
    to build a canonical instance from unsorted input.
    """

    name: str
    key_attrs: tuple[str, ...]
    data_attrs: tuple[str, ...]
    keys: tuple[KeyTuple, ...]
    data: np.ndarray

    def __post_init__(self):
        if not isinstance(self.name, str) or not _IDENT.match(self.name):
            raise SchemaError(f"invalid relation name {self.name!r}")
        _check_names(self.name, tuple(self.key_attrs) + tuple(self.data_attrs))
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape != (len(self.keys), len(self.data_attrs)):
            raise SchemaError(
                f"{self.name}: data shape {data.shape} does not match "
                f"{len(self.keys)} rows x {len(self.data_attrs)} data attributes"
            )
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "key_attrs", tuple(self.key_attrs))
        object.__setattr__(self, "data_attrs", tuple(self.data_attrs))
        nk = len(self.key_attrs)
        for row, key in enumerate(self.keys):
            if len(key) != nk:
                raise SchemaError(
                    f"{self.name}: row {row} has {len(key)} key values, expected {nk}"
                )
        for col, attr in enumerate(self.key_attrs):
            kinds = {type(key[col]) for key in self.keys}
            if len(kinds) > 1:
                raise SchemaError(f"{self.name}: mixed key types in column {attr!r}")

    @classmethod
    def from_rows(cls, name, key_attrs, data_attrs, keys, data) -> "Relation":
        """Build a relation and sort its rows canonically."""
        keys = [tuple(_normalize_key_value(v) for v in key) for key in keys]
        data = np.asarray(data, dtype=np.float64).reshape(len(keys), len(data_attrs))
        order = _canonical_order(keys, data, len(key_attrs))
        return cls(
            name,
            tuple(key_attrs),
            tuple(data_attrs),
            tuple(keys[i] for i in order),
            data[order],
        )

    def __len__(self) -> int:
        return len(self.keys)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Relation):
            return NotImplemented
        return (
            self.name == other.name
            and self.key_attrs == other.key_attrs
            and self.data_attrs == other.data_attrs
            and self.keys == other.keys
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    @property
    def qualified_columns(self) -> tuple[str, ...]:
        return tuple(f"{self.name}.{a}" for a in self.data_attrs)

    def key_indices(self, attrs: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.key_attrs.index(a) for a in attrs)

    def project_keys(self, attrs: Sequence[str]) -> list[KeyTuple]:
        idx = self.key_indices(attrs)
        return [tuple(key[i] for i in idx) for key in self.keys]

    @cached_property
    def groups(self) -> tuple[list[KeyTuple], np.ndarray, np.ndarray]:
        """Distinct key tuples in order, with the start row and size of each run."""
        distinct: list[KeyTuple] = []
        starts = []
        prev = object()
        for row, key in enumerate(self.keys):
            if key != prev:
                distinct.append(key)
                starts.append(row)
                prev = key
        starts_arr = np.asarray(starts, dtype=np.int64)
        counts = np.diff(np.append(starts_arr, len(self.keys)))
        return distinct, starts_arr, counts

    def scan_groups(self, scans: dict | None = None) -> Iterator[tuple[KeyTuple, int]]:
        """Stream ``(key, row count)`` per key group; one call is one pass."""
        if scans is not None:
            scans[self.name] = scans.get(self.name, 0) + 1
        distinct, _, counts = self.groups
        for key, count in zip(distinct, counts):
            yield key, int(count)

    def filtered(self, mask: np.ndarray) -> "Relation":
        mask = np.asarray(mask, dtype=bool)
        if mask.all():
            return self
        keys = tuple(k for k, keep in zip(self.keys, mask) if keep)
        return Relation(self.name, self.key_attrs, self.data_attrs, keys, self.data[mask])


def _canonical_order(keys: list[KeyTuple], data: np.ndarray, nkeys: int) -> np.ndarray:
    if not keys:
        return np.zeros(0, dtype=np.int64)
    columns = []
    for col in range(nkeys):
        values = [k[col] for k in keys]
        if len({type(v) for v in values}) > 1:
            raise SchemaError(f"mixed key types in key column {col}")
        lookup = {v: code for code, v in enumerate(sorted(set(values)))}
        columns.append(np.fromiter((lookup[v] for v in values), np.int64, len(values)))
    # np.lexsort: last array is the primary sort key
    sort_keys = [data[:, c] for c in reversed(range(data.shape[1]))]
    sort_keys += list(reversed(columns))
    if not sort_keys:
        return np.arange(len(keys))
    return np.lexsort(sort_keys)


def _parse_key_cell(text: str) -> KeyValue:
    return int(text) if _INT.match(text.strip()) else text


def load_relation(path, key_attrs: Sequence[str], data_attrs: Sequence[str],
                  name: str | None = None) -> Relation:
    """Load a relation from a CSV file with a header row."""
    path = Path(path)
    name = name or path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        for attr in list(key_attrs) + list(data_attrs):
            if attr not in header:
                raise SchemaError(f"{path}: missing attribute {attr!r} in header")
        kpos = [header.index(a) for a in key_attrs]
        dpos = [header.index(a) for a in data_attrs]
        raw_keys: list[list[str]] = []
        rows: list[list[float]] = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) < len(header):
                raise ParseError(f"{path}: row {lineno} has {len(cells)} cells, "
                                 f"expected {len(header)}")
            raw_keys.append([cells[p].strip() for p in kpos])
            try:
                rows.append([float(cells[p]) for p in dpos])
            except ValueError:
                bad = next(cells[p] for p in dpos if not _is_float(cells[p]))
                raise ParseError(f"{path}: row {lineno}: cannot parse {bad!r} as a real") from None
    # a key column is integer-typed only if every cell in it is an integer
    int_cols = [all(_INT.match(k[c]) for k in raw_keys) for c in range(len(kpos))]
    keys = [tuple(int(k[c]) if int_cols[c] else k[c] for c in range(len(kpos)))
            for k in raw_keys]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(dpos))
    return Relation.from_rows(name, key_attrs, data_attrs, keys, data)


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# join trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JoinTree:
    """A rooted join tree; node ``i`` is the relation ``names[i]``."""

    names: tuple[str, ...]
    parent: tuple[int | None, ...]
    key_attrs: tuple[tuple[str, ...], ...]
    data_attrs: tuple[tuple[str, ...], ...]
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    root: int = field(init=False)

    def __post_init__(self):
        n = len(self.names)
        if n == 0:
            raise JoinTreeError("join tree has no nodes")
        if len(set(self.names)) != n:
            raise JoinTreeError("relation names in a join tree must be unique")
        if not (len(self.parent) == len(self.key_attrs) == len(self.data_attrs) == n):
            raise JoinTreeError("inconsistent join tree arrays")
        roots = [i for i, p in enumerate(self.parent) if p is None]
        if len(roots) != 1:
            raise JoinTreeError(f"join tree must have exactly one root, found {len(roots)}")
        children: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(self.parent):
            if p is not None:
                if not 0 <= p < n or p == i:
                    raise JoinTreeError(f"node {self.names[i]} has invalid parent {p}")
                children[p].append(i)
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "root", roots[0])
        if len(self.preorder()) != n:
            raise JoinTreeError("join tree is not connected (cycle in parent links)")

    @classmethod
    def from_parents(cls, names: Sequence[str], parent: Sequence[int | None],
                     relations: Mapping[str, Relation]) -> "JoinTree":
        missing = [n for n in names if n not in relations]
        if missing:
            raise JoinTreeError(f"unknown relation(s) in join tree: {', '.join(missing)}")
        return cls(
            tuple(names),
            tuple(parent),
            tuple(relations[n].key_attrs for n in names),
            tuple(relations[n].data_attrs for n in names),
        )

    @classmethod
    def from_term(cls, term: str, relations: Mapping[str, Relation]) -> "JoinTree":
        """Build a tree from term notation such as ``S1(S2(S3,S4))``."""
        names: list[str] = []
        parent: list[int | None] = []

        def visit(node, par):
            name, kids = node
            idx = len(names)
            names.append(name)
            parent.append(par)
            for kid in kids:
                visit(kid, idx)

        visit(parse_tree_term(term), None)
        return cls.from_parents(names, parent, relations)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def preorder(self, start: int | None = None) -> list[int]:
        order = []
        stack = [self.root if start is None else start]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(self.children[node]))
            if len(order) > len(self.names):
                break
        return order

    def postorder(self) -> list[int]:
        order = []

        def visit(i):
            for c in self.children[i]:
                visit(c)
            order.append(i)

        visit(self.root)
        return order

    def subtree(self, i: int) -> list[int]:
        return self.preorder(i)

    def shared(self, i: int, j: int) -> tuple[str, ...]:
        """Key attributes common to nodes i and j, in node i's key order."""
        other = set(self.key_attrs[j])
        return tuple(a for a in self.key_attrs[i] if a in other)

    def parent_shared(self, i: int) -> tuple[str, ...]:
        """The attributes ``X_p`` node i shares with its parent (parent's order)."""
        p = self.parent[i]
        if p is None:
            return ()
        return self.shared(p, i)

    def path(self, i: int, j: int) -> list[int]:
        up_i = [i]
        while self.parent[up_i[-1]] is not None:
            up_i.append(self.parent[up_i[-1]])
        up_j = [j]
        while up_j[-1] not in up_i:
            up_j.append(self.parent[up_j[-1]])
        meet = up_j[-1]
        return up_i[: up_i.index(meet) + 1] + list(reversed(up_j[:-1]))

    @cached_property
    def column_offsets(self) -> tuple[tuple[int, ...], tuple[int, ...], int]:
        """Column start of each node's data block, end of its subtree's block,
        and the total width N. Layout: data attributes in pre-order."""
        start = [0] * len(self.names)
        pos = 0
        for i in self.preorder():
            start[i] = pos
            pos += len(self.data_attrs[i])
        end = [0] * len(self.names)
        for i in self.postorder():
            end[i] = start[i] + len(self.data_attrs[i])
            for c in self.children[i]:
                end[i] = max(end[i], end[c])
        return tuple(start), tuple(end), pos

    @property
    def num_columns(self) -> int:
        return self.column_offsets[2]

    def column_names(self) -> list[str]:
        cols = []
        for i in self.preorder():
            cols.extend(f"{self.names[i]}.{a}" for a in self.data_attrs[i])
        return cols

    def to_term(self, i: int | None = None) -> str:
        i = self.root if i is None else i
        kids = self.children[i]
        if not kids:
            return self.names[i]
        return f"{self.names[i]}({','.join(self.to_term(c) for c in kids)})"


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|(.))")


def parse_tree_term(text: str):
    """Parse ``name | name(term,term,...)`` into nested ``(name, [children])``."""
    tokens = []
    for m in _TOKEN.finditer(text):
        if m.group(1):
            tokens.append(("name", m.group(1), m.start(1)))
        elif m.group(2) and not m.group(2).isspace():
            tokens.append(("sym", m.group(2), m.start(2)))
    pos = 0

    def fail(msg):
        if pos < len(tokens):
            tok = tokens[pos]
            raise ParseError(f"tree term: {msg}; offending token {tok[1]!r} at column {tok[2] + 1}")
        raise ParseError(f"tree term: {msg}; unexpected end of input")

    def term():
        nonlocal pos
        if pos >= len(tokens) or tokens[pos][0] != "name":
            fail("expected a relation name")
        name = tokens[pos][1]
        pos += 1
        kids = []
        if pos < len(tokens) and tokens[pos][1] == "(":
            pos += 1
            kids.append(term())
            while pos < len(tokens) and tokens[pos][1] == ",":
                pos += 1
                kids.append(term())
            if pos >= len(tokens) or tokens[pos][1] != ")":
                fail("expected ',' or ')'")
            pos += 1
        return name, kids

    result = term()
    if pos != len(tokens):
        fail("trailing input after term")
    return result


def validate_join_tree(tree: JoinTree) -> None:
    """Raise unless every key attribute's nodes form a connected subtree."""
    owner: dict[str, int] = {}
    for i, attrs in enumerate(tree.data_attrs):
        for a in attrs:
            if a in owner or any(a in k for k in tree.key_attrs):
                raise SchemaError(
                    f"data attribute {a!r} of {tree.names[i]} is not unique in the database")
            owner[a] = i
    attrs = []
    for keys in tree.key_attrs:
        attrs.extend(a for a in keys if a not in attrs)
    for attr in attrs:
        holders = [i for i, keys in enumerate(tree.key_attrs) if attr in keys]
        first = holders[0]
        for other in holders[1:]:
            path = tree.path(first, other)
            gaps = [n for n in path if attr not in tree.key_attrs[n]]
            if gaps:
                names = " - ".join(tree.names[n] for n in path)
                raise JoinTreeError(
                    f"attribute {attr!r} violates the join-tree path property on path "
                    f"{names} ({', '.join(tree.names[g] for g in gaps)} lacks it)"
                )


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def parse_config(path) -> tuple[dict[str, Relation], JoinTree]:
    """Read a line-oriented config (``relation ...`` and ``tree ...`` lines)."""
    path = Path(path)
    relations: dict[str, Relation] = {}
    term = None
    with open(path, encoding="utf-8") as fh:
        lines = list(fh)
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "relation":
            parts = shlex.split(rest)
            if not parts:
                raise ParseError(f"{path}:{lineno}: relation line needs a name")
            name, opts = parts[0], {}
            for part in parts[1:]:
                key, eq, value = part.partition("=")
                if not eq or key not in ("file", "keys", "data"):
                    raise ParseError(f"{path}:{lineno}: unexpected token {part!r}")
                opts[key] = value
            if "file" not in opts:
                raise ParseError(f"{path}:{lineno}: relation {name} has no file=")
            if name in relations:
                raise ParseError(f"{path}:{lineno}: duplicate relation {name}")
            file = Path(opts["file"])
            if not file.is_absolute():
                file = path.parent / file
            keys = [k for k in opts.get("keys", "").split(",") if k]
            data = [d for d in opts.get("data", "").split(",") if d]
            relations[name] = load_relation(file, keys, data, name=name)
        elif head == "tree":
            if term is not None:
                raise ParseError(f"{path}:{lineno}: more than one tree line")
            term = rest.strip()
        else:
            raise ParseError(f"{path}:{lineno}: unknown directive {head!r}")
    if term is None:
        raise ParseError(f"{path}: missing tree line")
    tree = JoinTree.from_term(term, relations)
    unused = set(relations) - set(tree.names)
    if unused:
        raise JoinTreeError(f"relations not in tree: {', '.join(sorted(unused))}")
    return relations, tree


# ---------------------------------------------------------------------------
# reduction and materialization
# ---------------------------------------------------------------------------

def semi_join_reduce(relations: Mapping[str, Relation], tree: JoinTree) -> dict[str, Relation]:
    """Remove dangling tuples with a bottom-up then top-down semi-join sweep."""
    masks = {n: np.ones(len(relations[n]), dtype=bool) for n in tree.names}

    def semijoin(target: int, source: int):
        attrs = tree.shared(target, source)
        t_rel, s_rel = relations[tree.names[target]], relations[tree.names[source]]
        s_mask = masks[s_rel.name]
        present = {k for k, keep in zip(s_rel.project_keys(attrs), s_mask) if keep}
        t_proj = t_rel.project_keys(attrs)
        masks[t_rel.name] &= np.fromiter((k in present for k in t_proj), bool, len(t_proj))

    for i in tree.postorder():
        p = tree.parent[i]
        if p is not None:
            semijoin(p, i)
    for i in tree.preorder():
        for c in tree.children[i]:
            semijoin(c, i)
    out = {}
    for name in tree.names:
        if not masks[name].any():
            raise EmptyJoinError(f"relation {name} is empty after semi-join reduction; "
                                 "the join is empty")
        out[name] = relations[name].filtered(masks[name])
    return out


@dataclass
class JoinedMatrix:
    columns: tuple[str, ...]
    matrix: np.ndarray

    def __len__(self):
        return self.matrix.shape[0]


def _child_lookup(parent_rel: Relation, child_rel: Relation, attrs):
    """For each parent row: (start, count) into ``perm``, the child rows grouped
    by their projection onto ``attrs``."""
    child_proj = child_rel.project_keys(attrs)
    buckets: dict[KeyTuple, list[int]] = {}
    for row, key in enumerate(child_proj):
        buckets.setdefault(key, []).append(row)
    perm, where = [], {}
    for key, rows in buckets.items():
        where[key] = (len(perm), len(rows))
        perm.extend(rows)
    starts = np.zeros(len(parent_rel), dtype=np.int64)
    counts = np.zeros(len(parent_rel), dtype=np.int64)
    for row, key in enumerate(parent_rel.project_keys(attrs)):
        starts[row], counts[row] = where.get(key, (0, 0))
    return np.asarray(perm, dtype=np.int64), starts, counts


def _expand(relations, tree, lookups, root_rows: np.ndarray, cap: int | None):
    index = {tree.root: root_rows}
    size = len(root_rows)
    for i in tree.preorder():
        for c in tree.children[i]:
            perm, starts, counts = lookups[c]
            prow = index[i]
            cnt = counts[prow]
            total = int(cnt.sum())
            if cap is not None and total > cap:
                raise JoinSizeError(f"join exceeds the row cap of {cap} rows")
            rep = np.repeat(np.arange(size), cnt)
            first = np.cumsum(cnt) - cnt
            within = np.arange(total) - np.repeat(first, cnt)
            crow = perm[np.repeat(starts[prow], cnt) + within]
            index = {k: v[rep] for k, v in index.items()}
            index[c] = crow
            size = total
    return index, size


def _lookups(relations, tree):
    return {
        c: _child_lookup(relations[tree.names[tree.parent[c]]], relations[tree.names[c]],
                         tree.parent_shared(c))
        for c in range(len(tree.names)) if tree.parent[c] is not None
    }


def _assemble(relations, tree, index, size) -> np.ndarray:
    start, _, width = tree.column_offsets
    out = np.empty((size, width))
    for i, name in enumerate(tree.names):
        rel = relations[name]
        out[:, start[i]:start[i] + len(rel.data_attrs)] = rel.data[index[i]]
    return out


def materialize_join(relations: Mapping[str, Relation], tree: JoinTree,
                     cap: int = DEFAULT_JOIN_CAP) -> JoinedMatrix:
    """Materialize the join's data columns (pre-order layout). Oracle use only."""
    lookups = _lookups(relations, tree)
    root_rows = np.arange(len(relations[tree.names[tree.root]]))
    if len(root_rows) > cap:
        raise JoinSizeError(f"join exceeds the row cap of {cap} rows")
    index, size = _expand(relations, tree, lookups, root_rows, cap)
    return JoinedMatrix(tuple(tree.column_names()), _assemble(relations, tree, index, size))


def iter_join_chunks(relations: Mapping[str, Relation], tree: JoinTree,
                     chunk_rows: int = 1 << 16) -> Iterator[np.ndarray]:
    """Stream the join's data rows in chunks of at most ``chunk_rows`` rows.

    Chunks are formed by expanding consecutive runs of root rows; the run length
    adapts to the observed fan-out so memory stays bounded by the chunk size.
    """
    lookups = _lookups(relations, tree)
    n_root = len(relations[tree.names[tree.root]])
    pos, step = 0, 1
    while pos < n_root:
        rows = np.arange(pos, min(pos + step, n_root))
        index, size = _expand(relations, tree, lookups, rows, None)
        block = _assemble(relations, tree, index, size)
        for lo in range(0, size, chunk_rows):
            yield block[lo:lo + chunk_rows]
        fanout = max(1.0, size / len(rows))
        step = max(1, int(chunk_rows // fanout))
        pos += len(rows)
