import numpy as np
import pytest

from figaro.counts import UINT64_MAX, brute_force_counts, compute_counts, dump_counts
from figaro.errors import CountOverflowError, IntegrityError
from figaro.relational import JoinTree, Relation
from figaro.testbench import random_acyclic_database

from four_relations import build, group_size


def unary(name, attr, sizes, ycol):
    keys = [(k,) for k, n in sizes.items() for _ in range(n)]
    return Relation.from_rows(name, [attr], [ycol], keys, np.zeros((len(keys), 1)))


def test_two_relation_example():
    rels = {"S": unary("S", "X", {"a": 2, "b": 1}, "s"), "T": unary("T", "X", {"a": 3, "b": 2}, "t")}
    tree = JoinTree.from_term("S(T)", rels)
    c = compute_counts(rels, tree)
    s, t = tree.index("S"), tree.index("T")
    assert c.phi_circ[s][("a",)] == 3 and c.phi_circ[t][("a",)] == 2
    assert c.full_join_size[s][("a",)] == 6
    assert c.total_join_size(tree) == 8
    assert c.same_counts(brute_force_counts(rels, tree))


def test_single_relation_circ_is_one():
    rels = {"S": unary("S", "X", {"a": 2, "b": 5}, "s")}
    c = compute_counts(rels, JoinTree.from_term("S", rels))
    assert c.phi_circ[0] == {("a",): 1, ("b",): 1}
    assert c.phi_down[0] is None and c.phi_up[0] is None


def test_four_relation_circ_of_s3():
    rels, tree = build(1)
    c = compute_counts(rels, tree)
    s1, s2, s4 = rels["S1"], rels["S2"], rels["S4"]
    expected = sum(group_size(s1, (a,)) * group_size(s2, (a, "b1", cc)) * group_size(s4, (cc,))
                   for a in ("a1", "a2") for cc in ("c1", "c2"))
    assert c.phi_circ[tree.index("S3")][("b1",)] == expected
    assert c.same_counts(brute_force_counts(rels, tree))


def test_chain_middle_up_count():
    R = unary("R", "X", {"a": 4, "b": 1}, "r")
    M = Relation.from_rows("M", ["X", "Y"], ["m"], [("a", 1), ("b", 2)], np.zeros((2, 1)))
    L = unary("L", "Y", {1: 2, 2: 3}, "l")
    rels = {"R": R, "M": M, "L": L}
    tree = JoinTree.from_term("R(M(L))", rels)
    c = compute_counts(rels, tree)
    assert c.phi_up[tree.index("M")] == {("a",): 4, ("b",): 1}
    assert c.same_counts(brute_force_counts(rels, tree))


def test_unreduced_input_detected():
    rels = {"S": unary("S", "X", {"a": 1, "b": 1}, "s"), "T": unary("T", "X", {"a": 1}, "t")}
    with pytest.raises(IntegrityError):
        compute_counts(rels, JoinTree.from_term("S(T)", rels))
    bf = brute_force_counts(rels, JoinTree.from_term("S(T)", rels))
    assert bf.full_join_size[0][("b",)] == 0


def test_overflow_detected():
    names, rows = "ABCDEFGH", 2**9
    rels = {n: Relation.from_rows(n, [], [n.lower()], [()] * rows, np.zeros((rows, 1)))
            for n in names}
    assert rows ** len(names) > UINT64_MAX
    with pytest.raises(CountOverflowError):
        compute_counts(rels, JoinTree.from_term("A(B,C,D,E,F,G,H)", rels))


@pytest.mark.parametrize("seed", range(40))
def test_invariants_on_random_databases(seed):
    rels, tree = random_acyclic_database(2 + seed % 4, 30, 3, 2 + seed % 3, seed=500 + seed)
    c = compute_counts(rels, tree)
    assert c.same_counts(brute_force_counts(rels, tree))
    assert all(v == 2 for v in c.scans.values())
    for i in range(len(tree.names)):
        rel = rels[tree.names[i]]
        if tree.parent[i] is None:
            assert c.full_join_size[i] == c.theta_down[i]
        elif not tree.children[i]:
            # leaf: down count aggregates rows per key, circ equals up
            agg = {}
            idx = rel.key_indices(tree.parent_shared(i))
            for key, n in c.rows_per_key[i].items():
                xp = tuple(key[p] for p in idx)
                agg[xp] = agg.get(xp, 0) + n
            assert c.phi_down[i] == agg
            for key, circ in c.phi_circ[i].items():
                assert circ == c.phi_up[i][tuple(key[p] for p in idx)]


def test_dump(tmp_path):
    rels, tree = build(2)
    c = compute_counts(rels, tree)
    path = tmp_path / "c.csv"
    dump_counts(c, tree, rels, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "node,key,phi_down,phi_up,phi_circ"
    assert len(lines) == 1 + sum(len(d) for d in c.phi_circ)
