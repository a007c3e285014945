import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from figaro.core import (
    OutAccumulator,
    compute_r0,
    figaro,
    heads_and_tails,
    process_and_join_children,
)
from figaro.counts import compute_counts
from figaro.givens import head, tail
from figaro.pipeline import figaro_qr
from figaro.postprocess import householder_oracle
from figaro.relational import JoinTree, Relation, materialize_join
from figaro.testbench import cartesian_product_database, random_acyclic_database

from four_relations import build, group_size


def gram_error(r0, A):
    R0 = r0.to_dense()
    return np.linalg.norm(R0.T @ R0 - A.T @ A) / np.linalg.norm(A.T @ A)


def test_cartesian_example():
    rels, tree = cartesian_product_database(2, 2, 1, 1, S=np.array([[1.0], [2.0]]),
                                            T=np.array([[1.0], [3.0]]))
    r0 = compute_r0(rels, tree, compute_counts(rels, tree))
    R0 = r0.to_dense()
    assert R0.shape[0] <= 4
    np.testing.assert_allclose(R0.T @ R0, [[10, 12], [12, 20]], rtol=1e-14)


def test_single_relation_single_key():
    A = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 4.0]])
    rels = {"S": Relation.from_rows("S", ["X"], ["a", "b"], [(1,)] * 3, A)}
    tree = JoinTree.from_term("S", rels)
    r0 = compute_r0(rels, tree, compute_counts(rels, tree)).to_dense()
    S = rels["S"].data
    expected = np.vstack([tail(S), head(S)])
    np.testing.assert_allclose(r0, expected, rtol=1e-14)


def test_heads_and_tails_hand_values():
    S = Relation("S", ("X",), ("s",), (("a",), ("a",)), np.array([[3.0], [1.0]]))
    T = Relation.from_rows("T", ["X"], ["t"], [("a",)] * 4, np.arange(4.0)[:, None])
    rels = {"S": S, "T": T}
    tree = JoinTree.from_term("S(T)", rels)
    counts = compute_counts(rels, tree)
    assert counts.phi_circ[0][("a",)] == 4
    state = heads_and_tails(0, S, tree, counts)
    (_, block), = state.out.blocks
    np.testing.assert_allclose(block, [[-2 * math.sqrt(2)]], rtol=1e-15)
    np.testing.assert_allclose(state.data[:, 0], [4 / math.sqrt(2)], rtol=1e-15)
    np.testing.assert_allclose(state.scales, [math.sqrt(2)], rtol=1e-15)


def test_singleton_group():
    S = Relation.from_rows("S", ["X"], ["s"], [("a",), ("b",), ("b",)], [[5.0], [1.0], [2.0]])
    rels = {"S": S}
    tree = JoinTree.from_term("S", rels)
    state = heads_and_tails(0, S, tree, compute_counts(rels, tree))
    assert len(state.keys) == 2 and state.scales[0] == 1.0 and state.data[0, 0] == 5.0
    assert state.out.num_rows == 1


def test_scale_multiplicativity():
    P = Relation.from_rows("P", ["X", "Y"], ["p"], [(1, 1)], [[1.0]])
    C1 = Relation.from_rows("C1", ["X"], ["c1"], [(1,)] * 2, [[1.0], [2.0]])
    C2 = Relation.from_rows("C2", ["Y"], ["c2"], [(1,)] * 3, [[1.0], [2.0], [4.0]])
    rels = {"P": P, "C1": C1, "C2": C2}
    tree = JoinTree.from_term("P(C1,C2)", rels)
    counts = compute_counts(rels, tree)
    state = heads_and_tails(0, P, tree, counts)
    kids = [figaro(rels, tree, counts, j) for j in tree.children[0]]
    process_and_join_children(0, state, kids, P, tree)
    assert state.scales[0] == pytest.approx(math.sqrt(2) * math.sqrt(3), rel=1e-15)


def test_leaf_children_plain_join_of_heads():
    P = Relation.from_rows("P", ["X"], ["p"], [(1,), (2,)], [[1.0], [2.0]])
    C = Relation.from_rows("C", ["X"], ["c"], [(1,), (2,)], [[7.0], [8.0]])
    rels = {"P": P, "C": C}
    tree = JoinTree.from_term("P(C)", rels)
    counts = compute_counts(rels, tree)
    state = heads_and_tails(0, P, tree, counts)
    process_and_join_children(0, state, [figaro(rels, tree, counts, 1)], P, tree)
    np.testing.assert_array_equal(state.data, [[1.0, 7.0], [2.0, 8.0]])


class TestFourRelations:
    rels, tree = build(3)
    counts = compute_counts(rels, tree)

    def col(self, name):
        return self.tree.column_offsets[0][self.tree.index(name)]

    def find_block(self, out, col, expected):
        for start, block in out.blocks:
            if start == col and block.shape == expected.shape and np.allclose(block, expected, rtol=1e-12):
                return True
        return False

    def test_gram_and_oracle(self):
        A = materialize_join(self.rels, self.tree).matrix
        r0 = compute_r0(self.rels, self.tree, self.counts)
        assert gram_error(r0, A) <= 1e-12
        assert r0.num_rows <= sum(len(r) for r in self.rels.values())
        R = figaro_qr(self.rels, self.tree).R.matrix
        np.testing.assert_allclose(R, householder_oracle(A).matrix, atol=1e-11 * np.abs(R).max())

    def test_leaf_tail_blocks(self):
        r0 = compute_r0(self.rels, self.tree, self.counts)
        S4, S3 = self.rels["S4"], self.rels["S3"]
        for name, rel, key in (("S4", S4, "c1"), ("S4", S4, "c2"), ("S3", S3, "b1")):
            i = self.tree.index(name)
            rows = rel.data[[k == (key,) for k in rel.keys]]
            expected = math.sqrt(self.counts.phi_circ[i][(key,)]) * tail(rows)
            assert self.find_block(r0, self.col(name), expected), (name, key)

    def test_worked_scales_and_heads(self):
        t, rels = self.tree, self.rels
        s2 = t.index("S2")
        state = heads_and_tails(s2, rels["S2"], t, self.counts)
        kids = [figaro(rels, t, self.counts, j) for j in t.children[s2]]
        process_and_join_children(s2, state, kids, rels["S2"], t)
        y3 = self.col("S3") - self.col("S2")
        for row, (a, b, c) in enumerate(state.keys):
            n3 = group_size(rels["S3"], (b,))
            beta = math.sqrt(group_size(rels["S2"], (a, b, c)) * n3 * group_size(rels["S4"], (c,)))
            assert state.scales[row] == pytest.approx(beta, rel=1e-14)
            h3 = head(rels["S3"].data[[k == (b,) for k in rels["S3"].keys]])
            assert state.data[row, y3] == pytest.approx(beta / math.sqrt(n3) * h3[0, 0], rel=1e-13)


def test_leaf_key_order_differs_from_parent():
    P = Relation.from_rows("P", ["k1", "k2"], ["p"], [(1, 1), (1, 2), (2, 1)], [[1.0], [2.0], [3.0]])
    C = Relation.from_rows("C", ["k2", "k1"], ["c"], [(1, 1), (1, 1), (2, 1), (1, 2)],
                           [[1.0], [5.0], [2.0], [3.0]])
    rels = {"P": P, "C": C}
    tree = JoinTree.from_term("P(C)", rels)
    A = materialize_join(rels, tree).matrix
    R = figaro_qr(rels, tree).R.matrix
    np.testing.assert_allclose(R, householder_oracle(A).matrix, atol=1e-13)


def test_accumulator_bounds():
    acc = OutAccumulator(3)
    acc.append(0, np.zeros((0, 2)))
    assert acc.num_rows == 0
    with pytest.raises(ValueError):
        acc.append(2, np.ones((1, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_row_bound_and_gram(seed, nrel):
    rels, tree = random_acyclic_database(nrel, 25, 5, 3, seed=seed)
    A = materialize_join(rels, tree).matrix
    r0 = compute_r0(rels, tree, compute_counts(rels, tree))
    assert r0.num_rows <= sum(len(r) for r in rels.values())
    assert gram_error(r0, A) <= 1e-10


@pytest.mark.parametrize("threads", [2, 8])
def test_threads_identical_r0(threads):
    rels, tree = random_acyclic_database(4, 50, 6, 3, seed=77)
    counts = compute_counts(rels, tree)
    a = compute_r0(rels, tree, counts).to_dense()
    b = compute_r0(rels, tree, counts, threads=threads).to_dense()
    assert np.array_equal(a, b)
