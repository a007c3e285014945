import numpy as np
import pytest

from figaro.errors import JoinSizeError
from figaro.postprocess import householder_oracle
from figaro.relational import materialize_join, validate_join_tree
from figaro.testbench import (
    accuracy_experiment,
    cartesian_product_database,
    generate_ground_truth,
    oracle_r_streaming,
    random_acyclic_database,
    relative_error,
    scaling_experiment,
)


def test_scalar_ground_truth():
    inst = generate_ground_truth(2, 1, 1, 1, seed=3)
    S = inst.relations["S"].data
    assert inst.r_fixed.shape == (1, 1)
    assert 1 * (S.T @ S)[0, 0] == pytest.approx(inst.r_fixed[0, 0] ** 2, rel=1e-14)


def test_zero_column_sums():
    q = 64
    inst = generate_ground_truth(16, q, 3, 4, seed=1)
    assert np.all(np.abs(inst.relations["T"].data.sum(axis=0)) <= 1e-15 * q * 3)


def test_oracle_reproduces_fixed_block():
    inst = generate_ground_truth(2**9, 2**9, 2**4, 2**4, seed=0)
    R = oracle_r_streaming(inst.relations, inst.tree)
    assert relative_error(R[:16, :16], inst.r_fixed) <= 1e-12


def test_householder_small_product():
    inst = generate_ground_truth(40, 30, 3, 2, seed=2)
    A = materialize_join(inst.relations, inst.tree).matrix
    assert relative_error(householder_oracle(A).matrix[:3, :3], inst.r_fixed) <= 1e-12


def test_relative_error_properties():
    R = np.triu(np.random.default_rng(0).uniform(1, 2, size=(4, 4)))
    assert relative_error(R, R) == 0.0
    assert relative_error(1.001 * R, R) == pytest.approx(1e-3, rel=1e-9)
    assert relative_error(-R, R) == 0.0
    with pytest.raises(ValueError):
        relative_error(R, R[:3, :3])


def test_accuracy_small():
    rep = accuracy_experiment(2**9, 2**4, seed=0)
    assert rep.relative_frobenius <= 5e-14 and rep.seed == 0


def test_bad_ground_truth_shape():
    with pytest.raises(ValueError):
        generate_ground_truth(2, 5, 3, 1)


def test_random_database_determinism_and_validity():
    a = random_acyclic_database(4, 20, 5, 3, seed=11)
    b = random_acyclic_database(4, 20, 5, 3, seed=11)
    assert a[1] == b[1] and all(a[0][k] == b[0][k] for k in a[0])
    validate_join_tree(a[1])


def test_single_key_value_gives_cartesian_shape():
    rels, tree = random_acyclic_database(2, 10, 3, key_domain=1, seed=5)
    A = materialize_join(rels, tree).matrix
    assert A.shape[0] == len(rels["R0"]) * len(rels["R1"])


def test_full_rank_flag():
    rels, tree = random_acyclic_database(3, 30, 5, 3, seed=6, full_rank=True)
    A = materialize_join(rels, tree).matrix
    assert np.linalg.matrix_rank(A) == A.shape[1]


def test_streaming_oracle_matches_householder():
    rels, tree = random_acyclic_database(3, 30, 4, 3, seed=8, full_rank=True)
    A = materialize_join(rels, tree).matrix
    R = oracle_r_streaming(rels, tree, chunk_rows=16)
    np.testing.assert_allclose(R, householder_oracle(A).matrix, atol=1e-11 * np.abs(R).max())


def test_scaling_records():
    recs = scaling_experiment(8, 16, cols=2, runs=1)
    assert [(r["engine"], r["rows"]) for r in recs] == [
        ("figaro", 8), ("materialized", 8), ("figaro", 16), ("materialized", 16)]
    assert all(r["seconds"] > 0 and r["cols"] == 4 for r in recs)


def test_cartesian_database_shape():
    rels, tree = cartesian_product_database(3, 4, 2, 1, seed=0)
    assert materialize_join(rels, tree).matrix.shape == (12, 3)
    with pytest.raises(JoinSizeError):
        materialize_join(rels, tree, cap=5)
