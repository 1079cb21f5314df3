import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ot_steady.transport import (TransportPlan, assignment_2d, batched_coupling, ot_map_1d,
                                 velocity_field, w2_sq, wasserstein_1d, wasserstein_gradient,
                                 write_plan_csv)

PERMS = {n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 8)}


def brute_min_cost(X, Y):
    """Exhaustive minimum of the summed squared cost over all permutations."""
    X = X.reshape(len(X), -1)
    Y = Y.reshape(len(Y), -1)
    C = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    P = PERMS[len(X)]
    return C[np.arange(len(X)), P].sum(axis=1).min()


def plan_cost(X, Y, plan):
    return w2_sq(X, Y, plan)[0] * len(X)


def test_ot_map_1d_examples():
    plan = ot_map_1d([0, 1, 2], [2, 0, 1])
    np.testing.assert_array_equal(plan.perm, [1, 2, 0])
    assert w2_sq([0, 1, 2], [2, 0, 1], plan)[0] == 0
    np.testing.assert_array_equal(ot_map_1d([0, 2], [1, 3]).perm, [0, 1])
    with pytest.raises(ValueError):
        ot_map_1d([0, 1], [0])


def test_ot_map_1d_stable_ties():
    np.testing.assert_array_equal(ot_map_1d([1, 1, 1], [5, 5, 5]).perm, [0, 1, 2])


def test_w2_sq_examples():
    assert w2_sq([0, 2], [1, 3], TransportPlan([0, 1])) == (1.0, 1.0)
    assert w2_sq([0, 2], [1, 3], TransportPlan([1, 0]))[0] == 5.0
    assert w2_sq([[1, 2]], [[1, 2]], TransportPlan([0]))[0] == 0.0


def test_plan_must_be_bijection():
    with pytest.raises(ValueError):
        TransportPlan([0, 0])


def test_assignment_2d_examples():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    plan = assignment_2d(X, X[::-1])
    np.testing.assert_array_equal(plan.perm, [1, 0])
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    Y = np.array([[0.0, 1.0], [1.0, 1.0]])
    plan = assignment_2d(X, Y)
    np.testing.assert_array_equal(plan.perm, [0, 1])
    assert w2_sq(X, Y, plan)[0] == 1.0


def test_assignment_cap():
    with pytest.raises(ValueError, match="batched_coupling"):
        assignment_2d(np.zeros((5, 2)), np.zeros((5, 2)), cap=4)


def test_exhaustive_oracle_1d_and_2d():
    rng = np.random.default_rng(0)
    for n in range(1, 8):
        for _ in range(1000):
            X, Y = rng.normal(size=n), rng.normal(size=n)
            assert abs(plan_cost(X, Y, ot_map_1d(X, Y)) - brute_min_cost(X, Y)) <= 1e-12
            X2, Y2 = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
            assert abs(plan_cost(X2, Y2, assignment_2d(X2, Y2)) - brute_min_cost(X2, Y2)) <= 1e-12


def test_batched_coupling_blocks():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    plan = batched_coupling(X, Y, 4, np.random.default_rng(2))
    assert sorted(np.bincount(plan.blocks)) == [2, 4, 4]
    full = batched_coupling(X, Y, 10, np.random.default_rng(3))
    assert plan_cost(X, Y, full) == pytest.approx(plan_cost(X, Y, assignment_2d(X, Y)), abs=1e-12)
    with pytest.raises(ValueError):
        batched_coupling(X, Y, 11, rng)


def test_batched_coupling_single_particle_blocks_keep_own_image():
    # each batch is matched against the images of its own particles
    X, Y = np.zeros((6, 2)), np.arange(12.0).reshape(6, 2)
    plan = batched_coupling(X, Y, 1, np.random.default_rng(5))
    np.testing.assert_array_equal(plan.perm, np.arange(6))
    assert len(np.unique(plan.blocks)) == 6


def test_batched_coupling_pairs_within_blocks():
    rng = np.random.default_rng(6)
    X, Y = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    plan = batched_coupling(X, Y, 8, rng)
    np.testing.assert_array_equal(plan.blocks[plan.perm], plan.blocks)
    assert np.bincount(plan.blocks).tolist() == [8] * 6 + [2]


def test_batched_cost_dominates_exact():
    rng = np.random.default_rng(4)
    for _ in range(200):
        X, Y = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        b = batched_coupling(X, Y, 2, rng)
        assert plan_cost(X, Y, b) >= brute_min_cost(X, Y) - 1e-12


def test_gradient_and_velocity():
    plan = TransportPlan([0])
    np.testing.assert_array_equal(wasserstein_gradient([0.0], [1.0], plan), [-1.0])
    np.testing.assert_array_equal(velocity_field([0.0], [1.0], plan, 0.5), [2.0])
    with pytest.raises(ValueError):
        velocity_field([0.0], [1.0], plan, 0.0)
    Y = np.array([3.0, 1.0, 2.0])
    p = ot_map_1d(Y[[1, 2, 0]], Y)
    np.testing.assert_array_equal(wasserstein_gradient(Y[[1, 2, 0]], Y, p), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 10), st.integers(0, 10_000))
def test_gradient_velocity_identities(n, h, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    plan = assignment_2d(X, Y)
    g = wasserstein_gradient(X, Y, plan)
    v = velocity_field(X, Y, plan, h)
    np.testing.assert_allclose(g, -h * v, atol=1e-12)
    assert h * h * np.sum(v * v) / n == pytest.approx(w2_sq(X, Y, plan)[0], rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.tuples(st.just(3), st.integers(1, 20)), elements=st.floats(-10, 10)))
def test_w2_metric_axioms(arr):
    a, b, c = arr
    ab, ba = wasserstein_1d(a, b), wasserstein_1d(b, a)
    assert ab >= 0 and ab == pytest.approx(ba, abs=1e-12)
    assert wasserstein_1d(a, a) == 0
    assert ab <= wasserstein_1d(a, c) + wasserstein_1d(c, b) + 1e-12


def test_plan_csv(tmp_path):
    write_plan_csv(tmp_path / "p.csv", TransportPlan([1, 0]))
    assert (tmp_path / "p.csv").read_text().split() == ["i,sigma_i", "0,1", "1,0"]
