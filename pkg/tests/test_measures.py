import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ot_steady.errors import DegenerateError
from ot_steady.measures import (Cdf2Grid, MonotoneCurve, conditional_cdf_y, empirical_cdf2,
                                empirical_icdf, histogram, invert_monotone, marginal_cdf_x,
                                percentile_grid, sample_from_icdf, write_cdf2_csv,
                                write_histogram_csv, write_icdf_csv)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def brute_cdf2(pts, xg, yg):
    return np.array([[np.mean((pts[:, 0] <= x) & (pts[:, 1] <= y)) for y in yg] for x in xg])


def test_percentile_grid_midpoints():
    np.testing.assert_allclose(percentile_grid(4), [0.125, 0.375, 0.625, 0.875])
    with pytest.raises(ValueError):
        percentile_grid(0)


def test_empirical_icdf_identity_when_n_equals_k():
    x = np.array([3.0, 1.0, 2.0, 0.0])
    np.testing.assert_array_equal(empirical_icdf(x, 4).values, [0, 1, 2, 3])


def test_empirical_icdf_rank_rule():
    # ranks ceil((k - 1/2) N / K) for N = 10, K = 4 -> 2, 4, 7, 9
    x = np.arange(1.0, 11.0)
    np.testing.assert_array_equal(empirical_icdf(x[::-1], 4).values, [2, 4, 7, 9])


def test_empirical_icdf_errors():
    with pytest.raises(ValueError):
        empirical_icdf(np.arange(3.0), 4)
    with pytest.raises(ValueError):
        empirical_icdf(np.arange(3.0), 1)


def test_sample_from_icdf_uniform_curve():
    curve = MonotoneCurve(percentile_grid(10))
    np.testing.assert_allclose(sample_from_icdf(curve, 10), percentile_grid(10), atol=1e-15)


def test_round_trip_identity_n_equals_k():
    vals = np.sort(np.random.default_rng(1).normal(size=50))
    out = empirical_icdf(sample_from_icdf(vals, 50), 50).values
    assert np.max(np.abs(out - vals)) <= 1e-10


def test_round_trip_half_sample_shift_bound():
    # for N > K the restricted ranks sit half a sample above the midpoints
    K, N = 100, 10_000
    vals = np.linspace(-1, 1, K)
    out = empirical_icdf(sample_from_icdf(vals, N), K).values
    slope = np.max(np.diff(vals) / np.diff(percentile_grid(K)))
    assert np.max(np.abs(out - vals)) <= slope * 0.5 / N + 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(5, 300), elements=finite), st.integers(2, 5))
def test_empirical_icdf_monotone(x, K):
    vals = empirical_icdf(x, K).values
    assert np.all(np.diff(vals) >= 0)


def test_invert_monotone_cases():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    F = np.array([0.0, 0.5, 0.5, 1.0])
    assert invert_monotone(x, F, 0.25) == pytest.approx(0.5)
    assert invert_monotone(x, F, 0.5) == pytest.approx(1.0)  # flat: left edge
    assert invert_monotone(x, F, -1.0) == 0.0
    assert invert_monotone(x, F, 2.0) == 3.0
    assert isinstance(invert_monotone(x, F, 0.75), float)
    with pytest.raises(ValueError):
        invert_monotone([], [], 0.5)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(2, 40), elements=st.floats(0, 1)),
       st.floats(0.001, 0.999))
def test_invert_monotone_is_inverse(incs, p):
    F = np.cumsum(incs)
    if F[-1] <= 0:
        return
    F = np.concatenate([[0.0], F / F[-1]])
    x = np.linspace(0, 1, F.size)
    xq = invert_monotone(x, F, p)
    assert np.interp(xq, x, F) == pytest.approx(p, abs=1e-12)


def test_empirical_cdf2_matches_brute_force():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(500, 2))
    pts[:10] = np.round(pts[:10], 1)  # values on grid nodes count as <=
    xg = np.linspace(-2, 2, 41)
    yg = np.linspace(-3, 3, 31)
    cdf = empirical_cdf2(pts, xg, yg)
    np.testing.assert_allclose(cdf.values, brute_cdf2(pts, xg, yg), atol=1e-15)
    assert cdf.count == 500


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 60), st.just(2)), elements=st.floats(-3, 3)))
def test_empirical_cdf2_monotone(pts):
    g = np.linspace(-2, 2, 9)
    F = empirical_cdf2(pts, g, g).values
    assert np.all(np.diff(F, axis=0) >= 0) and np.all(np.diff(F, axis=1) >= 0)
    assert np.all((F >= 0) & (F <= 1))


def test_empirical_cdf2_rejects_bad_grid():
    with pytest.raises(ValueError):
        empirical_cdf2(np.zeros((2, 2)), [0, 0], [0, 1])


def test_marginal_and_conditional_of_product():
    g = np.linspace(0, 1, 11)
    cdf = Cdf2Grid(g, g, np.outer(g, g ** 2))
    np.testing.assert_allclose(marginal_cdf_x(cdf), g)
    np.testing.assert_allclose(conditional_cdf_y(cdf, 0.45), g ** 2, atol=1e-12)


def test_conditional_errors():
    g = np.linspace(0, 1, 5)
    cdf = Cdf2Grid(g, g, np.outer(g, g))
    with pytest.raises(ValueError):
        conditional_cdf_y(cdf, 1.5)
    flat = Cdf2Grid(g, g, np.zeros((5, 5)))
    with pytest.raises(DegenerateError):
        conditional_cdf_y(flat, 0.5)
    with pytest.raises(DegenerateError):
        marginal_cdf_x(flat)


def test_cdf2grid_shape_check():
    with pytest.raises(ValueError):
        Cdf2Grid([0, 1], [0, 1, 2], np.zeros((2, 2)))


def test_histogram_1d_and_2d():
    pts = np.array([0.1, 0.2, 0.7])
    np.testing.assert_array_equal(histogram(pts, [0, 0.5, 1]), [2, 1])
    p2 = np.array([[0.1, 0.1], [0.9, 0.1], [0.9, 0.9]])
    e = np.array([0, 0.5, 1])
    np.testing.assert_array_equal(histogram(p2, (e, e)), [[1, 0], [1, 1]])


def test_csv_writers(tmp_path):
    write_icdf_csv(tmp_path / "a.csv", MonotoneCurve([1.0, 2.0]))
    assert (tmp_path / "a.csv").read_text().splitlines() == [
        "percentile,value", "0.25,1", "0.75,2"]
    g = np.array([0.0, 1.0])
    write_cdf2_csv(tmp_path / "b.csv", Cdf2Grid(g, g, np.eye(2)))
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 5
    write_histogram_csv(tmp_path / "c.csv", [0, 1, 2], [3, 4])
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "0,1,3"
