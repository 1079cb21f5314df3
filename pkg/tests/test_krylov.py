import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ot_steady.errors import EvaluationError
from ot_steady.krylov import (NewtonKrylovOptions, NoisyQuadratic, ResidualMap, SolverReport,
                              fd_jvp, gmres, jvp_error_sweep, min_horizon, newton_krylov,
                              recommend_eps, residual_spectrum_check, rms)


def bisect(f, a, b, tol=1e-14):
    fa = f(a)
    while b - a > tol:
        c = 0.5 * (a + b)
        if np.sign(f(c)) == np.sign(fa):
            a, fa = c, f(c)
        else:
            b = c
    return 0.5 * (a + b)


def test_fd_jvp_linear_exact():
    A = np.random.default_rng(0).normal(size=(6, 6))
    v = np.arange(1.0, 7.0)
    for eps in (1e-8, 1e-6, 1e-4):
        out = fd_jvp(lambda u: A @ u, np.ones(6), v, eps)
        assert np.linalg.norm(out - A @ v) <= 1e-10 * np.linalg.norm(A @ v) * 1e3


@pytest.mark.parametrize("eps", [1e-8, 1e-6, 1e-4])
def test_fd_jvp_linear_relative_1e10(eps):
    # exact in exact arithmetic; use dyadic data so rounding stays tiny
    A = np.diag([1.0, 2.0, 4.0, 0.5])
    v = np.array([1.0, -1.0, 1.0, -1.0])
    out = fd_jvp(lambda u: A @ u, np.zeros(4), v, eps)
    assert np.linalg.norm(out - A @ v) <= 1e-10 * np.linalg.norm(A @ v)


def test_fd_jvp_square():
    out = fd_jvp(lambda u: u ** 2, np.array([1.0]), np.array([1.0]), 1e-6)
    assert out[0] == pytest.approx(2.000001, abs=1e-9)


def test_fd_jvp_errors():
    with pytest.raises(ValueError):
        fd_jvp(lambda u: u, np.ones(2), np.zeros(2), 1e-6)
    with pytest.raises(ValueError):
        fd_jvp(lambda u: u, np.ones(2), np.ones(2), 0.0)
    psi = ResidualMap(lambda u: u * np.inf, 2)
    with pytest.raises(EvaluationError):
        fd_jvp(psi, np.ones(2), np.ones(2), 1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_fd_jvp_polynomial_maps(n, seed):
    # cubic maps u -> M u + b u^2 + c u^3 whose Jacobian stays well away from
    # singular, so the forward-difference bias is O(eps) relative to J v
    rng = np.random.default_rng(seed)
    M = np.eye(n) + 0.1 * rng.uniform(-1, 1, (n, n)) / n
    b, c = rng.uniform(-0.1, 0.1, (2, n))
    u = rng.uniform(-1, 1, n)
    v = rng.uniform(0.5, 1.5, n) * rng.choice([-1, 1], n)

    def poly(x):
        return M @ x + b * x ** 2 + c * x ** 3

    exact = M @ v + (2 * b * u + 3 * c * u ** 2) * v
    out = fd_jvp(poly, u, v, 1e-6)
    assert np.linalg.norm(out - exact) <= 1e-6 * np.linalg.norm(exact)


def test_fd_jvp_noise_blows_up_small_eps():
    psi = NoisyQuadratic(20, sigma=1.0, N=10 ** 6, seed=0)  # noise 1e-3
    u = np.linspace(-1, 1, 20)
    v = np.ones(20)
    exact = psi.jacobian_vector(u, v)
    err = {e: np.mean([rms(fd_jvp(psi, u, v, e) - exact) for _ in range(20)])
           for e in (1e-8, 1e-1)}
    assert err[1e-8] >= 1e3 * err[1e-1]


def test_gmres_small_cases():
    r = gmres(lambda v: v, np.array([1.0, 2.0, 3.0]), 1e-8)
    np.testing.assert_allclose(r.x, [1, 2, 3])
    assert r.iterations == 1 and r.converged
    r = gmres(lambda v: np.array([1.0, 2.0]) * v, np.array([1.0, 2.0]), 1e-10)
    np.testing.assert_allclose(r.x, [1, 1])
    assert gmres(lambda v: v, np.zeros(3)).converged


def test_gmres_contract_random_systems():
    rng = np.random.default_rng(7)
    for trial in range(300):
        A = rng.normal(size=(20, 20)) + rng.uniform(2, 8) * np.eye(20)
        b = rng.normal(size=20)
        eta = 10.0 ** rng.uniform(-10, -1)
        res = gmres(lambda v: A @ v, b, eta, restart=int(rng.integers(3, 25)),
                    max_restarts=int(rng.integers(1, 6)))
        if res.converged:
            assert np.linalg.norm(A @ res.x - b) <= eta * np.linalg.norm(b)
            x = np.linalg.solve(A, b)
            assert np.linalg.norm(A @ (res.x - x)) <= eta * np.linalg.norm(b)


def test_gmres_flags_stagnation():
    # a rotation: Krylov space of dimension 1 cannot reduce the residual
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    res = gmres(lambda v: A @ v, np.array([1.0, 0.0]), 1e-6, restart=1, max_restarts=5)
    assert res.stagnated and not res.converged


def test_gmres_validation():
    with pytest.raises(ValueError):
        gmres(lambda v: v, np.ones(2), eta=1.0)
    with pytest.raises(ValueError):
        gmres(lambda v: v, np.array([np.nan, 1.0]))


def test_newton_linear_scalar():
    rep = newton_krylov(lambda u: 0.5 * u, np.array([4.0]), NewtonKrylovOptions(stop=1e-8))
    assert abs(rep.u[0]) <= 1e-8 and rep.iterations <= 2 and rep.converged


def test_newton_tanh_root_and_quadratic_phase():
    root = bisect(lambda u: u - np.tanh(2 * u), 0.5, 1.5)
    rep = newton_krylov(lambda u: u - np.tanh(2 * u), np.array([1.5]),
                        NewtonKrylovOptions(eps=1e-7, eta=1e-6, stop=1e-12))
    assert abs(rep.u[0] - root) <= 1e-6
    assert root == pytest.approx(0.95750, abs=1e-5)
    r = rep.residual_norms
    # at least linear, with a visibly superlinear step
    assert all(b < a for a, b in zip(r, r[1:]))
    assert any(r[k + 1] <= 10 * r[k] ** 2 for k in range(len(r) - 1) if r[k] < 0.1)


def test_newton_budget_and_status():
    A = np.diag(np.linspace(0.1, 1, 10))
    rep = newton_krylov(ResidualMap(lambda u: A @ u, 10, horizon=2.0), np.ones(10),
                        NewtonKrylovOptions(eta=1e-6, eval_budget=5, stop=1e-14))
    assert rep.status == "budget" and not rep.converged
    assert rep.total_evals <= 5
    assert rep.sim_time == 2.0 * rep.total_evals
    assert rep.total_evals >= rep.iterations


def test_newton_nonfinite_aborts_with_partial_report():
    calls = {"n": 0}

    def psi(u):
        calls["n"] += 1
        return u if calls["n"] < 3 else u * np.nan

    rep = newton_krylov(psi, np.ones(3), NewtonKrylovOptions())
    assert rep.status == "error" and len(rep.residual_norms) == 1


def test_report_csv(tmp_path):
    rep = SolverReport(np.zeros(1), [1.0, 0.5], [1, 4])
    rep.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().split() == ["iter,residual,evals", "0,1,1", "1,0.5,4"]


def noisy_linear(nu, seed=0):
    rng = np.random.default_rng(seed)
    A = np.diag(np.linspace(0.2, 1.0, 20))
    return lambda u: A @ (u - 1.0) + nu * rng.standard_normal(20)


def test_newton_noise_plateau():
    for nu in (1e-4, 1e-3, 1e-2):
        eps = 0.1
        rep = newton_krylov(noisy_linear(nu), np.zeros(20),
                            NewtonKrylovOptions(eps=eps, eta=0.1, restart=10, max_iters=15,
                                                stop=0.0))
        plateau = np.median(rep.residual_norms[-5:])
        bound = nu / eps + eps
        assert 0.3 * nu <= plateau <= 10 * bound


def test_recommend_eps():
    assert recommend_eps(1.0, 10 ** 4) == pytest.approx(0.1)
    assert recommend_eps(0.0, 10 ** 4) == pytest.approx(1.49e-8, rel=1e-2)
    assert recommend_eps(2.0, 10 ** 8) == pytest.approx(1e-2)
    with pytest.raises(ValueError):
        recommend_eps(-1, 10)


def test_min_horizon():
    assert min_horizon(-1, -2) == pytest.approx(2.302585, abs=1e-6)
    assert min_horizon(-1, -11) == pytest.approx(0.2302585, abs=1e-7)
    assert min_horizon(-1, -2, eta=1.0) == 0.0
    with pytest.raises(ValueError):
        min_horizon(-2, -1)
    with pytest.raises(ValueError):
        min_horizon(-1, -2, eta=0.0)


def test_residual_spectrum_check():
    assert residual_spectrum_check([-1.0], 1.0) <= 1e-6
    assert residual_spectrum_check([0.0], 1.0) <= 1e-6
    assert residual_spectrum_check([-1.0, -2.0, -5.0], 0.5) <= 1e-6


def test_jvp_error_sweep_noiseless_is_pure_bias():
    psi = NoisyQuadratic(10, 0.0, 1)
    u, v = np.zeros(10), np.ones(10)
    rows = jvp_error_sweep(psi, u, v, [1e-5, 1e-4, 1e-3, 1e-2, 1e-1], 2,
                           reference=psi.jacobian_vector(u, v))
    assert np.all(np.diff(rows[:, 1]) > 0)
    with pytest.raises(ValueError):
        jvp_error_sweep(psi, u, v, [1e-3, 1e-2], 1)
    with pytest.raises(ValueError):
        jvp_error_sweep(psi, u, v, [1e-3], 2)
