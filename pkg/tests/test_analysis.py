import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampedwave.analysis import (
    analytic_energy,
    analytic_solution,
    convergence_study,
    error_norms,
    exact_rate_constant_a,
    fit_decay_rate,
    operator_norm,
    poincare_check,
    rate_bound_constants,
    stability_constants,
    transfer_analytic,
)
from dampedwave.assembly import DampingField
from dampedwave.errors import ConvergenceError
from dampedwave.mesh import FEFunction
from dampedwave.timestepper import EnergySeries, SchemeParams, State, Stepper

from oracles import dense_matrices, dense_step_matrix, gram_norm_of, make_ops

GRID = [2.0**j for j in range(-5, 11)]


# ---------------------------------------------------------------- constants


def test_constants_at_ten():
    c = stability_constants(10.0, 10.0, 1.0)
    assert c.alpha_cont == pytest.approx(4000 / 3 / 15000, rel=1e-12)
    assert c.alpha_cont == pytest.approx(0.08889, abs=1e-5)
    assert c.eps0 == pytest.approx(2000 / 45100, rel=1e-12)
    assert c.alpha_disc == pytest.approx(0.014782, abs=1e-6)
    assert c.tau0 == pytest.approx(0.5 / (2000 / 45100 * 1.75), rel=1e-12)
    assert c.tau0 == pytest.approx(6.443, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(a0=st.floats(1e-3, 1e3), ratio=st.floats(1.0, 10.0), theta=st.floats(0.51, 1.0))
def test_constants_positive_and_ordered(a0, ratio, theta):
    c = stability_constants(a0, a0 * ratio, theta)
    assert c.alpha_cont > 0 and c.alpha_disc > 0 and c.eps0 > 0 and c.tau0 > 0
    if ratio == 1.0:
        assert c.alpha_disc < c.alpha_cont


def test_constants_domain_errors():
    with pytest.raises(ValueError):
        stability_constants(0.0, 1.0)
    with pytest.raises(ValueError):
        stability_constants(2.0, 1.0)
    with pytest.raises(ValueError):
        stability_constants(1.0, 1.0, 0.5)
    assert np.isnan(stability_constants(1.0, 1.0, None).tau0)


@pytest.mark.parametrize("ratio", [1.0, 2.0, 4.0])
@pytest.mark.parametrize("which", ["cont", "disc"])
def test_rates_unimodal_in_a0(ratio, which):
    # increasing up to a single peak, decreasing afterwards
    a0 = np.geomspace(2**-5, 2**10, 200)
    alpha = np.array([getattr(stability_constants(x, ratio * x, None), f"alpha_{which}") for x in a0])
    peak = int(np.argmax(alpha))
    assert 0 < peak < len(a0) - 1
    assert np.all(np.diff(alpha[: peak + 1]) > 0)
    assert np.all(np.diff(alpha[peak:]) < 0)
    if which == "cont":
        expected = np.sqrt((8 + 2 * ratio) / ratio**4)
    else:
        expected = np.sqrt((8 + 3 * ratio) / (4 * ratio**4))
    assert a0[peak] == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize("which", ["cont", "disc"])
def test_rate_lower_bound(which):
    c1, c2 = rate_bound_constants(1.0, GRID, which)
    assert c1 > 0 and c2 > 0
    for a in GRID:
        alpha = getattr(stability_constants(a, a, None), f"alpha_{which}")
        assert alpha >= min(c1 * a, c2 / a) * (1 - 1e-12)


# ---------------------------------------------------------------- exact solution


def test_g_examples():
    assert exact_rate_constant_a(2 * np.pi) == pytest.approx(np.pi, rel=1e-12)
    assert exact_rate_constant_a(10.0) == pytest.approx(5 - np.sqrt(25 - np.pi**2), rel=1e-12)
    assert exact_rate_constant_a(10.0) == pytest.approx(1.11022, abs=1e-5)
    assert exact_rate_constant_a(1024.0) == pytest.approx(np.pi**2 / 1024, rel=1e-4)
    assert exact_rate_constant_a(1.0) == 0.5
    with pytest.raises(ValueError):
        exact_rate_constant_a(0.0)


@pytest.mark.parametrize("a", [2 * np.pi, 10.0, 50.0, 1e4])
def test_analytic_solution_satisfies_the_system(a):
    x = np.linspace(0.05, 0.95, 7)
    u0, p0 = analytic_solution(a, x, 0.3)
    u1, p1 = analytic_solution(a, x, 1.3)
    lam = np.log(u1[0] / u0[0])
    assert lam**2 + a * lam + np.pi**2 == pytest.approx(0.0, abs=1e-12 * max(1.0, a * abs(lam)))
    # u = e cos(pi x), p = (pi/lam) e sin(pi x)
    np.testing.assert_allclose(p0, np.pi / lam * np.tan(np.pi * x) * u0, rtol=1e-10)
    assert analytic_solution(a, 0.0, 0.0)[0] == 1.0


def test_analytic_amplitude_and_energy():
    _, p = analytic_solution(10.0, 0.5, 0.0)
    assert p == pytest.approx(-(5 + np.sqrt(25 - np.pi**2)) / np.pi, rel=1e-12)
    assert p == pytest.approx(-2.829705, abs=1e-6)
    assert analytic_energy(10.0, 0.0) == pytest.approx(2.25, abs=5e-3)
    assert analytic_energy(10.0, 2.0) == pytest.approx(2.65e-2, rel=5e-3)


def test_analytic_regime_error():
    with pytest.raises(ValueError):
        analytic_solution(6.0, 0.5, 0.0)


# ---------------------------------------------------------------- fitting


def test_fit_exact_exponential():
    t = np.linspace(0, 5, 51)
    fit = fit_decay_rate((t, 3 * np.exp(-2 * t)))
    assert fit.alpha == pytest.approx(2.0, rel=1e-12)
    assert fit.residual < 1e-12
    assert fit.window == (5, 50)


def test_fit_constant_is_zero():
    t = np.linspace(0, 1, 11)
    assert fit_decay_rate((t, np.full(11, 4.0))).alpha == pytest.approx(0.0, abs=1e-12)


def test_fit_analytic_energy_recovers_twice_g():
    series = EnergySeries(0, np.arange(1001), analytic_energy(10.0, np.arange(1001) * 0.01), 0.01)
    assert fit_decay_rate(series).alpha == pytest.approx(2 * exact_rate_constant_a(10.0), rel=1e-6)
    fit = fit_decay_rate(series, window=(5.0, 10.0))
    assert fit.window == (500, 1000)


def test_fit_errors():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        fit_decay_rate((t, np.array([1.0, 0.5, 0.0, 0.1, 0.1])), window=(0, 1))
    with pytest.raises(ValueError):
        fit_decay_rate((t, np.ones(5)), window=(2.0, 3.0))


# ---------------------------------------------------------------- operator norm


def test_operator_norm_dense_example():
    ops = make_ops(4, 0, 10.0)
    stepper = Stepper(ops, SchemeParams(tau=0.5, theta=1.0))
    MV, A, _, MQ, B = dense_matrices(4, 0, [10.0] * 4)
    P, _ = dense_step_matrix(MV, A, MQ, B, 0.5, 1.0)
    ref = gram_norm_of(np.linalg.matrix_power(P, 2), MV, MQ)
    assert operator_norm(stepper, 2, tol=1e-12) == pytest.approx(ref, rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(
    k=st.integers(0, 1),
    n=st.integers(1, 10),
    tau=st.floats(0.01, 0.5),
    theta=st.floats(0.5, 1.0),
    steps=st.integers(1, 12),
    seed=st.integers(0, 1000),
)
def test_operator_norm_matches_svd(k, n, tau, theta, steps, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 20.0, n)
    ops = make_ops(n, k, a)
    if ops.dim_V + ops.dim_Q > 40:
        return
    MV, A, _, MQ, B = dense_matrices(n, k, a)
    P, _ = dense_step_matrix(MV, A, MQ, B, tau, theta)
    ref = gram_norm_of(np.linalg.matrix_power(P, steps), MV, MQ)
    got = operator_norm(Stepper(ops, SchemeParams(tau=tau, theta=theta)), steps, tol=1e-13)
    assert got == pytest.approx(ref, rel=1e-8)


def test_operator_norm_zero_steps_and_cap():
    ops = make_ops(4, 0, 3.0)
    stepper = Stepper(ops, SchemeParams(tau=0.1, theta=1.0))
    assert operator_norm(stepper, 0) == 1.0
    with pytest.raises(ConvergenceError) as info:
        operator_norm(stepper, 3, tol=1e-300, max_iter=3, method="power")
    assert info.value.estimate > 0
    with pytest.raises(ValueError):
        operator_norm(stepper, 3, method="svd")


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_operator_norm_methods_agree(theta):
    stepper = Stepper(make_ops(12, 0, 2.0), SchemeParams(tau=0.05, theta=theta))
    lz = operator_norm(stepper, 20, tol=1e-12)
    pw = operator_norm(stepper, 20, tol=1e-14, method="power", max_iter=200000)
    assert lz == pytest.approx(pw, rel=1e-6)


# ---------------------------------------------------------------- errors and rates


@pytest.mark.parametrize("transfer", ["projection", "interpolation"])
def test_error_norms_zero_for_transferred_exact(transfer):
    ops = make_ops(8, 0, 10.0)
    u, p = transfer_analytic(10.0, 0.7, ops, transfer)
    row = error_norms(State(u, p, 0), 0.7, 10.0, ops, transfer=transfer)
    assert row.discrete_error == pytest.approx(0.0, abs=1e-13)
    assert row.l2_error_u > 0 and row.l2_error_p > 0


def test_convergence_study_temporal_orders():
    rep = convergence_study("tau", [0.2, 0.1, 0.05], h=1 / 200, theta=1.0)
    assert np.isnan(rep.rates[0])
    assert np.all(np.abs(rep.rates[1:] - 1.0) < 0.15)
    rep2 = convergence_study("tau", [0.2, 0.1, 0.05], h=1 / 200, lam=1.0)
    assert np.all(np.abs(rep2.rates[1:] - 2.0) < 0.15)
    assert rep2.rows[0].theta == pytest.approx(0.7)


def test_convergence_study_argument_errors():
    with pytest.raises(ValueError):
        convergence_study("x", [0.5, 0.25], tau=0.1, theta=1.0)
    with pytest.raises(ValueError):
        convergence_study("h", [0.5, 0.25], tau=0.1, theta=1.0, lam=1.0)
    with pytest.raises(ValueError):
        convergence_study("h", [0.25, 0.5], tau=0.1, theta=1.0)
    with pytest.raises(ValueError):
        convergence_study("h", [0.3], tau=0.1, theta=1.0)
    with pytest.raises(ValueError):
        convergence_study("h", [0.5], tau=0.1, theta=1.0, transfer="nodal")


# ---------------------------------------------------------------- Poincare


def test_poincare_constant_equality():
    ops = make_ops(5, 0, 2.0)
    lhs, rhs = poincare_check(FEFunction(ops.V, np.full(ops.dim_V, -3.0)), DampingField.constant(2.0))
    assert lhs == pytest.approx(3.0, rel=1e-12)
    assert rhs == pytest.approx(3.0, rel=1e-12)


def test_poincare_sine_example():
    ops = make_ops(400, 1, 1.0)
    u = FEFunction(ops.V, np.sin(2 * np.pi * ops.V.dof_coordinates))
    lhs, rhs = poincare_check(u, DampingField.constant(1.0))
    assert lhs == pytest.approx(1 / np.sqrt(2), rel=1e-5)
    assert rhs == pytest.approx(np.sqrt(2), rel=1e-4)


def test_poincare_random_sweep():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        k = int(rng.integers(0, 3))
        a = DampingField.piecewise(rng.uniform(0.01, 10.0, int(rng.integers(1, 6))))
        ops = make_ops(n, k)
        u = FEFunction(ops.V, rng.standard_normal(ops.dim_V) * rng.uniform(0.1, 10))
        lhs, rhs = poincare_check(u, a)
        assert lhs <= rhs + 1e-12


def test_poincare_zero_mean_rejected():
    ops = make_ops(4, 0)
    with pytest.raises(ValueError):
        poincare_check(FEFunction(ops.V, np.ones(ops.dim_V)), DampingField.constant(0.0))


@pytest.mark.parametrize("a", [1 / 32, 1 / 8])
def test_weak_damping_rate_recovered_for_small_steps(a):
    # at tau = 1/20 the scheme's own dissipation dominates weak damping; it fades as tau -> 0
    g = exact_rate_constant_a(a)
    coarse = Stepper(make_ops(20, 0, a), SchemeParams.with_lambda(0.05, 1.0))
    fine = Stepper(make_ops(20, 0, a), SchemeParams.with_lambda(0.002, 1.0))
    r_coarse = -np.log(operator_norm(coarse, 200)) / 10
    r_fine = -np.log(operator_norm(fine, 5000)) / 10
    assert abs(r_coarse - g) / g > 0.3
    assert abs(r_fine - g) / g < 0.01
