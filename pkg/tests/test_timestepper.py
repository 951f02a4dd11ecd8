import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampedwave import kernels
from dampedwave.analysis import stability_constants
from dampedwave.errors import BlowUpError
from dampedwave.timestepper import (
    SchemeParams,
    State,
    StateHistory,
    Stepper,
    difference_quotient,
    energy,
    modified_energy,
)

from oracles import dense_matrices, dense_step, make_ops

BACKENDS = ["python"] + (["cython"] if kernels.AVAILABLE else [])


def _random_state(ops, rng):
    return State(rng.standard_normal(ops.dim_V), rng.standard_normal(ops.dim_Q))


# ---------------------------------------------------------------- parameters


def test_scheme_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(tau=0.0)
    with pytest.raises(ValueError):
        SchemeParams(tau=0.1, theta=1.5)
    with pytest.raises(ValueError):
        SchemeParams.with_lambda(0.6, 1.0)  # 1/2 + 0.6 > 1
    with pytest.raises(ValueError):
        SchemeParams.with_lambda(0.1, -1.0)
    assert SchemeParams.with_lambda(0.1, 2.0).effective_theta == pytest.approx(0.7)
    assert SchemeParams(tau=0.1, theta=0.25).effective_theta == 0.25


def test_state_history_ordering():
    hist = StateHistory(2)
    for n in range(4):
        hist.push(State(np.full(1, n), np.zeros(1), n))
    assert len(hist) == 2
    assert [s.n for s in hist.newest_first(2)] == [3, 2]
    with pytest.raises(ValueError):
        hist.push(State(np.zeros(1), np.zeros(1), 7))
    with pytest.raises(ValueError):
        hist.newest_first(3)


def test_difference_quotient_binomial():
    vs = [np.array([9.0]), np.array([4.0]), np.array([1.0])]  # newest first
    assert difference_quotient(vs, 1, 0.5)[0] == pytest.approx(10.0)
    assert difference_quotient(vs, 2, 0.5)[0] == pytest.approx((9 - 8 + 1) / 0.25)


# ---------------------------------------------------------------- dense oracle


@pytest.mark.parametrize("theta", [0.0, 0.5, 0.7, 1.0])
def test_step_matches_dense_oracle_5x5(theta, rng):
    # 2 cells, k=0: dim V + dim Q = 3 + 2
    a = np.array([1.5, 4.0])
    ops = make_ops(2, 0, a)
    MV, A, _, MQ, B = dense_matrices(2, 0, a)
    stepper = Stepper(ops, SchemeParams(tau=0.3, theta=theta))
    s = _random_state(ops, rng)
    u, p = dense_step(MV, A, MQ, B, 0.3, theta, s.u, s.p)
    out = stepper.step(s)
    np.testing.assert_allclose(out.u, u, atol=1e-12)
    np.testing.assert_allclose(out.p, p, atol=1e-12)
    F, G = rng.standard_normal(3), rng.standard_normal(2)
    u, p = dense_step(MV, A, MQ, B, 0.3, theta, s.u, s.p, F, G)
    out = stepper.step(s, (F, G))
    np.testing.assert_allclose(out.u, u, atol=1e-12)
    np.testing.assert_allclose(out.p, p, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    k=st.integers(0, 1),
    n=st.integers(1, 12),
    tau=st.floats(1e-3, 1.0),
    theta=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**31 - 1),
)
def test_step_matches_dense_oracle_small_systems(k, n, tau, theta, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.1, 20.0, n)
    ops = make_ops(n, k, a)
    if ops.dim_V + ops.dim_Q > 40:
        return
    MV, A, _, MQ, B = dense_matrices(n, k, a)
    s = _random_state(ops, rng)
    u, p = dense_step(MV, A, MQ, B, tau, theta, s.u, s.p)
    out = Stepper(ops, SchemeParams(tau=tau, theta=theta)).step(s)
    scale = 1.0 + max(np.abs(u).max(), np.abs(p).max())
    np.testing.assert_allclose(out.u, u, atol=1e-10 * scale)
    np.testing.assert_allclose(out.p, p, atol=1e-10 * scale)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_schur_and_monolithic_agree(k, rng):
    ops = make_ops(9, k, rng.uniform(1, 5, 9))
    sch = Stepper(ops, SchemeParams(tau=0.05, theta=0.6))
    mono = Stepper(ops, SchemeParams(tau=0.05, theta=0.6), solver="monolithic")
    s = _random_state(ops, rng)
    loads = (rng.standard_normal(ops.dim_V), rng.standard_normal(ops.dim_Q))
    for ld in (None, loads):
        a, b = sch.step(s, ld), mono.step(s, ld)
        np.testing.assert_allclose(a.u, b.u, atol=1e-12)
        np.testing.assert_allclose(a.p, b.p, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 2**31 - 1))
def test_step_is_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    ops = make_ops(6, 1, 3.0)
    stepper = Stepper(ops, SchemeParams(tau=0.1, theta=0.75))
    x, y = _random_state(ops, rng), _random_state(ops, rng)
    comb = stepper.step(State(alpha * x.u + beta * y.u, alpha * x.p + beta * y.p))
    sx, sy = stepper.step(x), stepper.step(y)
    np.testing.assert_allclose(comb.u, alpha * sx.u + beta * sy.u, atol=1e-11)
    np.testing.assert_allclose(comb.p, alpha * sx.p + beta * sy.p, atol=1e-11)


# ---------------------------------------------------------------- kernels


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("k", [0, 1])
def test_propagate_equals_repeated_steps(backend, k, rng):
    ops = make_ops(8, k, 4.0)
    stepper = Stepper(ops, SchemeParams.with_lambda(0.05, 1.0))
    s = _random_state(ops, rng)
    ref = s
    for _ in range(15):
        ref = stepper.step(ref)
    u, p = stepper.propagate(s.u, s.p, 15, backend=backend)
    np.testing.assert_allclose(u, ref.u, atol=1e-12)
    np.testing.assert_allclose(p, ref.p, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_adjoint_is_transpose(backend, rng):
    ops = make_ops(5, 1, [1.0, 2.0, 7.0, 3.0, 0.5])
    stepper = Stepper(ops, SchemeParams(tau=0.2, theta=0.8))
    x, y = _random_state(ops, rng), _random_state(ops, rng)
    su, sp_ = stepper.propagate(x.u, x.p, 7, backend=backend)
    tu, tp = stepper.propagate_adjoint(y.u, y.p, 7, backend=backend)
    lhs = su @ y.u + sp_ @ y.p
    rhs = x.u @ tu + x.p @ tp
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@pytest.mark.skipif(not kernels.AVAILABLE, reason="compiled kernels not built")
def test_backends_agree_on_runs(rng):
    ops = make_ops(32, 0, 10.0)
    stepper = Stepper(ops, SchemeParams(tau=0.01, theta=0.5))
    s = _random_state(ops, rng)
    a = stepper.run(s, orders=(0, 1, 2), n_steps=100, stride=25, backend="python")
    b = stepper.run(s, orders=(0, 1, 2), n_steps=100, stride=25, backend="cython")
    for k in (0, 1, 2):
        np.testing.assert_allclose(a.energies[k].values, b.energies[k].values, rtol=1e-12)
    np.testing.assert_allclose(a.final.u, b.final.u, atol=1e-13)


def test_get_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_run_kernel_path_matches_python_loop(rng):
    ops = make_ops(10, 1, 3.0)
    s = _random_state(ops, rng)
    fast = Stepper(ops, SchemeParams(tau=0.02, theta=0.9)).run(s, orders=(0, 1, 2), n_steps=40, stride=10)
    slow = Stepper(ops, SchemeParams(tau=0.02, theta=0.9), solver="monolithic").run(
        s, orders=(0, 1, 2), n_steps=40, stride=10
    )
    for k in (0, 1, 2):
        np.testing.assert_array_equal(fast.energies[k].n, slow.energies[k].n)
        np.testing.assert_allclose(fast.energies[k].values, slow.energies[k].values, rtol=1e-10)
    assert [x.n for x in fast.snapshots] == [0, 10, 20, 30, 40]
    assert [x.n for x in fast.history.newest_first(3)] == [40, 39, 38]
    np.testing.assert_allclose(fast.history.newest_first(3)[2].u, slow.history.newest_first(3)[2].u,
                               atol=1e-12)


def test_zero_steps_is_identity(rng):
    ops = make_ops(4, 0)
    stepper = Stepper(ops, SchemeParams(tau=0.1))
    s = _random_state(ops, rng)
    u, p = stepper.propagate(s.u, s.p, 0)
    np.testing.assert_array_equal(u, s.u)
    res = stepper.run(s, n_steps=0)
    assert res.energies[0].values.size == 1


# ---------------------------------------------------------------- energy laws


def _identity_sides(hist, k, ops, tau, theta):
    """Both sides of the discrete energy identity at the newest level."""
    lhs = (energy(hist, k, ops, tau) - energy(hist, k, ops, tau, offset=1)) / tau
    states = hist.newest_first(k + 2)
    du = difference_quotient([s.u for s in states], k + 1, tau)
    dp = difference_quotient([s.p for s in states], k + 1, tau)
    dk_new = difference_quotient([s.u for s in states[: k + 1]], k, tau)
    dk_old = difference_quotient([s.u for s in states[1:]], k, tau)
    w = theta * dk_new + (1 - theta) * dk_old
    MV = ops.M_V.todense()
    MQ = ops.M_Q.toarray()
    A = ops.A.todense()
    rhs = -(theta - 0.5) * tau * (du @ MV @ du + dp @ MQ @ dp) - w @ A @ w
    return lhs, rhs


@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("theta", [0.5, 0.75, 1.0])
def test_energy_identity(k, theta, rng):
    ops = make_ops(8, 0, rng.uniform(0.5, 10.0, 8))
    tau = 0.05
    stepper = Stepper(ops, SchemeParams(tau=tau, theta=theta))
    hist = StateHistory(3, [_random_state(ops, rng)])
    for _ in range(30):
        hist.push(stepper.step(hist.latest))
        if len(hist) < k + 2:
            continue
        lhs, rhs = _identity_sides(hist, k, ops, tau, theta)
        scale = (energy(hist, k, ops, tau) + energy(hist, k, ops, tau, 1)) / tau
        assert abs(lhs - rhs) <= 1e-10 * scale


@pytest.mark.parametrize("theta", [0.5, 0.75, 1.0])
def test_energy_non_increasing(theta, rng):
    ops = make_ops(16, 0, 5.0)
    series = Stepper(ops, SchemeParams(tau=0.05, theta=theta)).run(
        _random_state(ops, rng), n_steps=100).energies[0]
    assert np.all(np.diff(series.values) <= 1e-13 * series.values[:-1])


def test_implicit_euler_strictly_decreasing(rng):
    ops = make_ops(16, 0, 10.0)
    series = Stepper(ops, SchemeParams(tau=0.05, theta=1.0)).run(
        _random_state(ops, rng), n_steps=100).energies[0]
    assert np.all(np.diff(series.values) < 0)


def test_exponential_bound_and_sandwich(rng):
    a0 = a1 = 10.0
    const = stability_constants(a0, a1, 1.0)
    tau = min(0.1, const.tau0)
    ops = make_ops(16, 0, a0)
    stepper = Stepper(ops, SchemeParams(tau=tau, theta=1.0))
    for _ in range(3):
        res = stepper.run(_random_state(ops, rng), n_steps=200)
        e = res.energies[0].values
        n = np.arange(e.size)
        gap = (n[None, :] - n[:, None]) * tau
        le = np.log(e)
        ok = le[None, :] - le[:, None] <= np.log(3.0) - const.alpha_disc * gap + 1e-12
        assert np.all(ok[np.triu_indices(e.size)])
    hist = StateHistory(3, [_random_state(ops, rng)])
    for _ in range(100):
        hist.push(stepper.step(hist.latest))
        e1 = energy(hist, 1, ops, tau)
        em = modified_energy(hist, const.eps0, 1.0, ops, tau)
        assert 0.5 * e1 <= em <= 1.5 * e1


def test_discrete_poincare_along_trajectory(rng):
    # ||u^{n,theta}|| <= (1/a0) ||dbar u^n|| + (a1/a0) ||dbar p^n||
    a = rng.uniform(1.0, 6.0, 12)
    ops = make_ops(12, 0, a)
    a0, a1 = a.min(), a.max()
    tau, theta = 0.05, 0.8
    stepper = Stepper(ops, SchemeParams(tau=tau, theta=theta))
    old = _random_state(ops, rng)
    for _ in range(50):
        new = stepper.step(old)
        ut = theta * new.u + (1 - theta) * old.u
        lhs = ops.norm_V(ut)
        rhs = ops.norm_V((new.u - old.u) / tau) / a0 + a1 / a0 * ops.norm_Q((new.p - old.p) / tau)
        assert lhs <= rhs * (1 + 1e-12)
        old = new


def test_blow_up_below_one_half():
    ops = make_ops(32, 0, 1.0)
    stepper = Stepper(ops, SchemeParams(tau=1.0, theta=0.0))
    rng = np.random.default_rng(0)
    with pytest.raises(BlowUpError) as info:
        stepper.run(_random_state(ops, rng), n_steps=500)
    assert info.value.step > 0
    with pytest.raises(BlowUpError):
        Stepper(ops, SchemeParams(tau=1.0, theta=0.0), solver="monolithic").run(
            _random_state(ops, rng), n_steps=500)


def test_step_rejects_wrong_dimensions():
    ops = make_ops(4, 0)
    with pytest.raises(ValueError):
        Stepper(ops, SchemeParams(tau=0.1)).step(State(np.zeros(3), np.zeros(4)))
    with pytest.raises(ValueError):
        Stepper(ops, SchemeParams(tau=0.1), solver="gmres")


def test_inhomogeneous_run_uses_loads(rng):
    ops = make_ops(6, 0, 2.0)
    stepper = Stepper(ops, SchemeParams(tau=0.1, theta=1.0))
    F = np.ones(ops.dim_V)
    G = np.zeros(ops.dim_Q)
    res = stepper.run(State(np.zeros(ops.dim_V), np.zeros(ops.dim_Q)), n_steps=5,
                      loads=lambda n: (F, G))
    ref = State(np.zeros(ops.dim_V), np.zeros(ops.dim_Q))
    for _ in range(5):
        ref = stepper.step(ref, (F, G))
    np.testing.assert_allclose(res.final.u, ref.u)
    assert res.energies[0].values[-1] > 0
