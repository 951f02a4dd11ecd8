"""Stability constants, analytic reference solution, rate fits, operator norms
and convergence studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import DampingField, DiscreteOperators, assemble_operators, project_Q, project_V
from .errors import ConvergenceError
from .mesh import FEFunction, build_mesh, gauss_rule, interpolate
from .timestepper import EnergySeries, SchemeParams, State, Stepper

__all__ = [
    "StabilityConstants",
    "stability_constants",
    "exact_rate_constant_a",
    "analytic_solution",
    "analytic_energy",
    "RateFit",
    "fit_decay_rate",
    "operator_norm",
    "ErrorRow",
    "ErrorReport",
    "error_norms",
    "convergence_study",
    "transfer_analytic",
    "poincare_check",
    "rate_bound_constants",
]


@dataclass(frozen=True)
class StabilityConstants:
    a0: float
    a1: float
    alpha_cont: float
    alpha_disc: float
    eps0: float
    tau0: float
    theta: float | None = None


def stability_constants(a0: float, a1: float, theta: float | None = 1.0) -> StabilityConstants:
    """Closed-form decay rates and step bound for damping in ``[a0, a1]``.

    ``tau0`` needs ``1/2 < theta <= 1``; with ``theta=None`` it is NaN.
    """
    if not (0 < a0 <= a1):
        raise ValueError(f"need 0 < a0 <= a1, got a0={a0}, a1={a1}")
    alpha_cont = (4.0 / 3.0) * a0**3 / (8 * a0**2 + 4 * a0**2 * a1 + 2 * a0 * a1 + a1**4)
    denom = 8 * a0**2 + 4 * a0**2 * a1 + 3 * a0 * a1 + 4 * a1**4
    alpha_disc = (2.0 / 3.0) * a0**3 / denom
    eps0 = 2.0 * a0**3 / denom
    if theta is None:
        tau0 = float("nan")
    else:
        if not 0.5 < theta <= 1.0:
            raise ValueError(f"tau0 requires 1/2 < theta <= 1, got {theta}")
        poly = (
            1.25 * theta**2
            + a1 / (2 * a0) * theta**2
            + (1 - theta) ** 2 / 4
            + theta * (1 - theta) / 2
        )
        tau0 = (theta - 0.5) / (eps0 * poly)
    return StabilityConstants(a0, a1, alpha_cont, alpha_disc, eps0, tau0, theta)


def rate_bound_constants(ratio: float, grid: Sequence[float], which: str = "cont"):
    """Constants ``(c1, c2)`` with ``alpha >= min(c1 a0, c2 / a1)`` on ``grid``.

    ``ratio = a1 / a0``; ``c1`` is fitted over ``a1 <= 1`` and ``c2`` over ``a1 >= 1``.
    """
    a0 = np.asarray(grid, dtype=float)
    a1 = ratio * a0
    alphas = np.array([
        getattr(stability_constants(x, y, None), f"alpha_{which}") for x, y in zip(a0, a1)
    ])
    small = a1 <= 1.0
    c1 = float(np.min(alphas[small] / a0[small])) if small.any() else np.inf
    c2 = float(np.min(alphas[~small] * a1[~small])) if (~small).any() else np.inf
    return c1, c2


def exact_rate_constant_a(a: float) -> float:
    """Decay rate ``a/2 - Re sqrt(a^2/4 - pi^2)`` for constant damping on [0, 1]."""
    if a <= 0:
        raise ValueError("a must be positive")
    disc = a * a / 4.0 - np.pi**2
    if disc <= 0:
        return a / 2.0
    # cancellation-free form of a/2 - sqrt(disc)
    return np.pi**2 / (a / 2.0 + np.sqrt(disc))


def _mode_constants(a: float):
    if a < 2 * np.pi:
        raise ValueError(
            f"analytic solution is only real for a >= 2*pi (overdamped regime), got a={a}"
        )
    s = np.sqrt(a * a / 4.0 - np.pi**2)
    lam = -np.pi**2 / (a / 2.0 + s)
    amp = (-a / 2.0 - s) / np.pi
    return lam, amp


def analytic_solution(a: float, x, t):
    """Single-mode solution ``(u, p)`` of the damped wave system with constant ``a``."""
    lam, amp = _mode_constants(a)
    x = np.asarray(x, dtype=float)
    decay = np.exp(lam * np.asarray(t, dtype=float))
    return decay * np.cos(np.pi * x), amp * decay * np.sin(np.pi * x)


def analytic_energy(a: float, t):
    """Exact zeroth energy ``0.5 (||u||^2 + ||p||^2)`` of :func:`analytic_solution`."""
    lam, amp = _mode_constants(a)
    return 0.25 * (1.0 + amp**2) * np.exp(2.0 * lam * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class RateFit:
    alpha: float
    intercept: float
    window: tuple[int, int]
    residual: float


def fit_decay_rate(series, window: tuple[float, float] | None = None) -> RateFit:
    """Least-squares slope of ``ln E`` against time; ``alpha = -slope``.

    ``series`` is an :class:`EnergySeries` or a ``(t, E)`` pair. ``window`` is a
    closed time interval; by default the first 10% of the samples are dropped.
    """
    if isinstance(series, EnergySeries):
        t, e = series.t, series.values
    else:
        t, e = (np.asarray(v, dtype=float) for v in series)
    if window is None:
        lo = len(t) // 10
        idx = np.arange(lo, len(t))
    else:
        tol = 1e-9 * max(1.0, abs(window[1]))
        idx = np.nonzero((t >= window[0] - tol) & (t <= window[1] + tol))[0]
    if idx.size < 2:
        raise ValueError("fit window holds fewer than two samples")
    ew = e[idx]
    if np.any(~np.isfinite(ew)) or np.any(ew <= 0):
        raise ValueError("energies in the fit window must be positive")
    slope, intercept = np.polyfit(t[idx], np.log(ew), 1)
    resid = np.log(ew) - (slope * t[idx] + intercept)
    return RateFit(
        alpha=float(-slope),
        intercept=float(intercept),
        window=(int(idx[0]), int(idx[-1])),
        residual=float(np.sqrt(np.mean(resid**2))),
    )


def operator_norm(stepper: Stepper, n_steps: int, tol: float = 1e-8, max_iter: int = 20000,
                  seed: int = 0, backend=None, method: str = "lanczos") -> float:
    """Norm of the ``n_steps``-step propagator in the L2 x L2 (Gram) norm.

    Both methods work with ``S* S`` where ``S* = G^{-1} S^T G`` is the Gram
    adjoint and ``S^T`` is the exact transposed step recursion.

    ``method="lanczos"`` (default) solves the generalised symmetric problem
    ``S^T G S x = mu G x`` with ARPACK. ``method="power"`` runs plain power
    iteration and stops when successive Rayleigh quotients differ by less than
    ``tol`` relative; it is slow, and can stop early, when the top singular
    values cluster (e.g. Crank-Nicolson with weak damping).
    """
    if n_steps == 0:
        return 1.0
    if method not in ("lanczos", "power"):
        raise ValueError(f"unknown method {method!r}")
    ops = stepper.ops
    nv = ops.dim_V
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(nv + ops.dim_Q)

    def gram(x):
        return np.concatenate([ops.M_V.matvec(x[:nv]), ops.MQ_matvec(x[nv:])])

    def gram_solve(x):
        return np.concatenate([ops.MV_solve(x[:nv]), ops.MQ_solve(x[nv:])])

    def normal_op(x):
        su, sp_ = stepper.propagate(x[:nv], x[nv:], n_steps, backend=backend)
        return np.concatenate(stepper.propagate_adjoint(ops.M_V.matvec(su), ops.MQ_matvec(sp_),
                                                        n_steps, backend=backend))

    if method == "lanczos":
        n = x0.size
        if n < 3:
            dense = np.column_stack([normal_op(e) for e in np.eye(n)])
            G = np.column_stack([gram(e) for e in np.eye(n)])
            return float(np.sqrt(sla.eigh(dense, G, eigvals_only=True)[-1]))
        lin = lambda f: spla.LinearOperator((n, n), matvec=f, dtype=float)  # noqa: E731
        try:
            mu = spla.eigsh(lin(normal_op), k=1, M=lin(gram), Minv=lin(gram_solve), which="LA",
                            tol=tol, maxiter=max_iter, v0=x0, return_eigenvectors=False)[0]
        except spla.ArpackNoConvergence as exc:
            est = float(np.sqrt(max(exc.eigenvalues))) if len(exc.eigenvalues) else float("nan")
            raise ConvergenceError("Lanczos iteration did not converge", est, float("nan")) from exc
        return float(np.sqrt(max(mu, 0.0)))

    x = x0 / np.sqrt(x0 @ gram(x0))
    mu_old = np.inf
    mu = np.nan
    for _ in range(max_iter):
        y = gram_solve(normal_op(x))
        mu = float(x @ gram(y))  # Rayleigh quotient ||S x||^2 with ||x|| = 1
        if mu == 0.0:
            return 0.0
        gap = abs(mu - mu_old) / mu
        if gap <= tol:
            return float(np.sqrt(mu))
        mu_old = mu
        x = y / np.sqrt(y @ gram(y))
    raise ConvergenceError("power iteration did not converge", float(np.sqrt(mu)), gap)


@dataclass(frozen=True)
class ErrorRow:
    h: float
    tau: float
    theta: float
    discrete_error: float
    l2_error_u: float
    l2_error_p: float


@dataclass
class ErrorReport:
    sweep: str
    rows: list[ErrorRow] = field(default_factory=list)

    def _param(self, row: ErrorRow) -> float:
        return row.h if self.sweep == "h" else row.tau

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.discrete_error for r in self.rows])

    @property
    def rates(self) -> np.ndarray:
        """Observed orders between consecutive rows (NaN for the first)."""
        out = [np.nan]
        for prev, row in zip(self.rows, self.rows[1:]):
            out.append(
                np.log(prev.discrete_error / row.discrete_error)
                / np.log(self._param(prev) / self._param(row))
            )
        return np.array(out)


def _l2_error(f: FEFunction, exact: Callable, n_points: int) -> float:
    space = f.space
    mesh = space.mesh
    rule = gauss_rule(n_points)
    x = mesh.map_points(rule.nodes)
    vals = space.basis.values(rule.nodes)
    fh = np.einsum("qi,ci->cq", vals, f.coefficients[space.dof_map])
    return float(np.sqrt(mesh.h * np.sum(rule.weights * (fh - exact(x)) ** 2)))


TRANSFERS = ("projection", "interpolation")


def transfer_analytic(a: float, t: float, ops: DiscreteOperators, transfer: str = "projection"):
    """Coefficients of the analytic solution at time ``t`` in ``V_h x Q_h``.

    ``"projection"`` uses the L2 projections, ``"interpolation"`` the nodal
    interpolants (vertex values for V, cell midpoints for Q when k = 0).
    """
    u_ex = lambda x: analytic_solution(a, x, t)[0]  # noqa: E731
    p_ex = lambda x: analytic_solution(a, x, t)[1]  # noqa: E731
    if transfer == "projection":
        return project_V(u_ex, ops).coefficients, project_Q(p_ex, ops).coefficients
    if transfer == "interpolation":
        return interpolate(u_ex, ops.V).coefficients, interpolate(p_ex, ops.Q).coefficients
    raise ValueError(f"transfer must be one of {TRANSFERS}, got {transfer!r}")


def error_norms(state: State, t: float, a_const: float, ops: DiscreteOperators,
                tau: float = float("nan"), theta: float = float("nan"),
                transfer: str = "projection") -> ErrorRow:
    """Discrete error against the transferred exact solution, plus full L2 errors."""
    u_ex = lambda x: analytic_solution(a_const, x, t)[0]  # noqa: E731
    p_ex = lambda x: analytic_solution(a_const, x, t)[1]  # noqa: E731
    pu, pp = transfer_analytic(a_const, t, ops, transfer)
    e = np.sqrt(ops.M_V.quad(state.u - pu) + float((state.p - pp) @ ops.MQ_matvec(state.p - pp)))
    n_fine = ops.k + 4
    return ErrorRow(
        h=ops.mesh.h,
        tau=tau,
        theta=theta,
        discrete_error=float(e),
        l2_error_u=_l2_error(FEFunction(ops.V, state.u), u_ex, n_fine),
        l2_error_p=_l2_error(FEFunction(ops.Q, state.p), p_ex, n_fine),
    )


def _steps_for(T: float, tau: float) -> int:
    n = int(round(T / tau))
    if n < 1 or abs(n * tau - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not an integer multiple of tau={tau}")
    return n


def _cells_for(h: float) -> int:
    n = int(round(1.0 / h))
    if n < 1 or abs(n * h - 1.0) > 1e-9:
        raise ValueError(f"h={h} does not divide [0, 1] uniformly")
    return n


def convergence_study(sweep: str, values: Sequence[float], *, a: float = 10.0, k: int = 0,
                      T: float = 1.0, h: float | None = None, tau: float | None = None,
                      theta: float | None = None, lam: float | None = None,
                      transfer: str = "projection", backend=None) -> ErrorReport:
    """Discrete errors at time ``T`` for a sweep over ``h`` or ``tau``.

    Exactly one of ``theta`` (fixed weight) or ``lam`` (``theta = 1/2 + lam tau``)
    selects the scheme. The initial data and the reference at ``T`` are the
    analytic single-mode solution moved into the discrete spaces by ``transfer``
    (see :func:`transfer_analytic`).
    """
    if transfer not in TRANSFERS:
        raise ValueError(f"transfer must be one of {TRANSFERS}, got {transfer!r}")
    if sweep not in ("h", "tau"):
        raise ValueError("sweep must be 'h' or 'tau'")
    if (theta is None) == (lam is None):
        raise ValueError("set exactly one of theta or lam")
    values = list(values)
    if any(b >= a_ for a_, b in zip(values, values[1:])):
        raise ValueError("sweep values must be strictly decreasing")
    report = ErrorReport(sweep)
    damping = DampingField.constant(a)
    for v in values:
        hv = v if sweep == "h" else h
        tv = v if sweep == "tau" else tau
        if hv is None or tv is None:
            raise ValueError("the fixed parameter (h or tau) must be given")
        ops = assemble_operators(build_mesh(_cells_for(hv)), k, damping)
        n = _steps_for(T, tv)
        scheme = SchemeParams(tau=tv, theta=theta, n_steps=n) if lam is None else \
            SchemeParams.with_lambda(tv, lam, n)
        stepper = Stepper(ops, scheme)
        u0, p0 = transfer_analytic(a, 0.0, ops, transfer)
        u, p = stepper.propagate(u0, p0, n, backend=backend)
        report.rows.append(
            error_norms(State(u, p, n), n * tv, a, ops, tv, stepper.theta, transfer)
        )
    return report


def poincare_check(u_h: FEFunction, a: DampingField, n_points: int | None = None):
    """Both sides of the generalised Poincare inequality for ``u_h`` and weight ``a``.

    Returns ``(lhs, rhs)`` with ``lhs = ||u||`` and
    ``rhs = (1/pi)(1 + ||a - abar|| / abar) ||u'|| + |int a u| / abar``.
    """
    space = u_h.space
    mesh = space.mesh
    rule = gauss_rule(n_points or min(space.degree + 4, 10))
    x = mesh.map_points(rule.nodes)
    w = mesh.h * rule.weights[None, :]
    local = u_h.coefficients[space.dof_map]
    u = np.einsum("qi,ci->cq", space.basis.values(rule.nodes), local)
    du = np.einsum("qi,ci->cq", space.basis.derivatives(rule.nodes), local) / mesh.h
    ax = a(x)
    abar = float(np.sum(w * ax))
    if abar == 0:
        raise ValueError("the mean of a must be non-zero")
    lhs = np.sqrt(np.sum(w * u**2))
    a_dev = np.sqrt(np.sum(w * (ax - abar) ** 2))
    rhs = (1.0 / np.pi) * (1.0 + a_dev / abar) * np.sqrt(np.sum(w * du**2)) \
        + abs(float(np.sum(w * ax * u))) / abar
    return float(lhs), float(rhs)
