"""Experiment drivers behind the ``dampedwave`` command.

Each ``run_*`` function takes a resolved :class:`~dampedwave.config.ExperimentConfig`
and returns a :class:`Table`; writing CSV/SVG is left to :mod:`dampedwave.output`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .analysis import (
    analytic_energy,
    analytic_solution,
    convergence_study,
    exact_rate_constant_a,
    fit_decay_rate,
    operator_norm,
    stability_constants,
    transfer_analytic,
)
from .assembly import DampingField, assemble_load, assemble_operators, project_Q, project_V
from .config import ConfigError, ExperimentConfig
from .mesh import build_mesh, evaluate, gauss_rule
from .stationary import solve_stationary
from .timestepper import SchemeParams, State, Stepper

__all__ = [
    "Plot",
    "Table",
    "hat_function",
    "wide_hat",
    "run_decay_table",
    "run_convergence",
    "run_cn_demo",
    "run_arate",
    "run_stationary",
    "run_simulate",
    "RUNNERS",
]


@dataclass
class Plot:
    title: str
    xlabel: str
    ylabel: str
    series: list[tuple[str, np.ndarray, np.ndarray]]
    logx: bool = False
    logy: bool = True


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]]
    notes: list[str] = field(default_factory=list)
    plot: Plot | None = None
    summary: dict[str, Any] = field(default_factory=dict)


def hat_function(n_cells: int):
    """Nodal hat of the mesh vertex at x = 1/2 (support of width 2h)."""
    if n_cells % 2:
        raise ConfigError("the nodal hat at x = 1/2 needs an even number of cells")
    h = 1.0 / n_cells
    return lambda x: np.maximum(0.0, 1.0 - np.abs(np.asarray(x) - 0.5) / h)


def wide_hat(x):
    """``1 - |2x - 1|``, peak 1 at x = 1/2."""
    return 1.0 - np.abs(2.0 * np.asarray(x) - 1.0)


def _backend(cfg: ExperimentConfig):
    b = cfg.get("backend", "auto")
    return None if b == "auto" else b


def _variants(cfg: ExperimentConfig, default):
    """``[(label, theta, lam)]``; an explicit theta or lam replaces the defaults."""
    if cfg.get("theta") is not None:
        return [(f"theta={cfg['theta']:g}", cfg["theta"], None)]
    if cfg.get("lam") is not None:
        return [(_lam_label(cfg["lam"]), None, cfg["lam"])]
    return default


def _lam_label(lam: float) -> str:
    return "theta=1/2+tau" if lam == 1.0 else f"theta=1/2+{lam:g}tau"


_STANDARD = [("theta=1", 1.0, None), ("theta=1/2+tau", None, 1.0)]


def _scheme(tau: float, n_steps: int, theta, lam) -> SchemeParams:
    if lam is not None:
        return SchemeParams.with_lambda(tau, lam, n_steps)
    return SchemeParams(tau=tau, theta=theta, n_steps=n_steps)


def _damping(cfg: ExperimentConfig) -> DampingField:
    if cfg.get("damping") is not None:
        return DampingField.piecewise(cfg["damping"])
    return DampingField.constant(cfg["a_const"])


def _require_analytic_regime(a: float):
    if a < 2 * np.pi:
        raise ConfigError(f"the analytic solution needs a_const >= 2*pi, got {a}")


def _safe_fit(series, window=None) -> float:
    try:
        return fit_decay_rate(series, window).alpha
    except ValueError:
        return float("nan")


def run_decay_table(cfg: ExperimentConfig) -> Table:
    """Energy of the single-mode solution at six equispaced times, per scheme."""
    a = cfg["a_const"]
    _require_analytic_regime(a)
    tau, n_steps = cfg["tau"], cfg["n_steps"]
    if n_steps % 5:
        raise ConfigError("t_final/tau must be divisible by 5 for the six output times")
    ops = assemble_operators(build_mesh(cfg["n_cells"]), cfg["degree"], DampingField.constant(a))
    if cfg["init"] == "analytic":
        u0, p0 = transfer_analytic(a, 0.0, ops, cfg["transfer"])
    else:
        u0, p0 = np.zeros(ops.dim_V), np.zeros(ops.dim_Q)
    idx = np.arange(6) * (n_steps // 5)
    t_out = idx * tau
    exact = analytic_energy(a, t_out) if cfg["init"] == "analytic" else np.zeros(6)
    exact_alpha = 2.0 * exact_rate_constant_a(a) if cfg["init"] == "analytic" else float("nan")

    columns = ["t", "E_exact"]
    cols = [exact]
    alphas = [exact_alpha]
    plot = Plot("Energy decay", "t", "E", [("exact", t_out, exact)])
    for label, theta, lam in _variants(cfg, _STANDARD):
        stepper = Stepper(ops, _scheme(tau, n_steps, theta, lam))
        series = stepper.run(State(u0, p0), orders=(0,), backend=_backend(cfg)).energies[0]
        vals = series.values[idx]
        columns.append(f"E_{label}")
        cols.append(vals)
        alphas.append(_safe_fit(series))
        plot.series.append((label, series.t, series.values))
    rows = [[t, *(c[i] for c in cols)] for i, t in enumerate(t_out)]
    rows.append(["alpha", *alphas])
    return Table(columns, rows, plot=plot,
                 summary={"t": t_out, "energies": dict(zip(columns[1:], cols)),
                          "alpha": dict(zip(columns[1:], alphas))})


def run_convergence(cfg: ExperimentConfig) -> Table:
    """Discrete error and observed order for the h and/or tau sweeps."""
    a = cfg["a_const"]
    _require_analytic_regime(a)
    sweeps = ["h", "tau"] if cfg["sweep"] == "both" else [cfg["sweep"]]
    rows = []
    plot = Plot("Discrete error", "h or tau", "error", [], logx=True)
    reports = {}
    for sweep in sweeps:
        values = cfg["h_values"] if sweep == "h" else cfg["tau_values"]
        for label, theta, lam in _variants(cfg, _STANDARD):
            rep = convergence_study(
                sweep, values, a=a, k=cfg["degree"], T=cfg["t_final"],
                h=cfg["h"], tau=cfg["tau"], theta=theta, lam=lam,
                transfer=cfg["transfer"], backend=_backend(cfg),
            )
            reports[(sweep, label)] = rep
            for row, rate in zip(rep.rows, rep.rates):
                rows.append([sweep, label, row.h, row.tau, row.theta, row.discrete_error, rate,
                             row.l2_error_u, row.l2_error_p])
            plot.series.append((f"{sweep} {label}", np.asarray(values, float), rep.errors))
    columns = ["sweep", "scheme", "h", "tau", "theta", "error", "rate", "l2_error_u", "l2_error_p"]
    return Table(columns, rows, plot=plot, summary={"reports": reports})


def run_cn_demo(cfg: ExperimentConfig) -> Table:
    """Energy histories for zero velocity and hat-shaped pressure on refined meshes."""
    a = cfg["a_const"]
    tau, n_steps, stride = cfg["tau"], cfg["n_steps"], cfg["stride"]
    damping = DampingField.constant(a)
    alpha_disc = stability_constants(a, a, None).alpha_disc
    default = [("theta=1/2", 0.5, None), ("theta=1/2+tau", None, 1.0)]
    rows, notes = [], []
    plot = Plot("Energy, zero velocity and hat pressure", "t", "E", [])
    fits: dict[tuple[str, int], float] = {}
    bounds: dict[tuple[str, int], bool] = {}
    for level in cfg["levels"]:
        nc = 2**level
        ops = assemble_operators(build_mesh(nc), cfg["degree"], damping)
        if cfg["p0"] == "hat":
            p0 = project_Q(hat_function(nc), ops, n_points=cfg["degree"] + 6).coefficients
        elif cfg["p0"] == "wide-hat":
            p0 = project_Q(wide_hat, ops, n_points=cfg["degree"] + 6).coefficients
        else:
            raise ConfigError("cn-demo supports p0 = hat or wide-hat")
        u0 = np.zeros(ops.dim_V)
        for label, theta, lam in _variants(cfg, default):
            stepper = Stepper(ops, _scheme(tau, n_steps, theta, lam))
            series = stepper.run(State(u0, p0), orders=(0,), backend=_backend(cfg)).energies[0]
            rate = _safe_fit(series, tuple(cfg["window"]))
            bound = 3.0 * np.exp(-alpha_disc * series.t) * series.values[0]
            ok = bool(np.all(series.values <= bound * (1 + 1e-12)))
            fits[(label, nc)] = rate
            bounds[(label, nc)] = ok
            for i in range(0, len(series.n), stride):
                rows.append([label, 1.0 / nc, series.t[i], series.values[i]])
            notes.append(f"scheme={label} h=2^-{level} fitted_rate={rate:.5e} "
                         f"uniform_bound={'ok' if ok else 'violated'}")
            plot.series.append((f"{label} h=2^-{level}", series.t, series.values))
    return Table(["scheme", "h", "t", "E"], rows, notes=notes, plot=plot,
                 summary={"fits": fits, "bounds": bounds, "alpha_disc": alpha_disc})


def run_arate(cfg: ExperimentConfig) -> Table:
    """Decay rate ``-ln ||S(T)|| / T`` of the discrete evolution against ``g(a)``."""
    tau, n_steps, T = cfg["tau"], cfg["n_steps"], cfg["t_final"]
    mesh = build_mesh(cfg["n_cells"])
    (label, theta, lam), = _variants(cfg, [(None, None, 1.0)])
    rows = []
    for a in cfg["a_values"]:
        ops = assemble_operators(mesh, cfg["degree"], DampingField.constant(a))
        stepper = Stepper(ops, _scheme(tau, n_steps, theta, lam))
        norm = operator_norm(stepper, n_steps, tol=cfg["tol"], seed=cfg["seed"],
                             backend=_backend(cfg))
        rate = -np.log(norm) / T
        g = exact_rate_constant_a(a)
        rows.append([a, g, rate, abs(rate - g) / g])
    arr = np.array(rows)
    plot = Plot("Decay rate against damping", "a", "rate",
                [("g(a)", arr[:, 0], arr[:, 1]), ("discrete", arr[:, 0], arr[:, 2])], logx=True)
    return Table(["a", "g", "rate", "rel_error"], rows, plot=plot,
                 summary={"a": arr[:, 0], "g": arr[:, 1], "rate": arr[:, 2], "rel_error": arr[:, 3]})


def run_stationary(cfg: ExperimentConfig) -> Table:
    """Manufactured stationary problem with ``u = cos(pi x)``, ``p = sin(pi x)``."""
    damping = _damping(cfg)
    ops = assemble_operators(build_mesh(cfg["n_cells"]), cfg["degree"], damping)
    f = assemble_load(lambda x: (np.pi + damping(x)) * np.cos(np.pi * x), ops.V)
    g = assemble_load(lambda x: -np.pi * np.sin(np.pi * x), ops.Q)
    sol = solve_stationary(ops, f, g, method=cfg["method"])
    x = ops.mesh.map_points(np.array([0.5])).ravel()
    u_h, p_h = evaluate(sol.u_bar, x), evaluate(sol.p_bar, x)
    rows = [[xi, ui, np.cos(np.pi * xi), pi, np.sin(np.pi * xi)]
            for xi, ui, pi in zip(x, u_h, p_h)]

    rule = gauss_rule(min(cfg["degree"] + 4, 10))
    xq = ops.mesh.map_points(rule.nodes)
    w = ops.mesh.h * rule.weights[None, :]
    err_u = np.sqrt(np.sum(w * (evaluate(sol.u_bar, xq) - np.cos(np.pi * xq)) ** 2))
    err_p = np.sqrt(np.sum(w * (evaluate(sol.p_bar, xq) - np.sin(np.pi * xq)) ** 2))
    r1, r2 = sol.residual_norms
    notes = [f"l2_error_u={err_u:.5e} l2_error_p={err_p:.5e}",
             f"residual_momentum={r1:.5e} residual_constraint={r2:.5e}"]
    plot = Plot("Stationary solution", "x", "value",
                [("u_h", x, u_h), ("p_h", x, p_h)], logy=False)
    return Table(["x", "u_h", "u_exact", "p_h", "p_exact"], rows, notes=notes, plot=plot,
                 summary={"l2_error_u": float(err_u), "l2_error_p": float(err_p),
                          "residuals": sol.residual_norms})


def _profile(name: str, space_kind: str, ops, cfg, rng) -> np.ndarray:
    space = ops.V if space_kind == "u" else ops.Q
    project = project_V if space_kind == "u" else project_Q
    if name == "zero":
        return np.zeros(space.dim)
    if name == "random":
        return rng.uniform(-1.0, 1.0, space.dim)
    if name == "analytic":
        if cfg.get("damping") is not None:
            raise ConfigError("analytic initial data need constant damping")
        _require_analytic_regime(cfg["a_const"])
        comp = 0 if space_kind == "u" else 1
        return project(lambda x: analytic_solution(cfg["a_const"], x, 0.0)[comp], ops).coefficients
    fn = {
        "cos": lambda x: np.cos(np.pi * x),
        "sin": lambda x: np.sin(np.pi * x),
        "wide-hat": wide_hat,
    }.get(name)
    if name == "hat":
        fn = hat_function(ops.mesh.n_cells)
    return project(fn, ops, n_points=cfg["degree"] + 6).coefficients


def run_simulate(cfg: ExperimentConfig) -> Table:
    """General run: snapshots of ``(u, p)`` at cell midpoints every ``stride`` steps."""
    damping = _damping(cfg)
    ops = assemble_operators(build_mesh(cfg["n_cells"]), cfg["degree"], damping)
    rng = np.random.default_rng(cfg["seed"])
    u0 = _profile(cfg["u0"], "u", ops, cfg, rng)
    p0 = _profile(cfg["p0"], "p", ops, cfg, rng)
    n_steps = cfg["n_steps"]
    stride = cfg["stride"] or max(1, n_steps // 10)
    (label, theta, lam), = _variants(cfg, [("theta=1", 1.0, None)])
    stepper = Stepper(ops, _scheme(cfg["tau"], n_steps, theta, lam), solver=cfg["solver"])
    result = stepper.run(State(u0, p0), orders=(0,), stride=stride, backend=_backend(cfg))
    series = result.energies[0]
    x = ops.mesh.map_points(np.array([0.5])).ravel()
    rows = []
    for snap in result.snapshots:
        e = series.at(snap.n)
        u = evaluate(ops.V.function(snap.u), x)
        p = evaluate(ops.Q.function(snap.p), x)
        rows.extend([snap.n, snap.n * cfg["tau"], xi, ui, pi, e] for xi, ui, pi in zip(x, u, p))
    plot = Plot("Energy", "t", "E", [(label, series.t, series.values)])
    return Table(["n", "t", "x", "u", "p", "E"], rows, plot=plot,
                 summary={"energy": series, "final": result.final})


RUNNERS = {
    "decay-table": run_decay_table,
    "convergence": run_convergence,
    "cn-demo": run_cn_demo,
    "arate": run_arate,
    "stationary": run_stationary,
    "simulate": run_simulate,
}
