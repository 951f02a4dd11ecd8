"""Theta-scheme time stepping for the mixed semi-discretisation.

For ``n >= 1`` the scheme solves, with ``w^{n,theta} = theta w^n + (1-theta) w^{n-1}``::

    (u^n - u^{n-1})/tau - B^T p^{n,theta} + A u^{n,theta} = F^n   (tested against M_V)
    (p^n - p^{n-1})/tau + B u^{n,theta}                 = G^n   (tested against M_Q)

where ``F^n, G^n`` are load vectors (pairings with the basis). The default
solver eliminates ``p^n`` through the block-diagonal ``M_Q`` and factors the
SPD banded matrix ``S = M_V + tau theta A + tau^2 theta^2 K`` once, using
``B^T M_Q^{-1} B = K`` (exact because ``Q_h = d/dx V_h``). The monolithic
path factors the full block system with SuperLU and serves as a cross-check.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_solve_banded

from . import kernels
from .assembly import DiscreteOperators
from .errors import BlowUpError

__all__ = [
    "SchemeParams",
    "State",
    "StateHistory",
    "EnergySeries",
    "RunResult",
    "Stepper",
    "build_stepper",
    "step",
    "run",
    "energy",
    "modified_energy",
    "difference_quotient",
]

BLOWUP_FACTOR = 1e12
DEFAULT_DEPTH = 3


@dataclass(frozen=True)
class SchemeParams:
    """Time discretisation parameters.

    With ``adaptive=True`` the weight is ``theta = 1/2 + lam * tau``.
    """

    tau: float
    theta: float = 1.0
    n_steps: int = 0
    lam: float = 0.0
    adaptive: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.adaptive:
            if self.lam < 0:
                raise ValueError("lam must be >= 0")
            if 0.5 + self.lam * self.tau > 1.0:
                raise ValueError("adaptive theta = 1/2 + lam*tau exceeds 1")
        elif not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    @classmethod
    def with_lambda(cls, tau: float, lam: float, n_steps: int = 0) -> "SchemeParams":
        return cls(tau=tau, n_steps=n_steps, lam=lam, adaptive=True)

    @property
    def effective_theta(self) -> float:
        return 0.5 + self.lam * self.tau if self.adaptive else self.theta


@dataclass
class State:
    u: np.ndarray
    p: np.ndarray
    n: int = 0

    def copy(self) -> "State":
        return State(self.u.copy(), self.p.copy(), self.n)


class StateHistory:
    """The most recent ``depth`` states, newest last."""

    def __init__(self, depth: int = DEFAULT_DEPTH, states=()):
        if depth < 1:
            raise ValueError("history depth must be >= 1")
        self.depth = depth
        self._states: deque[State] = deque(maxlen=depth)
        for s in states:
            self.push(s)

    def push(self, state: State) -> None:
        if self._states and state.n != self._states[-1].n + 1:
            raise ValueError(
                f"non-contiguous history: got n={state.n} after n={self._states[-1].n}"
            )
        self._states.append(state)

    def __len__(self) -> int:
        return len(self._states)

    def __getitem__(self, i) -> State:
        return self._states[i]

    @property
    def latest(self) -> State:
        return self._states[-1]

    def newest_first(self, count: int) -> list[State]:
        if count > len(self._states):
            raise ValueError(f"need {count} states, history holds {len(self._states)}")
        return [self._states[-1 - j] for j in range(count)]


@dataclass
class EnergySeries:
    order: int
    n: np.ndarray
    values: np.ndarray
    tau: float

    @property
    def t(self) -> np.ndarray:
        return self.n * self.tau

    def at(self, n: int) -> float:
        idx = np.searchsorted(self.n, n)
        if idx >= len(self.n) or self.n[idx] != n:
            raise KeyError(n)
        return float(self.values[idx])


@dataclass
class RunResult:
    history: StateHistory
    energies: dict[int, EnergySeries]
    snapshots: list[State] = field(default_factory=list)

    @property
    def final(self) -> State:
        return self.history.latest


def difference_quotient(vectors, k: int, tau: float) -> np.ndarray:
    """k-th backward difference quotient from ``vectors`` ordered newest first."""
    out = np.zeros_like(vectors[0])
    for j in range(k + 1):
        out += (-1) ** j * comb(k, j) * vectors[j]
    return out / tau**k


def _quotients(history: StateHistory, k: int, tau: float, offset: int = 0):
    states = history.newest_first(k + 1 + offset)[offset:]
    du = difference_quotient([s.u for s in states], k, tau)
    dp = difference_quotient([s.p for s in states], k, tau)
    return du, dp


def energy(history: StateHistory, k: int, ops: DiscreteOperators, tau: float, offset: int = 0) -> float:
    """Discrete energy of order k at the newest level (``offset`` levels back)."""
    du, dp = _quotients(history, k, tau, offset)
    return 0.5 * (ops.M_V.quad(du) + float(dp @ ops.MQ_matvec(dp)))


def modified_energy(history: StateHistory, eps: float, theta: float, ops: DiscreteOperators, tau: float) -> float:
    """``E^1 + eps * (dbar u^n, u^{n,theta})`` at the newest level."""
    new, old = history.newest_first(2)
    dbar_u = (new.u - old.u) / tau
    u_theta = theta * new.u + (1.0 - theta) * old.u
    return energy(history, 1, ops, tau) + eps * float(dbar_u @ ops.M_V.matvec(u_theta))


class Stepper:
    """Factor-once theta-scheme propagator for fixed operators and parameters."""

    def __init__(self, ops: DiscreteOperators, scheme: SchemeParams, solver: str = "schur"):
        if solver not in ("schur", "monolithic"):
            raise ValueError(f"unknown solver {solver!r}")
        self.ops = ops
        self.scheme = scheme
        self.solver = solver
        self.tau = tau = float(scheme.tau)
        self.theta = th = float(scheme.effective_theta)
        if th < 0:
            raise ValueError("theta must be >= 0")
        S = ops.M_V + (tau * th) * ops.A + (tau * tau * th * th) * ops.K
        R = ops.M_V + (-tau * (1.0 - th)) * ops.A + (-tau * tau * th * (1.0 - th)) * ops.K
        self.S = S
        self.R = R
        self.S_chol = S.cholesky()
        self._lu = None
        if solver == "monolithic":
            self._lu = spla.splu(self.monolithic_lhs().tocsc())

    @property
    def n_steps(self) -> int:
        return self.scheme.n_steps

    def monolithic_lhs(self) -> sp.csr_matrix:
        ops, tau, th = self.ops, self.tau, self.theta
        Mv = ops.M_V.tosparse()
        A = ops.A.tosparse()
        return sp.bmat(
            [[Mv / tau + th * A, -th * ops.B.T], [th * ops.B, ops.M_Q / tau]], format="csr"
        )

    def monolithic_rhs_matrix(self) -> sp.csr_matrix:
        ops, tau, th = self.ops, self.tau, self.theta
        Mv = ops.M_V.tosparse()
        A = ops.A.tosparse()
        return sp.bmat(
            [
                [Mv / tau - (1.0 - th) * A, (1.0 - th) * ops.B.T],
                [-(1.0 - th) * ops.B, ops.M_Q / tau],
            ],
            format="csr",
        )

    def _kernel_args(self):
        ops = self.ops
        return (self.S_chol, self.R.ab, ops.B_blocks, ops.D_blocks)

    def step(self, state: State, loads=None) -> State:
        """One step from ``state``; ``loads`` is an optional ``(F, G)`` pair of load vectors."""
        ops, tau, th = self.ops, self.tau, self.theta
        u, p = state.u, state.p
        if u.shape != (ops.dim_V,) or p.shape != (ops.dim_Q,):
            raise ValueError("state dimensions do not match the operators")
        if self.solver == "monolithic":
            rhs = self.monolithic_rhs_matrix() @ np.concatenate([u, p])
            if loads is not None:
                rhs += np.concatenate(loads)
            x = self._lu.solve(rhs)
            u_new, p_new = x[: ops.dim_V], x[ops.dim_V :]
        else:
            rhs = self.R.matvec(u) + tau * ops.BT_matvec(p)
            if loads is not None:
                F, G = loads
                rhs += tau * F + tau * tau * th * ops.DT_matvec(G)
            u_new = cho_solve_banded((self.S_chol, False), rhs)
            p_new = p - tau * ops.D_matvec(th * u_new + (1.0 - th) * u)
            if loads is not None:
                p_new += tau * ops.MQ_solve(G)
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(p_new))):
            raise BlowUpError("non-finite state", state.n + 1)
        return State(u_new, p_new, state.n + 1)

    def propagate(self, u: np.ndarray, p: np.ndarray, n_steps: int, backend=None):
        """Homogeneous propagation of coefficient vectors (copies returned)."""
        u = np.array(u, dtype=float)
        p = np.array(p, dtype=float)
        kernels.get_backend(backend).propagate(*self._kernel_args(), self.tau, self.theta, u, p, int(n_steps))
        return u, p

    def propagate_adjoint(self, x: np.ndarray, y: np.ndarray, n_steps: int, backend=None):
        """Euclidean transpose of :meth:`propagate`."""
        x = np.array(x, dtype=float)
        y = np.array(y, dtype=float)
        kernels.get_backend(backend).propagate_adjoint(
            *self._kernel_args(), self.tau, self.theta, x, y, int(n_steps)
        )
        return x, y

    def run(self, init: State, orders=(0,), stride: int | None = None, n_steps: int | None = None,
            loads=None, backend=None) -> RunResult:
        """Advance ``n_steps`` steps from ``init`` recording energies of the given orders.

        ``stride`` stores a snapshot every ``stride`` steps (and the initial state).
        ``loads(n) -> (F, G)`` switches to the step-by-step inhomogeneous path.
        Raises :class:`BlowUpError` when the zeroth energy becomes non-finite or
        grows beyond ``1e12`` times its initial value.
        """
        n_steps = self.n_steps if n_steps is None else int(n_steps)
        orders = sorted(set(orders)) or [0]
        n_orders = max(orders) + 1
        depth = max(DEFAULT_DEPTH, n_orders)
        ops = self.ops

        e_init = 0.5 * (ops.M_V.quad(init.u) + float(init.p @ ops.MQ_matvec(init.p)))
        threshold = BLOWUP_FACTOR * e_init if e_init > 0 else np.inf
        table = np.full((n_steps + 1, n_orders), np.nan)
        table[0, 0] = e_init
        snapshots = [init.copy()] if stride else []

        if loads is not None or self.solver == "monolithic":
            history = StateHistory(depth, [init.copy()])
            for i in range(n_steps):
                nxt = self.step(history.latest, None if loads is None else loads(history.latest.n + 1))
                history.push(nxt)
                for k in range(n_orders):
                    if len(history) >= k + 1:
                        table[i + 1, k] = energy(history, k, ops, self.tau)
                e0 = table[i + 1, 0]
                if not np.isfinite(e0) or (loads is None and e0 > threshold):
                    raise BlowUpError("energy blow-up", nxt.n)
                if stride and nxt.n % stride == 0:
                    snapshots.append(nxt.copy())
        else:
            impl = kernels.get_backend(backend)
            hist_u = np.zeros((depth, ops.dim_V))
            hist_p = np.zeros((depth, ops.dim_Q))
            hist_u[0] = init.u
            hist_p[0] = init.p
            n_avail = 1
            done = 0
            chunk = stride or max(n_steps, 1)
            while done < n_steps:
                m = min(chunk, n_steps - done)
                n_avail, fail = impl.advance(
                    *self._kernel_args(), ops.M_V.ab, ops.MQ_blocks, self.tau, self.theta,
                    hist_u, hist_p, n_avail, m, table[done + 1 : done + 1 + m], threshold,
                )
                if fail >= 0:
                    raise BlowUpError("energy blow-up", init.n + done + fail + 1)
                done += m
                if stride:
                    snapshots.append(State(hist_u[0].copy(), hist_p[0].copy(), init.n + done))
            n_last = init.n + n_steps
            history = StateHistory(depth)
            for j in range(n_avail - 1, -1, -1):
                history.push(State(hist_u[j].copy(), hist_p[j].copy(), n_last - j))

        n_idx = init.n + np.arange(n_steps + 1)
        energies = {}
        for k in orders:
            keep = ~np.isnan(table[:, k])
            energies[k] = EnergySeries(k, n_idx[keep], table[keep, k].copy(), self.tau)
        return RunResult(history=history, energies=energies, snapshots=snapshots)


def build_stepper(ops: DiscreteOperators, scheme: SchemeParams, solver: str = "schur") -> Stepper:
    return Stepper(ops, scheme, solver)


def step(stepper: Stepper, state: State, loads=None) -> State:
    return stepper.step(state, loads)


def run(stepper: Stepper, init: State, orders=(0,), stride: int | None = None, **kw) -> RunResult:
    return stepper.run(init, orders=orders, stride=stride, **kw)
