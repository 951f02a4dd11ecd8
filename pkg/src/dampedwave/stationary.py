"""Discrete stationary saddle-point problem.

Finds ``(u, p)`` in ``V_h x Q_h`` with::

    A u - B^T p = f
    B u         = g

for load vectors ``f`` (on V) and ``g`` (on Q). The condition ``p = 0`` at the
end points is carried weakly by the integration-by-parts form; Q_h has no
boundary dofs and no constraint is imposed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperators
from .mesh import FEFunction

__all__ = ["StationarySolution", "saddle_point_matrix", "solve_stationary"]


@dataclass
class StationarySolution:
    u_bar: FEFunction
    p_bar: FEFunction
    residual_norms: tuple[float, float]


def saddle_point_matrix(ops: DiscreteOperators) -> sp.csr_matrix:
    """Symmetric indefinite form ``[[A, -B^T], [-B, 0]]`` (second row negated)."""
    A = ops.A.tosparse()
    return sp.bmat([[A, -ops.B.T], [-ops.B, None]], format="csr")


def _residuals(ops, u, p, f, g):
    r1 = ops.A.matvec(u) - ops.BT_matvec(p) - f
    r2 = ops.B_matvec(u) - g
    return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))


def solve_stationary(ops: DiscreteOperators, f, g, method: str = "direct") -> StationarySolution:
    """Solve the stationary mixed problem.

    ``method="direct"`` factors the full symmetric indefinite matrix (SuperLU);
    ``method="schur"`` eliminates ``u`` with a banded Cholesky of ``A`` and solves
    the dense complement ``B A^{-1} B^T`` for ``p`` (small systems only).
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (ops.dim_V,) or g.shape != (ops.dim_Q,):
        raise ValueError("load vector dimensions do not match the spaces")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise ValueError("loads must be finite")
    if ops.damping.a0 <= 0:
        raise np.linalg.LinAlgError(
            f"stationary problem needs a0 > 0 (got a0={ops.damping.a0}); system is singular"
        )
    nv = ops.dim_V
    if method == "direct":
        try:
            lu = spla.splu(saddle_point_matrix(ops).tocsc())
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"singular saddle-point system: {exc}") from exc
        x = lu.solve(np.concatenate([f, -g]))
        u, p = x[:nv], x[nv:]
    elif method == "schur":
        chol = ops.A.cholesky()
        BT = ops.B.T.toarray()
        AinvBT = sla.cho_solve_banded((chol, False), BT)
        S = ops.B @ AinvBT
        try:
            cS = sla.cho_factor(S)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("B does not have full row rank") from exc
        Ainv_f = sla.cho_solve_banded((chol, False), f)
        p = sla.cho_solve(cS, g - ops.B_matvec(Ainv_f))
        u = Ainv_f + AinvBT @ p
    else:
        raise ValueError(f"unknown method {method!r}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
        raise np.linalg.LinAlgError("singular saddle-point system")
    return StationarySolution(
        u_bar=FEFunction(ops.V, u),
        p_bar=FEFunction(ops.Q, p),
        residual_norms=_residuals(ops, u, p, f, g),
    )
