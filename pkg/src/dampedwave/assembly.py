"""Assembly of the mixed weak form on a uniform mesh.

Operators
---------
M_V : (u, v) on V_h, symmetric banded
A   : (a u, v) on V_h, symmetric banded
K   : (du/dx, dv/dx) on V_h, symmetric banded
M_Q : (p, q) on Q_h, block diagonal (one block per cell)
B   : (dv/dx, q), shape dim Q x dim V, stored as per-cell blocks

Symmetric banded matrices use LAPACK upper storage,
``ab[u + i - j, j] == M[i, j]`` for ``i <= j``, the layout expected by
:func:`scipy.linalg.cholesky_banded`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import FEFunction, FESpaceQ, FESpaceV, Mesh1D, QuadRule, gauss_rule

__all__ = [
    "DampingField",
    "BandedSym",
    "DiscreteOperators",
    "assemble_operators",
    "assemble_load",
    "project_V",
    "project_Q",
]


@dataclass(frozen=True)
class DampingField:
    """Damping coefficient ``a(x)`` with declared essential bounds ``a0 <= a <= a1``.

    ``kind`` is one of ``"constant"``, ``"piecewise_constant"`` (``values`` on a
    uniform partition of [0, 1]) or ``"callable"`` (vectorised function of x).
    """

    kind: str
    values: object
    a0: float
    a1: float

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise_constant", "callable"):
            raise ValueError(f"unknown damping kind {self.kind!r}")
        if not (np.isfinite(self.a0) and np.isfinite(self.a1)):
            raise ValueError("damping bounds must be finite")
        if self.a1 < self.a0:
            raise ValueError(f"a1={self.a1} must be >= a0={self.a0}")

    @classmethod
    def constant(cls, a: float) -> "DampingField":
        a = float(a)
        if not np.isfinite(a):
            raise ValueError("damping must be finite")
        return cls("constant", a, a, a)

    @classmethod
    def piecewise(cls, values) -> "DampingField":
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ValueError("piecewise damping needs a non-empty finite 1D array")
        vals.setflags(write=False)
        return cls("piecewise_constant", vals, float(vals.min()), float(vals.max()))

    @classmethod
    def from_callable(cls, fn: Callable, a0: float, a1: float) -> "DampingField":
        return cls("callable", fn, float(a0), float(a1))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            out = np.full(x.shape, self.values)
        elif self.kind == "piecewise_constant":
            n = self.values.size
            idx = np.minimum((x * n).astype(np.int64), n - 1)
            out = self.values[idx]
        else:
            out = np.asarray(self.values(x), dtype=float) * np.ones(x.shape)
        if not np.all(np.isfinite(out)):
            raise ValueError("damping has non-finite samples")
        return out

    def sample(self, mesh: Mesh1D, rule: QuadRule) -> np.ndarray:
        """Values at the quadrature points, shape (n_cells, n_points).

        Piecewise-constant fields are sampled at cell midpoints so that a
        partition aligned with the mesh is represented exactly.
        """
        if self.kind == "piecewise_constant":
            mid = mesh.vertices[:-1] + 0.5 * mesh.h
            return np.repeat(self(mid)[:, None], rule.n_points, axis=1)
        return self(mesh.map_points(rule.nodes))


@dataclass(frozen=True)
class BandedSym:
    """Symmetric banded matrix in LAPACK upper storage."""

    ab: np.ndarray

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.ab.shape[0] - 1

    @classmethod
    def from_cell_blocks(cls, blocks: np.ndarray, stride: int, n: int) -> "BandedSym":
        """Sum cell blocks whose dofs start at ``c * stride``."""
        n_cells, L, _ = blocks.shape
        u = L - 1
        ab = np.zeros((u + 1, n))
        start = np.arange(n_cells) * stride
        for i in range(L):
            for j in range(i, L):
                # columns start + j are distinct across cells
                ab[u + i - j, start + j] += blocks[:, i, j]
        return cls(ab)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        u = self.bandwidth
        y = self.ab[u] * x
        for d in range(1, u + 1):
            band = self.ab[u - d, d:]
            y[:-d] += band * x[d:]
            y[d:] += band * x[:-d]
        return y

    def quad(self, x: np.ndarray) -> float:
        return float(x @ self.matvec(x))

    def todense(self) -> np.ndarray:
        u = self.bandwidth
        out = np.diag(self.ab[u].copy())
        for d in range(1, u + 1):
            out += np.diag(self.ab[u - d, d:], d) + np.diag(self.ab[u - d, d:], -d)
        return out

    def tosparse(self) -> sp.csr_matrix:
        u = self.bandwidth
        diags = [self.ab[u]]
        offsets = [0]
        for d in range(1, u + 1):
            diags += [self.ab[u - d, d:], self.ab[u - d, d:]]
            offsets += [d, -d]
        return sp.diags(diags, offsets, shape=(self.n, self.n), format="csr")

    def __add__(self, other: "BandedSym") -> "BandedSym":
        return BandedSym(self.ab + other.ab)

    def __rmul__(self, s: float) -> "BandedSym":
        return BandedSym(s * self.ab)

    def cholesky(self) -> np.ndarray:
        """Upper Cholesky factor in banded storage; raises LinAlgError if not SPD."""
        return sla.cholesky_banded(self.ab, lower=False)


def _element_tables(V: FESpaceV, Q: FESpaceQ, rule: QuadRule):
    phi = V.basis.values(rule.nodes)
    dphi = V.basis.derivatives(rule.nodes)
    psi = Q.basis.values(rule.nodes)
    return phi, dphi, psi


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    mesh: Mesh1D
    k: int
    damping: DampingField
    V: FESpaceV
    Q: FESpaceQ
    rule: QuadRule
    M_V: BandedSym
    A: BandedSym
    K: BandedSym
    MQ_blocks: np.ndarray = field(repr=False)
    B_blocks: np.ndarray = field(repr=False)

    @property
    def dim_V(self) -> int:
        return self.V.dim

    @property
    def dim_Q(self) -> int:
        return self.Q.dim

    @cached_property
    def MQ_inv_blocks(self) -> np.ndarray:
        return np.linalg.inv(self.MQ_blocks)

    @cached_property
    def D_blocks(self) -> np.ndarray:
        """Per-cell blocks of ``M_Q^{-1} B`` (the Q-projection of d/dx)."""
        return self.MQ_inv_blocks @ self.B_blocks

    @cached_property
    def _mv_factor(self) -> np.ndarray:
        return self.M_V.cholesky()

    # cell-local operations -------------------------------------------------
    def _gather_V(self, u: np.ndarray) -> np.ndarray:
        return u[self.V.dof_map]

    def _scatter_V(self, contrib: np.ndarray) -> np.ndarray:
        m = self.k + 1
        out = np.zeros(self.dim_V)
        out[:-1] = contrib[:, :m].ravel()
        out[m::m] += contrib[:, m]
        return out

    def B_matvec(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("crl,cl->cr", self.B_blocks, self._gather_V(u)).ravel()

    def BT_matvec(self, p: np.ndarray) -> np.ndarray:
        pc = p.reshape(self.mesh.n_cells, self.k + 1)
        return self._scatter_V(np.einsum("crl,cr->cl", self.B_blocks, pc))

    def D_matvec(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("crl,cl->cr", self.D_blocks, self._gather_V(u)).ravel()

    def DT_matvec(self, p: np.ndarray) -> np.ndarray:
        pc = p.reshape(self.mesh.n_cells, self.k + 1)
        return self._scatter_V(np.einsum("crl,cr->cl", self.D_blocks, pc))

    def MQ_matvec(self, p: np.ndarray) -> np.ndarray:
        pc = p.reshape(self.mesh.n_cells, self.k + 1)
        return np.einsum("crs,cs->cr", self.MQ_blocks, pc).ravel()

    def MQ_solve(self, y: np.ndarray) -> np.ndarray:
        yc = y.reshape(self.mesh.n_cells, self.k + 1)
        return np.einsum("crs,cs->cr", self.MQ_inv_blocks, yc).ravel()

    def MV_solve(self, y: np.ndarray) -> np.ndarray:
        return sla.cho_solve_banded((self._mv_factor, False), y)

    def norm_V(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.M_V.quad(u), 0.0)))

    def norm_Q(self, p: np.ndarray) -> float:
        return float(np.sqrt(max(p @ self.MQ_matvec(p), 0.0)))

    # global sparse views ---------------------------------------------------
    @cached_property
    def M_Q(self) -> sp.csr_matrix:
        return sp.block_diag(list(self.MQ_blocks), format="csr")

    @cached_property
    def B(self) -> sp.csr_matrix:
        nc, L, Lv = self.B_blocks.shape
        rows = np.repeat(self.Q.dof_map[:, :, None], Lv, axis=2)
        cols = np.repeat(self.V.dof_map[:, None, :], L, axis=1)
        return sp.csr_matrix(
            (self.B_blocks.ravel(), (rows.ravel(), cols.ravel())),
            shape=(self.dim_Q, self.dim_V),
        )

    @cached_property
    def D(self) -> sp.csr_matrix:
        nc, L, Lv = self.D_blocks.shape
        rows = np.repeat(self.Q.dof_map[:, :, None], Lv, axis=2)
        cols = np.repeat(self.V.dof_map[:, None, :], L, axis=1)
        return sp.csr_matrix(
            (self.D_blocks.ravel(), (rows.ravel(), cols.ravel())),
            shape=(self.dim_Q, self.dim_V),
        )


def assemble_operators(mesh: Mesh1D, k: int, a: DampingField, n_points: int | None = None):
    """Assemble M_V, A, K, M_Q and B for the P_{k+1}-P_k pair on ``mesh``."""
    if int(k) != k or k < 0:
        raise ValueError(f"degree k must be a non-negative integer, got {k!r}")
    k = int(k)
    V = FESpaceV(mesh, k)
    Q = FESpaceQ(mesh, k)
    rule = gauss_rule(n_points or k + 2)
    phi, dphi, psi = _element_tables(V, Q, rule)
    w = rule.weights
    h = mesh.h

    a_q = a.sample(mesh, rule)  # (n_cells, nq)
    ref_mass = np.einsum("q,qi,qj->ij", w, phi, phi)
    ref_stiff = np.einsum("q,qi,qj->ij", w, dphi, dphi)
    ref_mq = np.einsum("q,qi,qj->ij", w, psi, psi)
    ref_b = np.einsum("q,qr,ql->rl", w, psi, dphi)

    nc = mesh.n_cells
    ones = np.ones((nc, 1, 1))
    mv_blocks = h * ref_mass * ones
    a_blocks = h * np.einsum("q,cq,qi,qj->cij", w, a_q, phi, phi)
    k_blocks = (ref_stiff / h) * ones
    mq_blocks = h * ref_mq * ones
    # d/dx carries 1/h, the measure carries h
    b_blocks = ref_b * ones

    stride = k + 1
    M_V = BandedSym.from_cell_blocks(mv_blocks, stride, V.dim)
    A = BandedSym.from_cell_blocks(a_blocks, stride, V.dim)
    K = BandedSym.from_cell_blocks(k_blocks, stride, V.dim)
    return DiscreteOperators(
        mesh=mesh,
        k=k,
        damping=a,
        V=V,
        Q=Q,
        rule=rule,
        M_V=M_V,
        A=A,
        K=K,
        MQ_blocks=mq_blocks,
        B_blocks=b_blocks,
    )


def assemble_load(f: Callable, space, n_points: int | None = None) -> np.ndarray:
    """Vector of pairings ``(f, phi_i)`` over the basis of ``space``."""
    mesh = space.mesh
    rule = gauss_rule(n_points or space.k + 2)
    x = mesh.map_points(rule.nodes)
    fx = np.asarray(f(x), dtype=float) * np.ones(x.shape)
    if not np.all(np.isfinite(fx)):
        raise ValueError("load function has non-finite samples")
    phi = space.basis.values(rule.nodes)
    local = mesh.h * np.einsum("q,cq,qi->ci", rule.weights, fx, phi)
    out = np.zeros(space.dim)
    np.add.at(out, space.dof_map, local)
    return out


def project_V(f: Callable, ops: DiscreteOperators, n_points: int | None = None) -> FEFunction:
    """L2 projection onto V_h."""
    return FEFunction(ops.V, ops.MV_solve(assemble_load(f, ops.V, n_points)))


def project_Q(f: Callable, ops: DiscreteOperators, n_points: int | None = None) -> FEFunction:
    """L2 projection onto Q_h (cell-local)."""
    return FEFunction(ops.Q, ops.MQ_solve(assemble_load(f, ops.Q, n_points)))
