"""NumPy/SciPy implementation of the stepping kernels.

Reference semantics for ``_ckernels``; both modules expose the same functions
with the same argument lists. One homogeneous theta step in Schur form reads::

    u_new = S^{-1} (R u + tau B^T p)
    p_new = p - tau D (theta u_new + (1 - theta) u)

with ``S = M_V + tau theta A + tau^2 theta^2 K`` (factor ``S_chol``),
``R = M_V - tau (1-theta) A - tau^2 theta (1-theta) K`` and ``D = M_Q^{-1} B``.
``B`` and ``D`` are given as per-cell blocks of shape (n_cells, k+1, k+2).
"""

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded


def _sym_banded(ab):
    u = ab.shape[0] - 1
    n = ab.shape[1]
    diags = [ab[u]]
    offsets = [0]
    for d in range(1, u + 1):
        diags += [ab[u - d, d:], ab[u - d, d:]]
        offsets += [d, -d]
    return sp.diags(diags, offsets, shape=(n, n), format="csr")


def _cell_matrix(blocks):
    nc, L, Lv = blocks.shape
    stride = L
    rows = (np.arange(nc)[:, None, None] * stride + np.arange(L)[None, :, None]) * np.ones(
        (1, 1, Lv), dtype=np.int64
    )
    cols = (np.arange(nc)[:, None, None] * stride + np.arange(Lv)[None, None, :]) * np.ones(
        (1, L, 1), dtype=np.int64
    )
    return sp.csr_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nc * L, nc * stride + 1)
    )


class _Ops:
    def __init__(self, S_chol, R_ab, B_blocks, D_blocks):
        self.factor = (np.ascontiguousarray(S_chol), False)
        self.R = _sym_banded(R_ab)
        self.B = _cell_matrix(B_blocks)
        self.D = _cell_matrix(D_blocks)
        self.BT = self.B.T.tocsr()
        self.DT = self.D.T.tocsr()

    def solve(self, b):
        return cho_solve_banded(self.factor, b, check_finite=False)


def propagate(S_chol, R_ab, B_blocks, D_blocks, tau, theta, u, p, n_steps):
    """Apply ``n_steps`` homogeneous steps in place."""
    ops = _Ops(S_chol, R_ab, B_blocks, D_blocks)
    for _ in range(n_steps):
        u_new = ops.solve(ops.R @ u + tau * (ops.BT @ p))
        p -= tau * (ops.D @ (theta * u_new + (1.0 - theta) * u))
        u[:] = u_new


def propagate_adjoint(S_chol, R_ab, B_blocks, D_blocks, tau, theta, x, y, n_steps):
    """Apply ``n_steps`` transposed steps in place (Euclidean transpose)."""
    ops = _Ops(S_chol, R_ab, B_blocks, D_blocks)
    for _ in range(n_steps):
        dty = ops.DT @ y
        w = ops.solve(x - tau * theta * dty)
        x[:] = ops.R @ w - tau * (1.0 - theta) * dty
        y += tau * (ops.B @ w)


def _binomial_row(order):
    row = [1]
    for j in range(order):
        row.append(row[-1] * (order - j) // (j + 1))
    return [(-1) ** j * c for j, c in enumerate(row)]


def advance(
    S_chol, R_ab, B_blocks, D_blocks, MV_ab, MQ_blocks, tau, theta,
    hist_u, hist_p, n_avail, n_steps, energies, threshold,
):
    """Step ``n_steps`` times, shifting the history ring and recording energies.

    ``hist_u[0]`` is the newest state. ``energies[i, k]`` receives the order-k
    energy after step i (NaN while fewer than k+1 states exist). Returns
    ``(n_avail, fail)`` where ``fail`` is the index of the first step whose
    zeroth energy is non-finite or exceeds ``threshold``, else -1.
    """
    ops = _Ops(S_chol, R_ab, B_blocks, D_blocks)
    MV = _sym_banded(MV_ab)
    MQ = sp.block_diag(list(MQ_blocks), format="csr")
    depth = hist_u.shape[0]
    n_orders = energies.shape[1]
    coeffs = [np.array(_binomial_row(k), dtype=float) / tau**k for k in range(n_orders)]
    for i in range(n_steps):
        u, p = hist_u[0], hist_p[0]
        u_new = ops.solve(ops.R @ u + tau * (ops.BT @ p))
        p_new = p - tau * (ops.D @ (theta * u_new + (1.0 - theta) * u))
        hist_u[1:] = hist_u[:-1].copy()
        hist_p[1:] = hist_p[:-1].copy()
        hist_u[0] = u_new
        hist_p[0] = p_new
        n_avail = min(n_avail + 1, depth)
        for k in range(n_orders):
            if n_avail < k + 1:
                energies[i, k] = np.nan
                continue
            du = coeffs[k] @ hist_u[: k + 1]
            dp = coeffs[k] @ hist_p[: k + 1]
            energies[i, k] = 0.5 * (du @ (MV @ du) + dp @ (MQ @ dp))
        e0 = energies[i, 0]
        if not np.isfinite(e0) or e0 > threshold:
            return n_avail, i
    return n_avail, -1
