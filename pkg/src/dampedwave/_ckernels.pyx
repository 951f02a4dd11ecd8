# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stepping kernels; same interface and semantics as ``_pykernels``.

Banded matrices arrive in LAPACK upper storage (u+1, n) and are transposed once
per call to (n, u+1) so the column sweeps read contiguous memory.
"""

import numpy as np
from libc.math cimport isfinite, NAN


cdef void _cho_solve(const double[:, ::1] Ut, double[::1] b) noexcept nogil:
    # Ut[j, u + i - j] = U[i, j]; solves U^T U x = b in place
    cdef Py_ssize_t n = Ut.shape[0]
    cdef Py_ssize_t u = Ut.shape[1] - 1
    cdef Py_ssize_t i, j, lo, hi
    cdef double s
    for j in range(n):
        s = b[j]
        lo = j - u if j > u else 0
        for i in range(lo, j):
            s -= Ut[j, u + i - j] * b[i]
        b[j] = s / Ut[j, u]
    for i in range(n - 1, -1, -1):
        s = b[i]
        hi = i + u if i + u < n - 1 else n - 1
        for j in range(i + 1, hi + 1):
            s -= Ut[j, u + i - j] * b[j]
        b[i] = s / Ut[i, u]


cdef void _sym_matvec(const double[:, ::1] At, const double[::1] x, double[::1] y) noexcept nogil:
    # y = A x for symmetric A in transposed upper storage
    cdef Py_ssize_t n = At.shape[0]
    cdef Py_ssize_t u = At.shape[1] - 1
    cdef Py_ssize_t i, j, lo
    cdef double a
    for j in range(n):
        y[j] = 0.0
    for j in range(n):
        y[j] += At[j, u] * x[j]
        lo = j - u if j > u else 0
        for i in range(lo, j):
            a = At[j, u + i - j]
            y[i] += a * x[j]
            y[j] += a * x[i]


cdef void _cell_apply(const double[:, :, ::1] C, const double[::1] v, double[::1] out) noexcept nogil:
    # out (Q layout) = C v (V layout)
    cdef Py_ssize_t nc = C.shape[0], L = C.shape[1], Lv = C.shape[2]
    cdef Py_ssize_t c, r, l, base
    cdef double s
    for c in range(nc):
        base = c * L
        for r in range(L):
            s = 0.0
            for l in range(Lv):
                s += C[c, r, l] * v[base + l]
            out[base + r] = s


cdef void _cell_apply_T_add(const double[:, :, ::1] C, const double[::1] q, double alpha,
                            double[::1] out) noexcept nogil:
    # out (V layout) += alpha C^T q (Q layout)
    cdef Py_ssize_t nc = C.shape[0], L = C.shape[1], Lv = C.shape[2]
    cdef Py_ssize_t c, r, l, base
    cdef double s
    for c in range(nc):
        base = c * L
        for l in range(Lv):
            s = 0.0
            for r in range(L):
                s += C[c, r, l] * q[base + r]
            out[base + l] += alpha * s


cdef double _block_quad(const double[:, :, ::1] M, const double[::1] q) noexcept nogil:
    cdef Py_ssize_t nc = M.shape[0], L = M.shape[1]
    cdef Py_ssize_t c, r, s, base
    cdef double acc = 0.0
    for c in range(nc):
        base = c * L
        for r in range(L):
            for s in range(L):
                acc += q[base + r] * M[c, r, s] * q[base + s]
    return acc


cdef double _band_quad(const double[:, ::1] At, const double[::1] x, double[::1] work) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    _sym_matvec(At, x, work)
    for i in range(x.shape[0]):
        acc += x[i] * work[i]
    return acc


cdef void _step(const double[:, ::1] St, const double[:, ::1] Rt,
                const double[:, :, ::1] Bc, const double[:, :, ::1] Dc,
                double tau, double theta,
                const double[::1] u, const double[::1] p,
                double[::1] u_new, double[::1] p_new,
                double[::1] wv, double[::1] wq) noexcept nogil:
    cdef Py_ssize_t i
    _sym_matvec(Rt, u, u_new)
    _cell_apply_T_add(Bc, p, tau, u_new)
    _cho_solve(St, u_new)
    for i in range(u.shape[0]):
        wv[i] = theta * u_new[i] + (1.0 - theta) * u[i]
    _cell_apply(Dc, wv, wq)
    for i in range(p.shape[0]):
        p_new[i] = p[i] - tau * wq[i]


def _t(ab):
    return np.ascontiguousarray(np.asarray(ab, dtype=np.float64).T)


def propagate(S_chol, R_ab, B_blocks, D_blocks, double tau, double theta,
              double[::1] u, double[::1] p, Py_ssize_t n_steps):
    """Apply ``n_steps`` homogeneous steps in place."""
    cdef const double[:, ::1] St = _t(S_chol)
    cdef const double[:, ::1] Rt = _t(R_ab)
    cdef const double[:, :, ::1] Bc = np.ascontiguousarray(B_blocks, dtype=np.float64)
    cdef const double[:, :, ::1] Dc = np.ascontiguousarray(D_blocks, dtype=np.float64)
    cdef double[::1] u_new = np.empty(u.shape[0])
    cdef double[::1] p_new = np.empty(p.shape[0])
    cdef double[::1] wv = np.empty(u.shape[0])
    cdef double[::1] wq = np.empty(p.shape[0])
    cdef Py_ssize_t s
    with nogil:
        for s in range(n_steps):
            _step(St, Rt, Bc, Dc, tau, theta, u, p, u_new, p_new, wv, wq)
            u[:] = u_new
            p[:] = p_new


def propagate_adjoint(S_chol, R_ab, B_blocks, D_blocks, double tau, double theta,
                      double[::1] x, double[::1] y, Py_ssize_t n_steps):
    """Apply ``n_steps`` transposed steps in place (Euclidean transpose)."""
    cdef const double[:, ::1] St = _t(S_chol)
    cdef const double[:, ::1] Rt = _t(R_ab)
    cdef const double[:, :, ::1] Bc = np.ascontiguousarray(B_blocks, dtype=np.float64)
    cdef const double[:, :, ::1] Dc = np.ascontiguousarray(D_blocks, dtype=np.float64)
    cdef Py_ssize_t nv = x.shape[0], nq = y.shape[0]
    cdef double[::1] dty = np.empty(nv)
    cdef double[::1] w = np.empty(nv)
    cdef double[::1] bw = np.empty(nq)
    cdef Py_ssize_t s, i
    with nogil:
        for s in range(n_steps):
            for i in range(nv):
                dty[i] = 0.0
            _cell_apply_T_add(Dc, y, 1.0, dty)
            for i in range(nv):
                w[i] = x[i] - tau * theta * dty[i]
            _cho_solve(St, w)
            _sym_matvec(Rt, w, x)
            for i in range(nv):
                x[i] -= tau * (1.0 - theta) * dty[i]
            _cell_apply(Bc, w, bw)
            for i in range(nq):
                y[i] += tau * bw[i]


def advance(S_chol, R_ab, B_blocks, D_blocks, MV_ab, MQ_blocks, double tau, double theta,
            double[:, ::1] hist_u, double[:, ::1] hist_p, Py_ssize_t n_avail,
            Py_ssize_t n_steps, double[:, ::1] energies, double threshold):
    """Step, shift the history ring and record energies; see ``_pykernels.advance``."""
    cdef const double[:, ::1] St = _t(S_chol)
    cdef const double[:, ::1] Rt = _t(R_ab)
    cdef const double[:, ::1] Mt = _t(MV_ab)
    cdef const double[:, :, ::1] Bc = np.ascontiguousarray(B_blocks, dtype=np.float64)
    cdef const double[:, :, ::1] Dc = np.ascontiguousarray(D_blocks, dtype=np.float64)
    cdef const double[:, :, ::1] MQ = np.ascontiguousarray(MQ_blocks, dtype=np.float64)
    cdef Py_ssize_t nv = hist_u.shape[1], nq = hist_p.shape[1]
    cdef Py_ssize_t depth = hist_u.shape[0], n_orders = energies.shape[1]
    cdef double[::1] u_new = np.empty(nv)
    cdef double[::1] p_new = np.empty(nq)
    cdef double[::1] wv = np.empty(nv)
    cdef double[::1] wq = np.empty(nq)
    cdef double[::1] du = np.empty(nv)
    cdef double[::1] dp = np.empty(nq)
    cdef double[:, ::1] coef = np.zeros((n_orders, n_orders))
    cdef Py_ssize_t s, d, i, k, j
    cdef Py_ssize_t fail = -1
    cdef double e0, c

    for k in range(n_orders):
        c = 1.0
        for j in range(k + 1):
            coef[k, j] = c / tau ** k
            c = -c * (k - j) / (j + 1)

    with nogil:
        for s in range(n_steps):
            _step(St, Rt, Bc, Dc, tau, theta, hist_u[0], hist_p[0], u_new, p_new, wv, wq)
            for d in range(depth - 1, 0, -1):
                hist_u[d, :] = hist_u[d - 1, :]
                hist_p[d, :] = hist_p[d - 1, :]
            hist_u[0, :] = u_new
            hist_p[0, :] = p_new
            n_avail = n_avail + 1 if n_avail < depth else depth
            for k in range(n_orders):
                if n_avail < k + 1:
                    energies[s, k] = NAN
                    continue
                for i in range(nv):
                    du[i] = 0.0
                    for j in range(k + 1):
                        du[i] += coef[k, j] * hist_u[j, i]
                for i in range(nq):
                    dp[i] = 0.0
                    for j in range(k + 1):
                        dp[i] += coef[k, j] * hist_p[j, i]
                energies[s, k] = 0.5 * (_band_quad(Mt, du, wv) + _block_quad(MQ, dp))
            e0 = energies[s, 0]
            if not isfinite(e0) or e0 > threshold:
                fail = s
                break
    return n_avail, fail
