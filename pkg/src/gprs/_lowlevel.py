"""Compiled scalar kernels backing tile assembly and the reference BLAS backend.

Every routine is a plain loop nest with a fixed iteration order, so for
identical inputs the results are bitwise identical no matter which thread
runs them or how work is scheduled. All kernels release the GIL, which is
what lets the thread pool scale.

Inner loops are arranged so that the accumulation order for each output
element is ascending in the contraction index, while the innermost loop
runs over independent output elements (contiguous in memory). That keeps
the semantics of a naive triple loop but lets LLVM vectorize without
reassociating floating-point sums.
"""

import math

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# squared exponential kernel
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def se_value(zi, zj, inv2l2, nu, sig2, same_index):
    """Kernel value nu * exp(-inv2l2 * ||zi - zj||^2) (+ sig2 if same_index)."""
    s = 0.0
    for d in range(zi.shape[0]):
        diff = zi[d] - zj[d]
        s += diff * diff
    v = nu * math.exp(-inv2l2 * s)
    if same_index:
        v += sig2
    return v


@njit(cache=True, nogil=True)
def cov_tile(Z, inv2l2, nu, sig2, row0, col0, tile_size, n_total):
    """Training covariance tile; padding is the identity pattern."""
    out = np.empty((tile_size, tile_size))
    D = Z.shape[1]
    for r in range(tile_size):
        gi = row0 + r
        for c in range(tile_size):
            gj = col0 + c
            if gi < n_total and gj < n_total:
                s = 0.0
                for d in range(D):
                    diff = Z[gi, d] - Z[gj, d]
                    s += diff * diff
                v = nu * math.exp(-inv2l2 * s)
                if gi == gj:
                    v += sig2
                out[r, c] = v
            else:
                out[r, c] = 1.0 if gi == gj else 0.0
    return out


@njit(cache=True, nogil=True)
def cross_tile(Za, Zb, inv2l2, nu, row0, col0, rows, cols, na, nb):
    """Cross-covariance tile between two sample sets; zero padding, no noise."""
    out = np.empty((rows, cols))
    D = Za.shape[1]
    for r in range(rows):
        gi = row0 + r
        for c in range(cols):
            gj = col0 + c
            if gi < na and gj < nb:
                s = 0.0
                for d in range(D):
                    diff = Za[gi, d] - Zb[gj, d]
                    s += diff * diff
                out[r, c] = nu * math.exp(-inv2l2 * s)
            else:
                out[r, c] = 0.0
    return out


@njit(cache=True, nogil=True)
def grad_l_tile(Z, inv2l2, nu, l, row0, col0, tile_size, n_total):
    """d k / d length_scale, elementwise; zero padding."""
    out = np.empty((tile_size, tile_size))
    D = Z.shape[1]
    l3 = l * l * l
    for r in range(tile_size):
        gi = row0 + r
        for c in range(tile_size):
            gj = col0 + c
            if gi < n_total and gj < n_total:
                s = 0.0
                for d in range(D):
                    diff = Z[gi, d] - Z[gj, d]
                    s += diff * diff
                out[r, c] = nu * math.exp(-inv2l2 * s) * s / l3
            else:
                out[r, c] = 0.0
    return out


@njit(cache=True, nogil=True)
def grad_nu_tile(Z, inv2l2, row0, col0, tile_size, n_total):
    """d k / d signal_variance, elementwise; zero padding."""
    out = np.empty((tile_size, tile_size))
    D = Z.shape[1]
    for r in range(tile_size):
        gi = row0 + r
        for c in range(tile_size):
            gj = col0 + c
            if gi < n_total and gj < n_total:
                s = 0.0
                for d in range(D):
                    diff = Z[gi, d] - Z[gj, d]
                    s += diff * diff
                out[r, c] = math.exp(-inv2l2 * s)
            else:
                out[r, c] = 0.0
    return out


@njit(cache=True, nogil=True)
def grad_sig2_tile(row0, col0, tile_size, n_total):
    """d k / d noise_variance: Kronecker delta on valid entries, zero padding."""
    out = np.zeros((tile_size, tile_size))
    for r in range(tile_size):
        gi = row0 + r
        if gi < n_total and col0 <= gi < col0 + tile_size:
            out[r, gi - col0] = 1.0
    return out


# ---------------------------------------------------------------------------
# per-tile dense kernels (reference backend)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def potrf(a):
    """Cholesky of one SPD tile. Returns (L, info), info = 1-based bad pivot."""
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for t in range(j):
            s -= L[j, t] * L[j, t]
        if s <= 0.0:
            return L, j + 1
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            acc = a[i, j]
            for t in range(j):
                acc -= L[i, t] * L[j, t]
            L[i, j] = acc / L[j, j]
    return L, 0


@njit(cache=True, nogil=True)
def trsm_right_lt(l, b):
    """Solve X @ L.T = b for X (b is rows x n, L is n x n lower)."""
    rows, n = b.shape
    xt = np.empty((n, rows))
    for r in range(rows):
        for c in range(n):
            xt[c, r] = b[r, c]
    for c in range(n):
        for t in range(c):
            lct = l[c, t]
            for r in range(rows):
                xt[c, r] -= lct * xt[t, r]
        lcc = l[c, c]
        for r in range(rows):
            xt[c, r] /= lcc
    x = np.empty((rows, n))
    for r in range(rows):
        for c in range(n):
            x[r, c] = xt[c, r]
    return x


@njit(cache=True, nogil=True)
def trsm_left_lower(l, b):
    """Solve L @ X = b for X (L is n x n lower, b is n x cols)."""
    n, cols = b.shape
    x = b.copy()
    for r in range(n):
        for t in range(r):
            lrt = l[r, t]
            for c in range(cols):
                x[r, c] -= lrt * x[t, c]
        lrr = l[r, r]
        for c in range(cols):
            x[r, c] /= lrr
    return x


@njit(cache=True, nogil=True)
def trsm_left_lt(l, b):
    """Solve L.T @ X = b for X (L is n x n lower, b is n x cols)."""
    n, cols = b.shape
    x = b.copy()
    for r in range(n - 1, -1, -1):
        for t in range(r + 1, n):
            ltr = l[t, r]
            for c in range(cols):
                x[r, c] -= ltr * x[t, c]
        lrr = l[r, r]
        for c in range(cols):
            x[r, c] /= lrr
    return x


@njit(cache=True, nogil=True)
def syrk_lower(c, a):
    """c - a @ a.T, lower triangle authoritative (upper copied from c)."""
    n = c.shape[0]
    kk = a.shape[1]
    out = c.copy()
    at = np.empty((kk, n))
    for j in range(n):
        for k in range(kk):
            at[k, j] = a[j, k]
    for i in range(n):
        for k in range(kk):
            aik = a[i, k]
            for j in range(i + 1):
                out[i, j] -= aik * at[k, j]
    return out


@njit(cache=True, nogil=True)
def gemm_update(c, a, b):
    """c - a @ b.T with ascending-k accumulation per element."""
    n, m = c.shape
    kk = a.shape[1]
    out = c.copy()
    bt = np.empty((kk, m))
    for j in range(m):
        for k in range(kk):
            bt[k, j] = b[j, k]
    for i in range(n):
        for k in range(kk):
            aik = a[i, k]
            for j in range(m):
                out[i, j] -= aik * bt[k, j]
    return out


@njit(cache=True, nogil=True)
def gemm_nn(c, a, b, sign):
    """c + sign * a @ b."""
    n, m = c.shape
    kk = a.shape[1]
    out = c.copy()
    for i in range(n):
        for k in range(kk):
            sai = sign * a[i, k]
            for j in range(m):
                out[i, j] += sai * b[k, j]
    return out


@njit(cache=True, nogil=True)
def gemm_tn(c, a, b, sign):
    """c + sign * a.T @ b."""
    n, m = c.shape
    kk = a.shape[0]
    out = c.copy()
    for k in range(kk):
        for i in range(n):
            sai = sign * a[k, i]
            for j in range(m):
                out[i, j] += sai * b[k, j]
    return out


@njit(cache=True, nogil=True)
def gemm_nt(c, a, b, sign):
    """c + sign * a @ b.T."""
    n, m = c.shape
    kk = a.shape[1]
    out = c.copy()
    bt = np.empty((kk, m))
    for j in range(m):
        for k in range(kk):
            bt[k, j] = b[j, k]
    for i in range(n):
        for k in range(kk):
            sai = sign * a[i, k]
            for j in range(m):
                out[i, j] += sai * bt[k, j]
    return out


@njit(cache=True, nogil=True)
def gemm_tt(c, a, b, sign):
    """c + sign * a.T @ b.T."""
    n, m = c.shape
    kk = a.shape[0]
    out = c.copy()
    bt = np.empty((kk, m))
    for j in range(m):
        for k in range(kk):
            bt[k, j] = b[j, k]
    for k in range(kk):
        for i in range(n):
            sai = sign * a[k, i]
            for j in range(m):
                out[i, j] += sai * bt[k, j]
    return out


@njit(cache=True, nogil=True)
def trsv_forward(l, x):
    """Solve L @ z = x."""
    n = x.shape[0]
    z = x.copy()
    for r in range(n):
        acc = z[r]
        for t in range(r):
            acc -= l[r, t] * z[t]
        z[r] = acc / l[r, r]
    return z


@njit(cache=True, nogil=True)
def trsv_backward(l, x):
    """Solve L.T @ z = x."""
    n = x.shape[0]
    z = x.copy()
    for r in range(n - 1, -1, -1):
        acc = z[r]
        for t in range(r + 1, n):
            acc -= l[t, r] * z[t]
        z[r] = acc / l[r, r]
    return z


@njit(cache=True, nogil=True)
def gemv_update(y, a, x, transpose, sign):
    """y + sign * (a @ x) or y + sign * (a.T @ x)."""
    n, m = a.shape
    if transpose:
        tmp = np.zeros(m)
        for r in range(n):
            xr = x[r]
            for c in range(m):
                tmp[c] += a[r, c] * xr
        out = y.copy()
        for c in range(m):
            out[c] += sign * tmp[c]
    else:
        out = y.copy()
        for r in range(n):
            acc = 0.0
            for c in range(m):
                acc += a[r, c] * x[c]
            out[r] += sign * acc
    return out


@njit(cache=True, nogil=True)
def dot(u, v):
    s = 0.0
    for i in range(u.shape[0]):
        s += u[i] * v[i]
    return s


@njit(cache=True, nogil=True)
def colsumsq_update(d, a):
    """d - column sums of a**2 (ascending-row accumulation)."""
    out = d.copy()
    n, m = a.shape
    for r in range(n):
        for c in range(m):
            out[c] -= a[r, c] * a[r, c]
    return out


@njit(cache=True, nogil=True)
def sum_product(a, b):
    """Sum of the elementwise product, row-major ascending order."""
    s = 0.0
    n, m = a.shape
    for r in range(n):
        for c in range(m):
            s += a[r, c] * b[r, c]
    return s


@njit(cache=True, nogil=True)
def quad_form(u, a, v):
    """u.T @ a @ v with per-row inner products."""
    s = 0.0
    n, m = a.shape
    for r in range(n):
        acc = 0.0
        for c in range(m):
            acc += a[r, c] * v[c]
        s += u[r] * acc
    return s


@njit(cache=True, nogil=True)
def diag_log_sum(a, n_valid):
    """Sum of log of the first n_valid diagonal entries."""
    s = 0.0
    for i in range(n_valid):
        s += math.log(a[i, i])
    return s


@njit(cache=True, nogil=True)
def diag_sum(a, n_valid):
    s = 0.0
    for i in range(n_valid):
        s += a[i, i]
    return s


@njit(cache=True, nogil=True)
def diag_extract(a):
    n = a.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = a[i, i]
    return out


@njit(cache=True, nogil=True)
def transpose(a):
    n, m = a.shape
    out = np.empty((m, n))
    for r in range(n):
        for c in range(m):
            out[c, r] = a[r, c]
    return out


# ---------------------------------------------------------------------------
# mass-spring-damper integrator
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def msd_integrate(u, m, c, k, k3, dt, x0, v0):
    """RK4 for m*x'' + c*x' + k*x + k3*x^3 = u(t), u held constant per step.

    Returns (x, v, bad_step): bad_step is the 1-based step index at which
    |x| exceeded 1e6, or 0 if the run stayed stable.
    """
    n = u.shape[0]
    xs = np.empty(n)
    vs = np.empty(n)
    x = x0
    v = v0
    for t in range(n):
        f = u[t]
        k1x = v
        k1v = (f - c * v - k * x - k3 * x * x * x) / m
        x2 = x + 0.5 * dt * k1x
        v2 = v + 0.5 * dt * k1v
        k2x = v2
        k2v = (f - c * v2 - k * x2 - k3 * x2 * x2 * x2) / m
        x3 = x + 0.5 * dt * k2x
        v3 = v + 0.5 * dt * k2v
        k3x = v3
        k3v = (f - c * v3 - k * x3 - k3 * x3 * x3 * x3) / m
        x4 = x + dt * k3x
        v4 = v + dt * k3v
        k4x = v4
        k4v = (f - c * v4 - k * x4 - k3 * x4 * x4 * x4) / m
        x += dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        v += dt * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        xs[t] = x
        vs[t] = v
        if abs(x) > 1e6:
            return xs, vs, t + 1
    return xs, vs, 0
