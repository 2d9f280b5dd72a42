"""Sequential per-tile dense kernels with a pluggable backend.

Two interchangeable backends implement the same tile-level contract:

* ``reference`` - compiled fixed-order scalar loops. Bitwise deterministic
  for identical inputs and fully portable; this is the correctness anchor.
* ``system`` - the host's optimized dense routines (numpy/scipy, i.e.
  whatever BLAS/LAPACK the interpreter links). Results agree with the
  reference backend to tight tolerance but not bitwise.

All kernels are strictly sequential; parallelism exists only between tasks.
Every operation returns a fresh array and never mutates its arguments.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import _lowlevel as ll


class FactorizationError(ArithmeticError):
    """A tile factorization or triangular solve hit a non-positive/zero pivot."""

    def __init__(self, pivot: int, tile: int | None = None, reason: str = "non-positive pivot"):
        self.pivot = pivot
        self.tile = tile
        self.reason = reason
        where = f" in diagonal tile {tile}" if tile is not None else ""
        super().__init__(f"{reason} at index {pivot}{where}")


def _require_square(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square tile, got shape {a.shape}")


def _check_diag(l):
    d = np.diagonal(l)
    bad = np.flatnonzero(d == 0.0)
    if bad.size:
        raise FactorizationError(int(bad[0]), reason="zero diagonal element")


class ReferenceBackend:
    """Portable scalar kernels with fixed accumulation order."""

    name = "reference"

    @staticmethod
    def potrf(a):
        _require_square(a)
        L, info = ll.potrf(a)
        if info:
            raise FactorizationError(info - 1)
        return L

    @staticmethod
    def trsm_right_lower_transpose(l, b):
        _check_diag(l)
        if b.shape[1] != l.shape[0]:
            raise ValueError(f"shape mismatch: {b.shape} vs {l.shape}")
        return ll.trsm_right_lt(l, b)

    @staticmethod
    def trsm_left_lower(l, b):
        _check_diag(l)
        if b.shape[0] != l.shape[0]:
            raise ValueError(f"shape mismatch: {l.shape} vs {b.shape}")
        return ll.trsm_left_lower(l, b)

    @staticmethod
    def trsm_left_lower_transpose(l, b):
        _check_diag(l)
        if b.shape[0] != l.shape[0]:
            raise ValueError(f"shape mismatch: {l.shape} vs {b.shape}")
        return ll.trsm_left_lt(l, b)

    @staticmethod
    def syrk_lower(c, a):
        _require_square(c)
        if a.shape[0] != c.shape[0]:
            raise ValueError(f"shape mismatch: {c.shape} vs {a.shape}")
        return ll.syrk_lower(c, a)

    @staticmethod
    def gemm_update(c, a, b):
        if a.shape[0] != c.shape[0] or b.shape[0] != c.shape[1] or a.shape[1] != b.shape[1]:
            raise ValueError(f"shape mismatch: {c.shape}, {a.shape}, {b.shape}")
        return ll.gemm_update(c, a, b)

    @staticmethod
    def gemm_full(c, a, b, transpose_a=False, transpose_b=False, sign=1.0):
        ra, ka = (a.shape[1], a.shape[0]) if transpose_a else a.shape
        kb, cb = (b.shape[1], b.shape[0]) if transpose_b else b.shape
        if (ra, cb) != c.shape or ka != kb:
            raise ValueError(f"shape mismatch: {c.shape}, {a.shape}, {b.shape}")
        fn = (
            (ll.gemm_nn, ll.gemm_nt),
            (ll.gemm_tn, ll.gemm_tt),
        )[transpose_a][transpose_b]
        return fn(c, a, b, float(sign))

    @staticmethod
    def trsv_forward(l, x):
        _check_diag(l)
        return ll.trsv_forward(l, x)

    @staticmethod
    def trsv_backward(l, x):
        _check_diag(l)
        return ll.trsv_backward(l, x)

    @staticmethod
    def gemv_update(y, a, x, transpose=False, sign=1.0):
        rows, cols = a.shape
        need_x, need_y = (rows, cols) if transpose else (cols, rows)
        if x.shape[0] != need_x or y.shape[0] != need_y:
            raise ValueError(f"shape mismatch: {y.shape}, {a.shape}, {x.shape}")
        return ll.gemv_update(y, a, x, transpose, float(sign))

    @staticmethod
    def dot(u, v):
        if u.shape != v.shape:
            raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
        return float(ll.dot(u, v))

    @staticmethod
    def colsumsq_update(d, a):
        if d.shape[0] != a.shape[1]:
            raise ValueError(f"shape mismatch: {d.shape} vs {a.shape}")
        return ll.colsumsq_update(d, a)

    @staticmethod
    def sum_product(a, b):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        return float(ll.sum_product(a, b))

    @staticmethod
    def quad_form(u, a, v):
        if u.shape[0] != a.shape[0] or v.shape[0] != a.shape[1]:
            raise ValueError(f"shape mismatch: {u.shape}, {a.shape}, {v.shape}")
        return float(ll.quad_form(u, a, v))

    @staticmethod
    def diag_log_sum(a, n_valid):
        return float(ll.diag_log_sum(a, n_valid))

    @staticmethod
    def diag_sum(a, n_valid):
        return float(ll.diag_sum(a, n_valid))

    @staticmethod
    def diag_extract(a):
        return ll.diag_extract(a)

    @staticmethod
    def transpose(a):
        return ll.transpose(a)


class SystemBackend:
    """Host-optimized dense routines behind the same tile contract."""

    name = "system"

    @staticmethod
    def potrf(a):
        _require_square(a)
        L, info = scipy.linalg.lapack.dpotrf(a, lower=1, clean=1)
        if info > 0:
            raise FactorizationError(int(info) - 1)
        if info < 0:
            raise ValueError(f"invalid potrf argument {-int(info)}")
        return np.ascontiguousarray(L)

    @staticmethod
    def trsm_right_lower_transpose(l, b):
        _check_diag(l)
        x = scipy.linalg.solve_triangular(l, b.T, lower=True)
        return np.ascontiguousarray(x.T)

    @staticmethod
    def trsm_left_lower(l, b):
        _check_diag(l)
        return np.ascontiguousarray(scipy.linalg.solve_triangular(l, b, lower=True))

    @staticmethod
    def trsm_left_lower_transpose(l, b):
        _check_diag(l)
        return np.ascontiguousarray(
            scipy.linalg.solve_triangular(l, b, lower=True, trans="T")
        )

    @staticmethod
    def syrk_lower(c, a):
        _require_square(c)
        return c - a @ a.T

    @staticmethod
    def gemm_update(c, a, b):
        return c - a @ b.T

    @staticmethod
    def gemm_full(c, a, b, transpose_a=False, transpose_b=False, sign=1.0):
        op_a = a.T if transpose_a else a
        op_b = b.T if transpose_b else b
        return c + sign * (op_a @ op_b)

    @staticmethod
    def trsv_forward(l, x):
        _check_diag(l)
        return scipy.linalg.solve_triangular(l, x, lower=True)

    @staticmethod
    def trsv_backward(l, x):
        _check_diag(l)
        return scipy.linalg.solve_triangular(l, x, lower=True, trans="T")

    @staticmethod
    def gemv_update(y, a, x, transpose=False, sign=1.0):
        op = a.T if transpose else a
        return y + sign * (op @ x)

    @staticmethod
    def dot(u, v):
        return float(np.dot(u, v))

    @staticmethod
    def colsumsq_update(d, a):
        return d - np.einsum("ij,ij->j", a, a)

    @staticmethod
    def sum_product(a, b):
        return float(np.sum(a * b))

    @staticmethod
    def quad_form(u, a, v):
        return float(u @ (a @ v))

    @staticmethod
    def diag_log_sum(a, n_valid):
        return float(np.sum(np.log(np.diagonal(a)[:n_valid])))

    @staticmethod
    def diag_sum(a, n_valid):
        return float(np.sum(np.diagonal(a)[:n_valid]))

    @staticmethod
    def diag_extract(a):
        return np.diagonal(a).copy()

    @staticmethod
    def transpose(a):
        return np.ascontiguousarray(a.T)


BACKENDS = {
    "reference": ReferenceBackend(),
    "system": SystemBackend(),
}


def get_backend(name):
    """Resolve a backend by name; backend instances pass through unchanged."""
    if isinstance(name, str):
        try:
            return BACKENDS[name]
        except KeyError:
            raise ValueError(
                f"unknown backend {name!r}; expected one of {sorted(BACKENDS)}"
            ) from None
    return name
