"""Gaussian process pipelines as tiled task graphs.

Every public operation assembles covariance tiles, factorizes, and solves as
one dataflow graph on an existing worker pool, blocking the caller until the
graph completes. The tiled Cholesky factor is computed once per operation and
reused for every solve hanging off it.

Math conventions (zero prior mean throughout):

* mean        m = Kc @ inv(K) @ y, via alpha = solve(L.T, solve(L, y))
* variance    var_i = prior_ii - sum_k V[k,i]^2, with L @ V = Kc.T
* covariance  S = prior - V.T @ V
* loss        0.5*log|K| + 0.5*y.T inv(K) y + (n/2) log 2pi
* gradient    d loss/d p = 0.5*tr(inv(K) dK/dp) - 0.5*alpha.T (dK/dp) alpha

inv(K) for the gradient trace is materialized once per evaluation through
lower-triangular panel solves of L against an identity panel and shared by
all three hyperparameter components.

Accumulation order everywhere is fixed by the dependency chains (ascending
tile index), never by scheduling, so outputs are identical for any worker
count; with the reference backend they are bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special

from .kernels import (
    Dataset,
    Hyperparameters,
    assemble_cov_tile,
    assemble_cross_tile,
    assemble_prior_tile,
    grad_tile,
)
from .runtime import RuntimeHandle
from .tile_blas import FactorizationError, get_backend
from .tiled import (
    TiledPanel,
    TiledSymmetricMatrix,
    TiledVector,
    TileSpec,
    gather_vector,
    make_spec,
    scatter_vector,
)

DEFAULT_THETA = Hyperparameters(1.0, 1.0, 0.1)


# ---------------------------------------------------------------------------
# results and small value types
# ---------------------------------------------------------------------------


@dataclass
class PredictionResult:
    """Posterior prediction: mean, optional per-point variance, optional
    full posterior covariance."""

    mean: np.ndarray
    variance: np.ndarray | None = None
    full_cov: np.ndarray | None = None


@dataclass
class CholeskyFactor:
    """Lower-triangular tiled factor L with L @ L.T = K(theta_used)."""

    matrix: TiledSymmetricMatrix
    spec: TileSpec
    theta_used: Hyperparameters

    def to_dense(self) -> np.ndarray:
        return self.matrix.to_dense_lower()


def cholesky_task_count(tiles_per_dim: int) -> int:
    """Number of tile tasks in one tiled Cholesky factorization."""
    t = tiles_per_dim
    return t + t * (t - 1) + t * (t - 1) * (t - 2) // 6


# ---------------------------------------------------------------------------
# softplus reparameterization and Adam
# ---------------------------------------------------------------------------


def softplus(x):
    """log(1 + exp(x)), numerically stable."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus; defined for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise ValueError("softplus_inv requires positive inputs")
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return scipy.special.expit(x)


@dataclass(frozen=True)
class AdamRates:
    """Step size and moment decay rates."""

    alpha: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    """Optimizer state: step count and first/second moment estimates."""

    step: int
    m: np.ndarray
    v: np.ndarray
    rates: AdamRates

    @classmethod
    def initial(cls, rates: AdamRates | None = None, dim: int = 3) -> "AdamState":
        return cls(0, np.zeros(dim), np.zeros(dim), rates or AdamRates())


def adam_step(state: AdamState, grad, params):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    grad = np.asarray(grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    r = state.rates
    t = state.step + 1
    m = r.beta1 * state.m + (1.0 - r.beta1) * grad
    v = r.beta2 * state.v + (1.0 - r.beta2) * grad * grad
    m_hat = m / (1.0 - r.beta1**t)
    v_hat = v / (1.0 - r.beta2**t)
    new_params = params - r.alpha * m_hat / (np.sqrt(v_hat) + r.eps)
    return AdamState(t, m, v, r), new_params


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


def _potrf_tile(blas, a, k):
    try:
        return blas.potrf(a)
    except FactorizationError as e:
        raise FactorizationError(e.pivot, tile=k, reason=e.reason) from None


class GpEngine:
    """Gaussian process regression driver bound to one worker pool.

    Operations on the same engine instance must not run concurrently;
    independent engines with independent pools are fine.
    """

    def __init__(self, runtime: RuntimeHandle, tiles_per_dim: int = 1,
                 backend="reference", prior_noise: bool = False):
        if tiles_per_dim < 1:
            raise ValueError(f"tiles_per_dim must be >= 1, got {tiles_per_dim}")
        self._rt = runtime
        self.tiles_per_dim = tiles_per_dim
        self._blas = get_backend(backend)
        self.prior_noise = prior_noise

    @property
    def backend_name(self) -> str:
        return self._blas.name

    def _spec(self, n: int) -> TileSpec:
        return make_spec(n, min(self.tiles_per_dim, n))

    # -- graph builders (futures in, futures out) ---------------------------

    def _cov_futures(self, train, theta, spec):
        rt = self._rt
        out = {}
        for i in range(spec.tiles_per_dim):
            for j in range(i + 1):
                out[i, j] = rt.dataflow(
                    lambda _i=i, _j=j: assemble_cov_tile(train, theta, _i, _j, spec),
                    [], kind="assemble_cov", coords=(i, j),
                )
        return out

    def _cross_panel_futures(self, rows_ds, cols_ds, theta, row_spec, col_spec):
        """Cross-covariance tiles with rows_ds on the rows, cols_ds on the
        columns. The pipelines build the train x test orientation once and
        reuse it for both the mean (transposed products) and the panel solve."""
        rt = self._rt
        out = {}
        for i in range(row_spec.tiles_per_dim):
            for j in range(col_spec.tiles_per_dim):
                out[i, j] = rt.dataflow(
                    lambda _i=i, _j=j: assemble_cross_tile(
                        rows_ds, cols_ds, theta, _i, _j, row_spec, col_spec
                    ),
                    [], kind="assemble_cross", coords=(i, j),
                )
        return out

    def _prior_futures(self, test, theta, spec_m, diag_only):
        rt = self._rt
        pairs = (
            [(i, i) for i in range(spec_m.tiles_per_dim)]
            if diag_only
            else [(i, j) for i in range(spec_m.tiles_per_dim) for j in range(i + 1)]
        )
        return {
            (i, j): rt.dataflow(
                lambda _i=i, _j=j: assemble_prior_tile(
                    test, theta, _i, _j, spec_m, include_noise=self.prior_noise
                ),
                [], kind="assemble_prior", coords=(i, j),
            )
            for (i, j) in pairs
        }

    def tiled_cholesky(self, tiles, spec):
        """Right-looking tiled Cholesky over a dict of tile futures.

        Task kinds: potrf on diagonal tiles, trsm below them, syrk on the
        trailing diagonal, gemm on the trailing interior. Task count is
        cholesky_task_count(spec.tiles_per_dim). Failure carries the
        offending diagonal tile and pivot.
        """
        rt, blas = self._rt, self._blas
        t = spec.tiles_per_dim
        cur = dict(tiles)
        for k in range(t):
            cur[k, k] = rt.dataflow(
                lambda a, _k=k: _potrf_tile(blas, a, _k),
                [cur[k, k]], kind="potrf", coords=(k, k),
            )
            for i in range(k + 1, t):
                cur[i, k] = rt.dataflow(
                    blas.trsm_right_lower_transpose,
                    [cur[k, k], cur[i, k]], kind="trsm", coords=(i, k),
                )
            for i in range(k + 1, t):
                cur[i, i] = rt.dataflow(
                    blas.syrk_lower, [cur[i, i], cur[i, k]],
                    kind="syrk", coords=(i, i),
                )
                for j in range(k + 1, i):
                    cur[i, j] = rt.dataflow(
                        blas.gemm_update, [cur[i, j], cur[i, k], cur[j, k]],
                        kind="gemm", coords=(i, j),
                    )
        return cur

    def _forward_futures(self, L, segs, spec):
        rt, blas = self._rt, self._blas
        z = list(segs)
        for i in range(spec.tiles_per_dim):
            for j in range(i):
                z[i] = rt.dataflow(
                    lambda y, a, x: blas.gemv_update(y, a, x, sign=-1.0),
                    [z[i], L[i, j], z[j]], kind="gemv", coords=(i, j),
                )
            z[i] = rt.dataflow(
                blas.trsv_forward, [L[i, i], z[i]], kind="trsv", coords=(i, i)
            )
        return z

    def _backward_futures(self, L, segs, spec):
        rt, blas = self._rt, self._blas
        t = spec.tiles_per_dim
        alpha = list(segs)
        for i in range(t - 1, -1, -1):
            for j in range(i + 1, t):
                alpha[i] = rt.dataflow(
                    lambda y, a, x: blas.gemv_update(y, a, x, transpose=True, sign=-1.0),
                    [alpha[i], L[j, i], alpha[j]], kind="gemv", coords=(i, j),
                )
            alpha[i] = rt.dataflow(
                blas.trsv_backward, [L[i, i], alpha[i]], kind="trsv", coords=(i, i)
            )
        return alpha

    def _panel_forward_futures(self, L, B, n_row_tiles, col_ids, row_start):
        """Solve L @ V = B column-block by column-block.

        row_start(c) gives the first stored row tile of column block c: 0 for
        full panels, c for lower-triangular panels (identity right-hand side).
        """
        rt, blas = self._rt, self._blas
        V = dict(B)
        for c in col_ids:
            r0 = row_start(c)
            for i in range(r0, n_row_tiles):
                for j in range(r0, i):
                    V[i, c] = rt.dataflow(
                        lambda cc, a, b: blas.gemm_full(cc, a, b, sign=-1.0),
                        [V[i, c], L[i, j], V[j, c]], kind="gemm", coords=(i, c),
                    )
                V[i, c] = rt.dataflow(
                    blas.trsm_left_lower, [L[i, i], V[i, c]],
                    kind="trsm", coords=(i, c),
                )
        return V

    def _panel_backward_futures(self, L, W, n_row_tiles, col_ids, row_start):
        """Solve L.T @ X = W under the same storage convention."""
        rt, blas = self._rt, self._blas
        X = dict(W)
        for c in col_ids:
            r0 = row_start(c)
            for i in range(n_row_tiles - 1, r0 - 1, -1):
                for j in range(i + 1, n_row_tiles):
                    X[i, c] = rt.dataflow(
                        lambda cc, a, b: blas.gemm_full(
                            cc, a, b, transpose_a=True, sign=-1.0
                        ),
                        [X[i, c], L[j, i], X[j, c]], kind="gemm", coords=(i, c),
                    )
                X[i, c] = rt.dataflow(
                    blas.trsm_left_lower_transpose, [L[i, i], X[i, c]],
                    kind="trsm", coords=(i, c),
                )
        return X

    def _mean_futures(self, B, alpha, spec_m, spec_n):
        """Posterior mean segments from the train x test panel B:
        mean_i = sum_j B[j, i].T @ alpha_j."""
        rt, blas = self._rt, self._blas
        zero = rt.ready(np.zeros(spec_m.tile_size))
        out = []
        for i in range(spec_m.tiles_per_dim):
            seg = zero
            for j in range(spec_n.tiles_per_dim):
                seg = rt.dataflow(
                    lambda y, a, x: blas.gemv_update(y, a, x, transpose=True, sign=1.0),
                    [seg, B[j, i], alpha[j]], kind="gemv", coords=(i, j),
                )
            out.append(seg)
        return out

    def _variance_futures(self, prior, V, spec_m, spec_n):
        rt, blas = self._rt, self._blas
        out = []
        for i in range(spec_m.tiles_per_dim):
            d = rt.dataflow(
                blas.diag_extract, [prior[i, i]], kind="diag", coords=(i, i)
            )
            for k in range(spec_n.tiles_per_dim):
                d = rt.dataflow(
                    blas.colsumsq_update, [d, V[k, i]],
                    kind="colsumsq", coords=(k, i),
                )
            out.append(d)
        return out

    def _posterior_cov_futures(self, prior, V, spec_m, spec_n):
        rt, blas = self._rt, self._blas
        S = {}
        for i in range(spec_m.tiles_per_dim):
            for j in range(i + 1):
                s = prior[i, j]
                for k in range(spec_n.tiles_per_dim):
                    s = rt.dataflow(
                        lambda cc, a, b: blas.gemm_full(
                            cc, a, b, transpose_a=True, sign=-1.0
                        ),
                        [s, V[k, i], V[k, j]], kind="gemm", coords=(i, j),
                    )
                S[i, j] = s
        return S

    # -- materialized linear-algebra operations ------------------------------

    def _lift(self, tiles):
        return {ij: self._rt.ready(t) for ij, t in tiles.items()}

    def factorize(self, train: Dataset, theta: Hyperparameters) -> CholeskyFactor:
        """Assemble K(theta) and factorize it; the factor snapshot keeps theta."""
        spec = self._spec(train.n)
        Lf = self.tiled_cholesky(self._cov_futures(train, theta, spec), spec)
        tiles = {ij: self._rt.wait(f) for ij, f in Lf.items()}
        return CholeskyFactor(TiledSymmetricMatrix(spec, tiles), spec, theta)

    def forward_substitution(self, L: CholeskyFactor, b: TiledVector) -> TiledVector:
        """Solve L @ z = b."""
        Lf = self._lift(L.matrix.tiles)
        segs = [self._rt.ready(s) for s in b.segments]
        z = self._forward_futures(Lf, segs, L.spec)
        return TiledVector(L.spec, self._rt.wait_all(z))

    def backward_substitution(self, L: CholeskyFactor, b: TiledVector) -> TiledVector:
        """Solve L.T @ z = b; composed with forward_substitution this applies
        inv(K) without ever forming it."""
        Lf = self._lift(L.matrix.tiles)
        segs = [self._rt.ready(s) for s in b.segments]
        z = self._backward_futures(Lf, segs, L.spec)
        return TiledVector(L.spec, self._rt.wait_all(z))

    def panel_forward_substitution(self, L: CholeskyFactor, B: TiledPanel) -> TiledPanel:
        """Solve L @ V = B for a panel column-tiled against L's spec."""
        if B.row_spec != L.spec:
            raise ValueError("panel row tiling does not match the factor tiling")
        Lf = self._lift(L.matrix.tiles)
        Bf = self._lift(B.tiles)
        Vf = self._panel_forward_futures(
            Lf, Bf, L.spec.tiles_per_dim,
            range(B.col_spec.tiles_per_dim), lambda c: 0,
        )
        tiles = {ij: self._rt.wait(f) for ij, f in Vf.items()}
        return TiledPanel(B.row_spec, B.col_spec, tiles)

    # -- prediction ----------------------------------------------------------

    def _check_pair(self, train, test):
        if test.d != train.d:
            raise ValueError(
                f"feature dimension mismatch: train d={train.d}, test d={test.d}"
            )

    def _alpha_futures(self, train, theta, spec_n):
        K = self._cov_futures(train, theta, spec_n)
        L = self.tiled_cholesky(K, spec_n)
        b = [self._rt.ready(s)
             for s in scatter_vector(train.observations, spec_n).segments]
        z = self._forward_futures(L, b, spec_n)
        return L, z, self._backward_futures(L, z, spec_n)

    def predict(self, train: Dataset, test: Dataset,
                theta: Hyperparameters) -> PredictionResult:
        """Posterior mean at the test inputs."""
        self._check_pair(train, test)
        spec_n, spec_m = self._spec(train.n), self._spec(test.n)
        _, _, alpha = self._alpha_futures(train, theta, spec_n)
        B = self._cross_panel_futures(train, test, theta, spec_n, spec_m)
        mf = self._mean_futures(B, alpha, spec_m, spec_n)
        mean = gather_vector(TiledVector(spec_m, self._rt.wait_all(mf)))
        return PredictionResult(mean=mean)

    def predict_with_uncertainty(self, train: Dataset, test: Dataset,
                                 theta: Hyperparameters) -> PredictionResult:
        """Posterior mean plus per-point predictive variance."""
        self._check_pair(train, test)
        spec_n, spec_m = self._spec(train.n), self._spec(test.n)
        L, _, alpha = self._alpha_futures(train, theta, spec_n)
        B = self._cross_panel_futures(train, test, theta, spec_n, spec_m)
        mf = self._mean_futures(B, alpha, spec_m, spec_n)
        V = self._panel_forward_futures(
            L, B, spec_n.tiles_per_dim, range(spec_m.tiles_per_dim), lambda c: 0
        )
        prior = self._prior_futures(test, theta, spec_m, diag_only=True)
        vf = self._variance_futures(prior, V, spec_m, spec_n)
        mean = gather_vector(TiledVector(spec_m, self._rt.wait_all(mf)))
        variance = gather_vector(TiledVector(spec_m, self._rt.wait_all(vf)))
        return PredictionResult(mean=mean, variance=variance)

    def predict_full_cov(self, train: Dataset, test: Dataset,
                         theta: Hyperparameters) -> PredictionResult:
        """Posterior mean plus the full posterior covariance matrix."""
        self._check_pair(train, test)
        spec_n, spec_m = self._spec(train.n), self._spec(test.n)
        L, _, alpha = self._alpha_futures(train, theta, spec_n)
        B = self._cross_panel_futures(train, test, theta, spec_n, spec_m)
        mf = self._mean_futures(B, alpha, spec_m, spec_n)
        V = self._panel_forward_futures(
            L, B, spec_n.tiles_per_dim, range(spec_m.tiles_per_dim), lambda c: 0
        )
        prior = self._prior_futures(test, theta, spec_m, diag_only=False)
        Sf = self._posterior_cov_futures(prior, V, spec_m, spec_n)
        mean = gather_vector(TiledVector(spec_m, self._rt.wait_all(mf)))
        tiles = {ij: self._rt.wait(f) for ij, f in Sf.items()}
        full = TiledSymmetricMatrix(spec_m, tiles).to_dense()
        return PredictionResult(
            mean=mean, variance=np.diagonal(full).copy(), full_cov=full
        )

    # -- marginal likelihood and optimization --------------------------------

    def nlml(self, train: Dataset, theta: Hyperparameters) -> float:
        """Negative log marginal likelihood of the training data."""
        value, _ = self._loss_eval(train, theta, want_grad=False)
        return value

    def nlml_gradient(self, train: Dataset, theta: Hyperparameters) -> np.ndarray:
        """Gradient of the loss w.r.t. (length_scale, signal_variance,
        noise_variance)."""
        _, grad = self._loss_eval(train, theta, want_grad=True)
        return grad

    def nlml_value_and_gradient(self, train, theta):
        """Loss and gradient from one fused task graph (shared factorization)."""
        return self._loss_eval(train, theta, want_grad=True)

    def _loss_eval(self, train, theta, want_grad):
        rt, blas = self._rt, self._blas
        spec = self._spec(train.n)
        t = spec.tiles_per_dim
        n = train.n

        K = self._cov_futures(train, theta, spec)
        L = self.tiled_cholesky(K, spec)
        b = [rt.ready(s) for s in scatter_vector(train.observations, spec).segments]
        z = self._forward_futures(L, b, spec)

        logdet_parts = [
            rt.dataflow(
                lambda a, _v=spec.valid_in_tile(i): blas.diag_log_sum(a, _v),
                [L[i, i]], kind="logdet", coords=(i, i),
            )
            for i in range(t)
        ]
        quad_parts = [
            rt.dataflow(blas.dot, [z[i], z[i]], kind="dot", coords=(i,))
            for i in range(t)
        ]

        grad_futs = None
        if want_grad:
            alpha = self._backward_futures(L, z, spec)
            # inv(K), lower tiles only, via identity panel solves
            eye_tile = rt.ready(np.eye(spec.tile_size))
            zero_tile = rt.ready(np.zeros((spec.tile_size, spec.tile_size)))
            ident = {
                (i, c): (eye_tile if i == c else zero_tile)
                for c in range(t)
                for i in range(c, t)
            }
            W = self._panel_forward_futures(L, ident, t, range(t), lambda c: c)
            X = self._panel_backward_futures(L, W, t, range(t), lambda c: c)

            lower = [(i, j) for i in range(t) for j in range(i + 1)]
            grad_futs = {}
            for comp in ("length_scale", "signal_variance"):
                tr, qd = {}, {}
                for (i, j) in lower:
                    g = rt.dataflow(
                        lambda _i=i, _j=j, _c=comp: grad_tile(
                            train, theta, _c, _i, _j, spec
                        ),
                        [], kind="assemble_grad", coords=(i, j),
                    )
                    tr[i, j] = rt.dataflow(
                        blas.sum_product, [X[i, j], g], kind="reduce", coords=(i, j)
                    )
                    qd[i, j] = rt.dataflow(
                        blas.quad_form, [alpha[i], g, alpha[j]],
                        kind="reduce", coords=(i, j),
                    )
                grad_futs[comp] = (tr, qd)
            # noise component: dK/d sigma2 is the identity on valid entries
            tr_noise = [
                rt.dataflow(
                    lambda a, _v=spec.valid_in_tile(i): blas.diag_sum(a, _v),
                    [X[i, i]], kind="reduce", coords=(i, i),
                )
                for i in range(t)
            ]
            qd_noise = [
                rt.dataflow(blas.dot, [alpha[i], alpha[i]], kind="dot", coords=(i,))
                for i in range(t)
            ]

        # fixed ascending reduction order keeps outputs scheduler-independent
        logdet = 0.0
        for v in rt.wait_all(logdet_parts):
            logdet += v
        quad = 0.0
        for v in rt.wait_all(quad_parts):
            quad += v
        value = logdet + 0.5 * quad + 0.5 * n * math.log(2.0 * math.pi)

        if not want_grad:
            return value, None

        grad = np.empty(3)
        for gi, comp in enumerate(("length_scale", "signal_variance")):
            tr, qd = grad_futs[comp]
            trace_tot = 0.0
            quad_tot = 0.0
            for i in range(t):
                for j in range(i + 1):
                    w = 1.0 if i == j else 2.0
                    trace_tot += w * rt.wait(tr[i, j])
                    quad_tot += w * rt.wait(qd[i, j])
            grad[gi] = 0.5 * trace_tot - 0.5 * quad_tot
        trace_tot = 0.0
        for v in rt.wait_all(tr_noise):
            trace_tot += v
        quad_tot = 0.0
        for v in rt.wait_all(qd_noise):
            quad_tot += v
        grad[2] = 0.5 * trace_tot - 0.5 * quad_tot
        return value, grad

    def optimize(self, train: Dataset, theta0: Hyperparameters | None = None,
                 iters: int = 1, rates: AdamRates | None = None):
        """Minimize the loss with Adam in a softplus-unconstrained domain.

        Returns (theta_final, loss_trace); loss_trace[k] is the loss at the
        parameters held entering iteration k. A factorization failure aborts
        with the iteration index attached to the error.
        """
        if iters < 1:
            raise ValueError(f"iters must be >= 1, got {iters}")
        theta0 = theta0 or DEFAULT_THETA
        raw = softplus_inv(theta0.as_array())
        state = AdamState.initial(rates)
        trace = []
        for it in range(iters):
            theta = Hyperparameters.from_array(softplus(raw))
            try:
                loss, grad = self._loss_eval(train, theta, want_grad=True)
            except FactorizationError as e:
                e.iteration = it
                raise
            trace.append(loss)
            grad_raw = grad * sigmoid(raw)  # softplus chain rule
            state, raw = adam_step(state, grad_raw, raw)
        return Hyperparameters.from_array(softplus(raw)), trace
