"""Squared exponential kernel and covariance tile assembly.

The kernel is

    k(z_i, z_j) = nu * exp(-||z_i - z_j||^2 / (2 l^2)) + delta_ij * sigma2

with length scale l, signal variance nu, and noise variance sigma2. The
Kronecker delta adds observation noise only when both arguments refer to the
same training sample, never across distinct sample sets.

Assembly routines produce one tile at a time so each tile can become an
independent task. Distances accumulate over feature dimensions in ascending
order, making assembly bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _lowlevel as ll
from .tiled import TileSpec


@dataclass(frozen=True)
class Hyperparameters:
    """Trainable kernel parameters: length scale, signal and noise variance."""

    length_scale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        if not self.length_scale > 0.0:
            raise ValueError(f"length_scale must be > 0, got {self.length_scale}")
        if not self.signal_variance > 0.0:
            raise ValueError(
                f"signal_variance must be > 0, got {self.signal_variance}"
            )
        if self.noise_variance < 0.0:
            raise ValueError(
                f"noise_variance must be >= 0, got {self.noise_variance}"
            )

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.length_scale, self.signal_variance, self.noise_variance]
        )

    @classmethod
    def from_array(cls, a) -> "Hyperparameters":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    @property
    def inv2l2(self) -> float:
        return 1.0 / (2.0 * self.length_scale * self.length_scale)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n x d) with a matching observation vector."""

    features: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.observations, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] < 1:
            raise ValueError(f"features must be 2-d with d >= 1, got shape {z.shape}")
        if y.shape != (z.shape[0],):
            raise ValueError(
                f"observation count {y.shape} does not match {z.shape[0]} samples"
            )
        object.__setattr__(self, "features", z)
        object.__setattr__(self, "observations", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def se_kernel(z_i, z_j, theta: Hyperparameters, same_index: bool = False) -> float:
    """Evaluate the kernel for one pair of feature vectors."""
    z_i = np.ascontiguousarray(z_i, dtype=np.float64)
    z_j = np.ascontiguousarray(z_j, dtype=np.float64)
    if z_i.shape != z_j.shape or z_i.ndim != 1:
        raise ValueError(f"shape mismatch: {z_i.shape} vs {z_j.shape}")
    return float(
        ll.se_value(
            z_i,
            z_j,
            theta.inv2l2,
            theta.signal_variance,
            theta.noise_variance,
            same_index,
        )
    )


def _check_tile(tile_i: int, tile_j: int, spec: TileSpec, lower: bool):
    t = spec.tiles_per_dim
    if not (0 <= tile_i < t and 0 <= tile_j < t):
        raise IndexError(f"tile ({tile_i},{tile_j}) out of range for {t} tiles")
    if lower and tile_i < tile_j:
        raise IndexError(f"tile ({tile_i},{tile_j}) is above the diagonal")


def assemble_cov_tile(
    train: Dataset, theta: Hyperparameters, tile_i: int, tile_j: int, spec: TileSpec
) -> np.ndarray:
    """One lower-triangular tile of the training covariance matrix.

    Padding rows/cols hold the identity pattern so the padded matrix stays
    positive definite.
    """
    _check_tile(tile_i, tile_j, spec, lower=True)
    return ll.cov_tile(
        train.features,
        theta.inv2l2,
        theta.signal_variance,
        theta.noise_variance,
        spec.tile_start(tile_i),
        spec.tile_start(tile_j),
        spec.tile_size,
        spec.n_total,
    )


def assemble_cross_tile(
    test: Dataset,
    train: Dataset,
    theta: Hyperparameters,
    tile_i: int,
    tile_j: int,
    test_spec: TileSpec,
    train_spec: TileSpec,
) -> np.ndarray:
    """One tile of the test x train cross-covariance panel.

    No noise term is ever added between distinct sample sets, so the roles
    are symmetric: swapping the datasets assembles the transposed panel.
    """
    if test.d != train.d:
        raise ValueError(f"feature dimension mismatch: {test.d} vs {train.d}")
    _check_tile(tile_i, tile_i, test_spec, lower=False)
    _check_tile(tile_j, tile_j, train_spec, lower=False)
    return ll.cross_tile(
        test.features,
        train.features,
        theta.inv2l2,
        theta.signal_variance,
        test_spec.tile_start(tile_i),
        train_spec.tile_start(tile_j),
        test_spec.tile_size,
        train_spec.tile_size,
        test_spec.n_total,
        train_spec.n_total,
    )


def assemble_prior_tile(
    test: Dataset,
    theta: Hyperparameters,
    tile_i: int,
    tile_j: int,
    spec: TileSpec,
    include_noise: bool = False,
) -> np.ndarray:
    """One lower-triangular tile of the test prior covariance.

    By default the noise term is left out, giving the predictive variance of
    the latent function; pass include_noise=True for the noisy variant.
    """
    _check_tile(tile_i, tile_j, spec, lower=True)
    sig2 = theta.noise_variance if include_noise else 0.0
    return ll.cov_tile(
        test.features,
        theta.inv2l2,
        theta.signal_variance,
        sig2,
        spec.tile_start(tile_i),
        spec.tile_start(tile_j),
        spec.tile_size,
        spec.n_total,
    )


GRAD_COMPONENTS = ("length_scale", "signal_variance", "noise_variance")


def grad_tile(
    train: Dataset,
    theta: Hyperparameters,
    which: str,
    tile_i: int,
    tile_j: int,
    spec: TileSpec,
) -> np.ndarray:
    """Elementwise partial derivative of a covariance tile.

    d k / d nu     = exp(-dist2 / (2 l^2))
    d k / d l      = nu * exp(-dist2 / (2 l^2)) * dist2 / l^3
    d k / d sigma2 = delta_ij

    Padding entries are zero for every component, so padded positions never
    contribute to trace or quadratic-form reductions.
    """
    _check_tile(tile_i, tile_j, spec, lower=True)
    row0 = spec.tile_start(tile_i)
    col0 = spec.tile_start(tile_j)
    if which == "length_scale":
        return ll.grad_l_tile(
            train.features,
            theta.inv2l2,
            theta.signal_variance,
            theta.length_scale,
            row0,
            col0,
            spec.tile_size,
            spec.n_total,
        )
    if which == "signal_variance":
        return ll.grad_nu_tile(
            train.features, theta.inv2l2, row0, col0, spec.tile_size, spec.n_total
        )
    if which == "noise_variance":
        return ll.grad_sig2_tile(row0, col0, spec.tile_size, spec.n_total)
    raise ValueError(f"unknown hyperparameter selector {which!r}")
