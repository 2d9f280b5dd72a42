"""Nonlinear mass-spring-damper data generation and dataset file I/O.

The system  m*x'' + c*x' + k*x + k3*x^3 = u(t)  is driven by a piecewise
constant random force (redrawn every hold interval, uniform in [-A, A]) and
integrated with classical fourth-order Runge-Kutta from rest. Feature vectors
are sliding windows of past force inputs and the target is the displacement,
which makes a nonlinear system-identification regression task of arbitrary
size.

Dataset files are plain text: a header line

    # gprs-dataset v1 N=<n> D=<d>

followed by N rows of D feature values plus one observation, space separated.
Values are written as C99 hex floats for bit-exact round-trips; the reader
also accepts plain decimal numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _lowlevel as ll
from .kernels import Dataset


class SimulationUnstableError(RuntimeError):
    """The integrator blew up; carries the 1-based step index."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"simulation unstable at step {step} (|x| > 1e6)")


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class MsdConfig:
    """Simulator configuration.

    Defaults give an underdamped, visibly nonlinear response whose recent
    force history carries a learnable signal at the default windowing.
    """

    mass: float = 1.0
    damping: float = 1.0
    stiffness: float = 2.0
    cubic_stiffness: float = 1.0
    dt: float = 0.01
    n_steps: int = 10_000
    force_amplitude: float = 1.0
    force_hold_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mass <= 0 or self.stiffness <= 0:
            raise ValueError("mass and stiffness must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.dt <= 0 or self.n_steps < 1 or self.force_hold_steps < 1:
            raise ValueError("dt, n_steps, and force_hold_steps must be positive")
        # stability margin for the explicit integrator
        if self.dt * math.sqrt(self.stiffness / self.mass) >= 0.5:
            raise ValueError(
                f"dt {self.dt} too large for stiffness/mass ratio; "
                f"require dt*sqrt(k/m) < 0.5"
            )


def simulate(cfg: MsdConfig, x0: float = 0.0, v0: float = 0.0,
             return_velocity: bool = False):
    """Integrate the forced system; returns (force, displacement) series.

    Deterministic in cfg.seed. x0/v0 default to rest; pass return_velocity
    to also get the velocity series (useful for energy checks).
    """
    rng = np.random.default_rng(cfg.seed)
    n_holds = -(-cfg.n_steps // cfg.force_hold_steps)
    draws = rng.uniform(-cfg.force_amplitude, cfg.force_amplitude, size=n_holds)
    u = np.repeat(draws, cfg.force_hold_steps)[: cfg.n_steps]
    u = np.ascontiguousarray(u)
    x, v, bad = ll.msd_integrate(
        u, cfg.mass, cfg.damping, cfg.stiffness, cfg.cubic_stiffness,
        cfg.dt, x0, v0,
    )
    if bad:
        raise SimulationUnstableError(int(bad))
    if return_velocity:
        return u, x, v
    return u, x


@dataclass(frozen=True)
class Standardizer:
    """Zero-mean unit-variance transform statistics with inverses."""

    z_mean: np.ndarray
    z_std: np.ndarray
    y_mean: float
    y_std: float

    def scale_features(self, z):
        return (np.asarray(z, dtype=np.float64) - self.z_mean) / self.z_std

    def unscale_features(self, z):
        return np.asarray(z, dtype=np.float64) * self.z_std + self.z_mean

    def scale_observations(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def unscale_observations(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean


def _safe_std(s):
    # constant columns standardize to zero, not NaN
    return np.where(s == 0.0, 1.0, s)


def make_dataset(u, x, window: int, stride: int = 1):
    """Windowed regression samples from a simulated series.

    Sample t has feature vector

        z = (u[t - (window-1)*stride], ..., u[t - stride], u[t])

    and target x[t], for t = window*stride, (window+1)*stride, ... Window
    taps are spaced by the sample stride so the features span real force
    history; consecutive raw steps are constant within one hold interval and
    would give degenerate duplicate features. Features and observations are
    standardized; returns (Dataset, Standardizer) so predictions can be
    mapped back to physical units.
    """
    u = np.asarray(u, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if u.shape[0] <= window * stride:
        raise ValueError(
            f"series length {u.shape[0]} too short for window {window} "
            f"at stride {stride}"
        )
    ts = np.arange(window * stride, u.shape[0], stride)
    feats = np.empty((ts.shape[0], window))
    for j in range(window):
        feats[:, j] = u[ts - (window - 1 - j) * stride]
    targets = x[ts]

    z_mean = feats.mean(axis=0)
    z_std = _safe_std(feats.std(axis=0))
    y_mean = float(targets.mean())
    y_std = float(_safe_std(np.array(targets.std())))
    std = Standardizer(z_mean=z_mean, z_std=z_std, y_mean=y_mean, y_std=y_std)
    ds = Dataset(
        features=std.scale_features(feats),
        observations=std.scale_observations(targets),
    )
    return ds, std


def steps_for_samples(n_samples: int, window: int, stride: int) -> int:
    """Series length needed so make_dataset yields exactly n_samples."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    return (window + n_samples - 1) * stride + 1


_HEADER_PREFIX = "# gprs-dataset v1"


def save_dataset(ds: Dataset, path):
    """Write a dataset file with bit-exact hex-float values."""
    with open(path, "w") as fh:
        fh.write(f"{_HEADER_PREFIX} N={ds.n} D={ds.d}\n")
        for i in range(ds.n):
            row = [float.hex(float(v)) for v in ds.features[i]]
            row.append(float.hex(float(ds.observations[i])))
            fh.write(" ".join(row) + "\n")


def _parse_value(token: str, line_no: int) -> float:
    # fromhex would happily misread plain decimals like "1.5" as hex digits,
    # so route on the 0x marker
    try:
        if "x" in token or "X" in token:
            return float.fromhex(token)
        return float(token)
    except ValueError:
        raise DatasetFormatError(f"non-numeric field {token!r}", line_no) from None


def load_dataset(path) -> Dataset:
    """Read a dataset file, accepting hex or decimal float fields."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith(_HEADER_PREFIX):
            raise DatasetFormatError(
                f"bad header; expected it to start with {_HEADER_PREFIX!r}", 1
            )
        try:
            fields = dict(
                part.split("=", 1) for part in header[len(_HEADER_PREFIX):].split()
            )
            n = int(fields["N"])
            d = int(fields["D"])
        except (ValueError, KeyError):
            raise DatasetFormatError("malformed N=/D= header fields", 1) from None
        if n < 1 or d < 1:
            raise DatasetFormatError(f"invalid sizes N={n} D={d}", 1)

        feats = np.empty((n, d))
        obs = np.empty(n)
        row = 0
        line_no = 1
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if row >= n:
                raise DatasetFormatError(
                    f"more than the declared {n} data rows", line_no
                )
            tokens = line.split()
            if len(tokens) != d + 1:
                raise DatasetFormatError(
                    f"expected {d + 1} fields, found {len(tokens)}", line_no
                )
            for k, tok in enumerate(tokens[:-1]):
                feats[row, k] = _parse_value(tok, line_no)
            obs[row] = _parse_value(tokens[-1], line_no)
            row += 1
        if row != n:
            raise DatasetFormatError(
                f"declared {n} rows but found {row}", line_no + 1
            )
    return Dataset(features=feats, observations=obs)
