"""Tiled storage for symmetric matrices, rectangular panels, and vectors.

A matrix of logical size n_total is split into tiles_per_dim uniform square
tiles of tile_size = ceil(n_total / tiles_per_dim). When tiles_per_dim does
not divide n_total the trailing tiles carry a padding region; padding is kept
at the identity pattern (ones on the global diagonal, zeros elsewhere) so a
padded covariance matrix stays factorizable, and it is stripped whenever a
container is converted back to a dense array.

Tile elements are float64 in row-major (C) order throughout the project.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TileSpec:
    """Partitioning of one axis of length n_total into uniform tiles."""

    n_total: int
    tiles_per_dim: int
    tile_size: int

    @property
    def padded_size(self) -> int:
        return self.tile_size * self.tiles_per_dim

    def tile_start(self, t: int) -> int:
        return t * self.tile_size

    def valid_in_tile(self, t: int) -> int:
        """Number of non-padding rows/cols in tile t."""
        return max(0, min(self.tile_size, self.n_total - t * self.tile_size))


def make_spec(n_total: int, tiles_per_dim: int) -> TileSpec:
    """Build a TileSpec with tile_size = ceil(n_total / tiles_per_dim)."""
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    if tiles_per_dim < 1:
        raise ValueError(f"tiles_per_dim must be >= 1, got {tiles_per_dim}")
    if tiles_per_dim > n_total:
        raise ValueError(
            f"tiles_per_dim ({tiles_per_dim}) must not exceed n_total ({n_total})"
        )
    tile_size = -(-n_total // tiles_per_dim)
    return TileSpec(n_total=n_total, tiles_per_dim=tiles_per_dim, tile_size=tile_size)


@dataclass
class TiledSymmetricMatrix:
    """Lower-triangular tile storage for a symmetric matrix.

    Only tiles (i, j) with i >= j are stored; the upper triangle of the
    logical matrix is defined by symmetry and is always read from the
    mirrored storage, so reconstruction is bitwise symmetric.
    """

    spec: TileSpec
    tiles: dict[tuple[int, int], np.ndarray]

    def to_dense(self) -> np.ndarray:
        """Symmetric dense reconstruction, padding stripped."""
        spec = self.spec
        out = np.empty((spec.n_total, spec.n_total))
        for i in range(spec.tiles_per_dim):
            ri = spec.tile_start(i)
            vi = spec.valid_in_tile(i)
            for j in range(i + 1):
                cj = spec.tile_start(j)
                vj = spec.valid_in_tile(j)
                block = self.tiles[i, j][:vi, :vj]
                if i == j:
                    # diagonal tiles: lower triangle is authoritative
                    low = np.tril(block)
                    out[ri : ri + vi, cj : cj + vj] = (
                        low + np.tril(block, -1).T
                    )
                else:
                    out[ri : ri + vi, cj : cj + vj] = block
                    out[cj : cj + vj, ri : ri + vi] = block.T
        return out

    def to_dense_lower(self) -> np.ndarray:
        """Dense reconstruction treating the storage as a lower-triangular
        factor (strict upper triangle zero), padding stripped."""
        spec = self.spec
        out = np.zeros((spec.n_total, spec.n_total))
        for (i, j), tile in self.tiles.items():
            ri = spec.tile_start(i)
            cj = spec.tile_start(j)
            vi = spec.valid_in_tile(i)
            vj = spec.valid_in_tile(j)
            block = tile[:vi, :vj]
            if i == j:
                block = np.tril(block)
            out[ri : ri + vi, cj : cj + vj] = block
        return out


def symmetric_from_dense(dense: np.ndarray, spec: TileSpec) -> TiledSymmetricMatrix:
    """Tile a dense symmetric matrix; padding gets the identity pattern."""
    if dense.shape != (spec.n_total, spec.n_total):
        raise ValueError(
            f"dense shape {dense.shape} does not match spec n_total {spec.n_total}"
        )
    ts = spec.tile_size
    tiles = {}
    for i in range(spec.tiles_per_dim):
        ri = spec.tile_start(i)
        vi = spec.valid_in_tile(i)
        for j in range(i + 1):
            cj = spec.tile_start(j)
            vj = spec.valid_in_tile(j)
            tile = np.zeros((ts, ts))
            tile[:vi, :vj] = dense[ri : ri + vi, cj : cj + vj]
            if i == j:
                for p in range(vi, ts):
                    tile[p, p] = 1.0
            tiles[i, j] = tile
    return TiledSymmetricMatrix(spec=spec, tiles=tiles)


@dataclass
class TiledPanel:
    """Dense grid of rectangular tiles for a rows x cols block matrix."""

    row_spec: TileSpec
    col_spec: TileSpec
    tiles: dict[tuple[int, int], np.ndarray]

    def to_dense(self) -> np.ndarray:
        out = np.empty((self.row_spec.n_total, self.col_spec.n_total))
        for i in range(self.row_spec.tiles_per_dim):
            ri = self.row_spec.tile_start(i)
            vi = self.row_spec.valid_in_tile(i)
            for j in range(self.col_spec.tiles_per_dim):
                cj = self.col_spec.tile_start(j)
                vj = self.col_spec.valid_in_tile(j)
                out[ri : ri + vi, cj : cj + vj] = self.tiles[i, j][:vi, :vj]
        return out


def panel_from_dense(
    dense: np.ndarray, row_spec: TileSpec, col_spec: TileSpec
) -> TiledPanel:
    """Tile a dense rows x cols matrix; padding is zero."""
    if dense.shape != (row_spec.n_total, col_spec.n_total):
        raise ValueError(
            f"dense shape {dense.shape} does not match specs "
            f"({row_spec.n_total}, {col_spec.n_total})"
        )
    tiles = {}
    for i in range(row_spec.tiles_per_dim):
        ri = row_spec.tile_start(i)
        vi = row_spec.valid_in_tile(i)
        for j in range(col_spec.tiles_per_dim):
            cj = col_spec.tile_start(j)
            vj = col_spec.valid_in_tile(j)
            tile = np.zeros((row_spec.tile_size, col_spec.tile_size))
            tile[:vi, :vj] = dense[ri : ri + vi, cj : cj + vj]
            tiles[i, j] = tile
    return TiledPanel(row_spec=row_spec, col_spec=col_spec, tiles=tiles)


@dataclass
class TiledVector:
    """Vector split into tile_size segments; padding is zero."""

    spec: TileSpec
    segments: list[np.ndarray]


def scatter_vector(vec: np.ndarray, spec: TileSpec) -> TiledVector:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (spec.n_total,):
        raise ValueError(f"vector length {vec.shape} does not match {spec.n_total}")
    segments = []
    for t in range(spec.tiles_per_dim):
        seg = np.zeros(spec.tile_size)
        v = spec.valid_in_tile(t)
        seg[:v] = vec[spec.tile_start(t) : spec.tile_start(t) + v]
        segments.append(seg)
    return TiledVector(spec=spec, segments=segments)


def gather_vector(v: TiledVector) -> np.ndarray:
    """Concatenate segments and truncate the padding."""
    out = np.empty(v.spec.n_total)
    for t, seg in enumerate(v.segments):
        start = v.spec.tile_start(t)
        valid = v.spec.valid_in_tile(t)
        out[start : start + valid] = seg[:valid]
    return out
