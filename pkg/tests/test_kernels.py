import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gprs import (
    Dataset,
    Hyperparameters,
    TiledSymmetricMatrix,
    assemble_cov_tile,
    assemble_cross_tile,
    assemble_prior_tile,
    grad_tile,
    make_spec,
    se_kernel,
)
from conftest import random_dataset


class TestHyperparameters:
    @pytest.mark.parametrize("l,nu,s2", [(0, 1, 1), (-1, 1, 1), (1, 0, 1), (1, 1, -0.1)])
    def test_rejects_invalid(self, l, nu, s2):
        with pytest.raises(ValueError):
            Hyperparameters(l, nu, s2)

    def test_array_round_trip(self):
        t = Hyperparameters(1.5, 2.0, 0.25)
        assert Hyperparameters.from_array(t.as_array()) == t


class TestSeKernel:
    def test_same_point_with_noise(self):
        z = np.array([0.3, -1.0])
        theta = Hyperparameters(1.0, 2.0, 0.5)
        assert se_kernel(z, z, theta, same_index=True) == 2.5

    def test_unit_distance_pair(self):
        theta = Hyperparameters(1.0, 1.0, 0.1)
        got = se_kernel(np.array([0.0]), np.array([2.0]), theta)
        assert got == pytest.approx(math.exp(-2.0), rel=1e-12)

    def test_matches_scalar_brute_force(self):
        # independent scalar re-implementation
        rng = np.random.default_rng(10)
        theta = Hyperparameters(0.7, 1.3, 0.2)
        for _ in range(25):
            zi, zj = rng.standard_normal(3), rng.standard_normal(3)
            s = 0.0
            for d in range(3):
                s += (zi[d] - zj[d]) ** 2
            want = 1.3 * math.exp(-s / (2 * 0.7**2))
            assert se_kernel(zi, zj, theta) == pytest.approx(want, rel=1e-13)

    def test_symmetry_is_exact(self):
        rng = np.random.default_rng(11)
        theta = Hyperparameters(1.1, 0.9, 0.3)
        zi, zj = rng.standard_normal(4), rng.standard_normal(4)
        assert se_kernel(zi, zj, theta) == se_kernel(zj, zi, theta)

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_bounds(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        theta = Hyperparameters(*rng.uniform(0.1, 10.0, 2), rng.uniform(0.0, 10.0))
        zi, zj = rng.standard_normal(3), rng.standard_normal(3)
        v = se_kernel(zi, zj, theta, same_index=False)
        assert 0.0 < v <= theta.signal_variance + theta.noise_variance
        peak = se_kernel(zi, zi, theta, same_index=True)
        assert peak == theta.signal_variance + theta.noise_variance

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            se_kernel(np.zeros(2), np.zeros(3), Hyperparameters(1, 1, 0))


class TestCovAssembly:
    def test_single_point_diagonal(self):
        ds = Dataset(np.zeros((1, 1)), np.zeros(1))
        tile = assemble_cov_tile(ds, Hyperparameters(1, 1, 0.25), 0, 0, make_spec(1, 1))
        assert (tile == [[1.25]]).all()

    def test_identical_points_singular(self):
        ds = Dataset(np.zeros((2, 1)), np.zeros(2))
        tile = assemble_cov_tile(ds, Hyperparameters(1, 1, 0), 0, 0, make_spec(2, 1))
        assert (tile == np.ones((2, 2))).all()

    def test_matches_dense_oracle(self):
        ds = random_dataset(np.random.default_rng(12), 16)
        theta = Hyperparameters(1.2, 0.8, 0.3)
        spec = make_spec(16, 4)
        tiles = {
            (i, j): assemble_cov_tile(ds, theta, i, j, spec)
            for i in range(4)
            for j in range(i + 1)
        }
        dense = TiledSymmetricMatrix(spec, tiles).to_dense()
        assert oracles.rel_err(dense, oracles.cov(ds, theta)) < 1e-14

    def test_padding_is_identity_pattern(self):
        ds = random_dataset(np.random.default_rng(13), 10)
        theta = Hyperparameters(1, 1, 0.1)
        spec = make_spec(10, 4)  # tile_size 3, one valid row in last tile
        diag = assemble_cov_tile(ds, theta, 3, 3, spec)
        assert diag[1, 1] == 1.0 and diag[2, 2] == 1.0
        assert diag[1, 0] == 0.0 and diag[2, 0] == 0.0 and diag[1, 2] == 0.0
        off = assemble_cov_tile(ds, theta, 3, 0, spec)
        assert (off[1:, :] == 0.0).all()

    def test_rejects_upper_tile(self):
        ds = random_dataset(np.random.default_rng(14), 8)
        with pytest.raises(IndexError):
            assemble_cov_tile(ds, Hyperparameters(1, 1, 0.1), 0, 1, make_spec(8, 2))

    def test_oracle_assembly_is_spd(self):
        # positive definiteness across many random datasets
        rng = np.random.default_rng(15)
        for _ in range(100):
            n = int(rng.integers(2, 65))
            ds = random_dataset(rng, n)
            theta = Hyperparameters(*rng.uniform(0.1, 10.0, 2), rng.uniform(0.01, 1.0))
            np.linalg.cholesky(oracles.cov(ds, theta))  # raises if not SPD


class TestCrossAssembly:
    def test_no_noise_between_sets(self):
        z = np.array([[0.5, -0.5]])
        train = Dataset(z, np.zeros(1))
        test = Dataset(z.copy(), np.zeros(1))
        theta = Hyperparameters(1.0, 1.7, 0.9)
        spec = make_spec(1, 1)
        tile = assemble_cross_tile(test, train, theta, 0, 0, spec, spec)
        assert tile[0, 0] == 1.7  # exactly nu, no noise

    def test_distant_points_decay_to_zero(self):
        train = Dataset(np.array([[0.0]]), np.zeros(1))
        test = Dataset(np.array([[1e4]]), np.zeros(1))
        spec = make_spec(1, 1)
        tile = assemble_cross_tile(test, train, Hyperparameters(1, 1, 0), 0, 0, spec, spec)
        assert tile[0, 0] == 0.0

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(16)
        train = random_dataset(rng, 16)
        test = random_dataset(rng, 16)
        theta = Hyperparameters(0.9, 1.4, 0.2)
        sm, sn = make_spec(16, 2), make_spec(16, 4)
        dense = np.vstack([
            np.hstack([
                assemble_cross_tile(test, train, theta, i, j, sm, sn)
                for j in range(4)
            ])
            for i in range(2)
        ])
        assert oracles.rel_err(dense, oracles.cross(test, train, theta)) < 1e-14

    def test_padding_zero(self):
        rng = np.random.default_rng(17)
        train = random_dataset(rng, 5)
        test = random_dataset(rng, 4)
        sm, sn = make_spec(4, 3), make_spec(5, 2)
        tile = assemble_cross_tile(test, train, Hyperparameters(1, 1, 0), 2, 1, sm, sn)
        assert (tile[1:, :] == 0.0).all()  # rows beyond M
        assert (tile[:, 2:] == 0.0).all()  # cols beyond N

    def test_dimension_mismatch(self):
        train = Dataset(np.zeros((2, 2)), np.zeros(2))
        test = Dataset(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValueError):
            assemble_cross_tile(test, train, Hyperparameters(1, 1, 0), 0, 0,
                                make_spec(2, 1), make_spec(2, 1))


class TestPriorAssembly:
    def test_single_point_noise_free(self):
        ds = Dataset(np.array([[0.7]]), np.zeros(1))
        spec = make_spec(1, 1)
        tile = assemble_prior_tile(ds, Hyperparameters(1, 1, 0), 0, 0, spec)
        assert (tile == [[1.0]]).all()
        tile = assemble_prior_tile(ds, Hyperparameters(1, 2.5, 0.5), 0, 0, spec)
        assert (tile == [[2.5]]).all()

    def test_noisy_variant_flag(self):
        ds = Dataset(np.array([[0.7]]), np.zeros(1))
        spec = make_spec(1, 1)
        tile = assemble_prior_tile(
            ds, Hyperparameters(1, 2.5, 0.5), 0, 0, spec, include_noise=True
        )
        assert (tile == [[3.0]]).all()

    def test_matches_dense_oracle(self):
        ds = random_dataset(np.random.default_rng(18), 8)
        theta = Hyperparameters(1.3, 0.6, 0.4)
        spec = make_spec(8, 2)
        tiles = {
            (i, j): assemble_prior_tile(ds, theta, i, j, spec)
            for i in range(2)
            for j in range(i + 1)
        }
        dense = TiledSymmetricMatrix(spec, tiles).to_dense()
        assert oracles.rel_err(dense, oracles.prior(ds, theta)) < 1e-14


class TestGradTiles:
    def test_noise_component_is_identity_pattern(self):
        ds = random_dataset(np.random.default_rng(19), 10)
        theta = Hyperparameters(1, 1, 0.1)
        spec = make_spec(10, 4)
        diag = grad_tile(ds, theta, "noise_variance", 1, 1, spec)
        assert (diag == np.eye(3)).all()
        off = grad_tile(ds, theta, "noise_variance", 2, 0, spec)
        assert (off == 0.0).all()
        last = grad_tile(ds, theta, "noise_variance", 3, 3, spec)
        assert last[0, 0] == 1.0 and (last[1:, 1:] == 0.0).all()  # padding zero

    def test_length_scale_zero_at_identical_points(self):
        ds = Dataset(np.zeros((4, 2)), np.zeros(4))
        tile = grad_tile(ds, Hyperparameters(1, 1, 0.1), "length_scale", 0, 0,
                         make_spec(4, 1))
        assert (tile == 0.0).all()

    def test_invalid_selector(self):
        ds = random_dataset(np.random.default_rng(20), 4)
        with pytest.raises(ValueError):
            grad_tile(ds, Hyperparameters(1, 1, 0.1), "nu", 0, 0, make_spec(4, 1))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        ds = random_dataset(rng, 12)
        spec = make_spec(12, 3)
        h = 1e-6
        for _ in range(5):
            theta = Hyperparameters(*rng.uniform(0.1, 10.0, 3))
            for k, comp in enumerate(
                ("length_scale", "signal_variance", "noise_variance")
            ):
                for (i, j) in [(0, 0), (2, 1)]:
                    up = theta.as_array()
                    up[k] += h
                    dn = theta.as_array()
                    dn[k] -= h
                    fd = (
                        assemble_cov_tile(ds, Hyperparameters.from_array(up), i, j, spec)
                        - assemble_cov_tile(ds, Hyperparameters.from_array(dn), i, j, spec)
                    ) / (2 * h)
                    got = grad_tile(ds, theta, comp, i, j, spec)
                    assert oracles.rel_err(got, fd) < 1e-5
