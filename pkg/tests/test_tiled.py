import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprs import (
    TiledVector,
    gather_vector,
    make_spec,
    panel_from_dense,
    scatter_vector,
    symmetric_from_dense,
)


def symmetric_random(rng, n):
    r = rng.standard_normal((n, n))
    return np.tril(r) + np.tril(r, -1).T


class TestMakeSpec:
    def test_power_of_two_case(self):
        assert make_spec(8192, 16).tile_size == 512

    def test_single_tile(self):
        spec = make_spec(8, 1)
        assert spec.tile_size == 8
        assert spec.padded_size == 8

    def test_padded_case(self):
        spec = make_spec(10, 4)
        assert spec.tile_size == 3
        assert spec.padded_size == 12
        assert spec.valid_in_tile(3) == 1

    @pytest.mark.parametrize("n,t", [(4, 5), (1, 2), (0, 1), (4, 0), (-1, 1)])
    def test_rejects_bad_arguments(self, n, t):
        with pytest.raises(ValueError):
            make_spec(n, t)


class TestSymmetric:
    def test_identity_layout_single_tile(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        m = symmetric_from_dense(a, make_spec(2, 1))
        assert (m.to_dense() == a).all()

    def test_round_trip_padded(self):
        rng = np.random.default_rng(0)
        a = symmetric_random(rng, 10)
        m = symmetric_from_dense(a, make_spec(10, 4))
        assert (m.to_dense() == a).all()

    def test_bitwise_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((7, 7))  # deliberately non-symmetric input
        m = symmetric_from_dense(np.tril(a) + np.tril(a, -1).T, make_spec(7, 3))
        d = m.to_dense()
        assert (d == d.T).all()

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_round_trip_property(self, data):
        n = data.draw(st.integers(1, 64))
        t = data.draw(st.integers(1, n))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        a = symmetric_random(rng, n)
        m = symmetric_from_dense(a, make_spec(n, t))
        assert (m.to_dense() == a).all()

    def test_padding_never_observable(self):
        rng = np.random.default_rng(2)
        a = symmetric_random(rng, 10)
        spec = make_spec(10, 4)
        m = symmetric_from_dense(a, spec)
        # poison every padding position and check nothing escapes
        for (i, j), tile in m.tiles.items():
            vi = spec.valid_in_tile(i)
            vj = spec.valid_in_tile(j)
            tile[vi:, :] = np.nan
            tile[:, vj:] = np.nan
        assert not np.isnan(m.to_dense()).any()

    def test_lower_factor_view(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 6))
        spd = a @ a.T + 6 * np.eye(6)
        L = np.linalg.cholesky(spd)
        m = symmetric_from_dense(np.tril(L) + np.tril(L, -1).T, make_spec(6, 2))
        assert np.allclose(m.to_dense_lower(), L)
        assert (np.triu(m.to_dense_lower(), 1) == 0).all()


class TestPanel:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((10, 7))
        p = panel_from_dense(a, make_spec(10, 3), make_spec(7, 2))
        assert (p.to_dense() == a).all()

    def test_padding_poison(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((5, 5))
        rs, cs = make_spec(5, 2), make_spec(5, 2)
        p = panel_from_dense(a, rs, cs)
        for (i, j), tile in p.tiles.items():
            tile[rs.valid_in_tile(i):, :] = np.nan
            tile[:, cs.valid_in_tile(j):] = np.nan
        assert not np.isnan(p.to_dense()).any()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            panel_from_dense(np.zeros((3, 3)), make_spec(4, 2), make_spec(3, 1))


class TestVector:
    def test_single_segment(self):
        v = scatter_vector(np.array([1.0, 2.0, 3.0]), make_spec(3, 1))
        assert (gather_vector(v) == [1.0, 2.0, 3.0]).all()

    def test_padding_dropped(self):
        v = TiledVector(
            make_spec(3, 2),
            [np.array([1.0, 2.0]), np.array([3.0, np.nan])],
        )
        out = gather_vector(v)
        assert (out == [1.0, 2.0, 3.0]).all()

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_scatter_gather_round_trip(self, data):
        n = data.draw(st.integers(1, 64))
        t = data.draw(st.integers(1, n))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        x = rng.standard_normal(n)
        assert (gather_vector(scatter_vector(x, make_spec(n, t))) == x).all()

    def test_large_round_trip(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(8192)
        assert (gather_vector(scatter_vector(x, make_spec(8192, 16))) == x).all()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            scatter_vector(np.zeros(4), make_spec(5, 1))
