import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose
from scipy.spatial.distance import pdist

from svirest.geometry import (BoxDomain, LocationSet, fill_distance, generate_locations,
                              quasi_uniformity_ratio, separation_distance)


def _set(values, dim=1):
    pts = np.asarray(values, dtype=float).reshape(-1, dim)
    return LocationSet(pts, BoxDomain.unit(dim))


def _brute_fill(Y, m):
    g = (np.arange(m + 1)) / m
    probes = np.stack(np.meshgrid(*([g] * Y.dim), indexing="ij"), -1).reshape(-1, Y.dim)
    d = np.linalg.norm(probes[:, None, :] - Y.points[None], axis=2)
    return d.min(axis=1).max()


class TestDomainAndSet:
    def test_box_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            BoxDomain((0.0,), (0.0,))

    def test_points_outside_box_rejected(self):
        with pytest.raises(ValueError):
            _set([0.5, 1.5])

    def test_duplicate_points_rejected(self):
        with pytest.raises(ValueError):
            _set([0.5, 0.5])

    def test_json_round_trip(self, rng):
        Y = LocationSet(rng.uniform(size=(30, 2)), BoxDomain.unit(2))
        doc = json.loads(Y.to_json())
        assert doc["dim"] == 2 and len(doc["points"]) == 30
        back = LocationSet.from_json(Y.to_json())
        assert_allclose(back.points, Y.points, rtol=1e-15, atol=0)


class TestSeparation:
    def test_two_points(self):
        assert separation_distance(_set([0.25, 0.75])) == pytest.approx(0.25)

    def test_three_points(self):
        assert separation_distance(_set([0.0, 0.1, 0.5])) == pytest.approx(0.05)

    def test_single_point_raises(self):
        with pytest.raises(ValueError, match="separation undefined for a single point"):
            separation_distance(_set([0.5]))

    def test_matches_exhaustive_scan(self, rng):
        Y = LocationSet(rng.uniform(size=(100, 2)), BoxDomain.unit(2))
        assert separation_distance(Y) == 0.5 * pdist(Y.points).min()

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=40, unique=True))
    def test_property_exhaustive(self, xs):
        Y = _set(xs)
        assert separation_distance(Y) == pytest.approx(0.5 * pdist(Y.points).min(), rel=0, abs=0)


class TestFill:
    def test_single_point_1d(self):
        assert fill_distance(_set([0.5])) == 0.5

    def test_single_point_2d_corner(self):
        Y = _set([0.5, 0.5], dim=2)
        assert fill_distance(Y, probe_resolution=1 / 64) == pytest.approx(np.sqrt(0.5), abs=1 / 64)

    @pytest.mark.parametrize("n", [1, 3, 8, 17])
    def test_midpoint_grid_exact(self, n):
        Y = generate_locations(n, BoxDomain.unit(1), "midpoint-grid")
        h = fill_distance(Y)
        assert h * 2 * n == pytest.approx(1.0, abs=1e-14)
        if n > 1:
            assert separation_distance(Y) * 2 * n == pytest.approx(1.0, abs=1e-14)

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30, unique=True),
           st.floats(0, 1, allow_nan=False))
    def test_adding_point_never_increases_1d(self, xs, extra):
        if extra in xs:
            return
        before = fill_distance(_set(xs))
        after = fill_distance(_set(xs + [extra]))
        assert after <= before + 1e-15

    def test_probe_grid_matches_brute_force(self, rng):
        Y = LocationSet(rng.uniform(size=(40, 2)), BoxDomain.unit(2))
        assert fill_distance(Y, probe_resolution=1 / 256) == pytest.approx(_brute_fill(Y, 256), rel=1e-12)


class TestQuasiUniformity:
    def test_midpoint_grid_ratio_one(self):
        Y = generate_locations(8, BoxDomain.unit(1), "midpoint-grid")
        rep = quasi_uniformity_ratio(Y)
        assert rep.fill == pytest.approx(1 / 16) and rep.separation == pytest.approx(1 / 16)
        assert rep.ratio == pytest.approx(1.0)

    def test_two_points_ratio_one(self):
        assert quasi_uniformity_ratio(_set([0.25, 0.75])).ratio == pytest.approx(1.0)

    def test_halton_against_dense_oracle(self):
        Y = generate_locations(64, BoxDomain.unit(2), "halton", seed=3)
        rep = quasi_uniformity_ratio(Y, probe_resolution=1 / 512)
        oracle = _brute_fill(Y, 1024) / (0.5 * pdist(Y.points).min())
        assert rep.ratio == pytest.approx(oracle, rel=0.01)

    def test_single_point_raises(self):
        with pytest.raises(ValueError):
            quasi_uniformity_ratio(_set([0.5]))


class TestGenerate:
    def test_midpoint_1d(self):
        Y = generate_locations(4, BoxDomain.unit(1), "midpoint-grid")
        assert_allclose(Y.points.ravel(), [0.125, 0.375, 0.625, 0.875])

    def test_midpoint_2d(self):
        Y = generate_locations(9, BoxDomain.unit(2), "midpoint-grid")
        c = np.array([1, 3, 5]) / 6
        expected = np.stack(np.meshgrid(c, c, indexing="ij"), -1).reshape(-1, 2)
        assert_allclose(np.sort(Y.points, axis=0), np.sort(expected, axis=0))

    def test_non_power_rejected(self):
        with pytest.raises(ValueError):
            generate_locations(10, BoxDomain.unit(2), "jittered-grid")

    def test_jittered_quasi_uniform(self):
        Y = generate_locations(16, BoxDomain.unit(1), "jittered-grid", seed=7)
        assert quasi_uniformity_ratio(Y).ratio <= 3

    @pytest.mark.parametrize("scheme", ["jittered-grid", "uniform-random", "halton"])
    def test_deterministic(self, scheme):
        a = generate_locations(16, BoxDomain.unit(2), scheme, seed=5)
        b = generate_locations(16, BoxDomain.unit(2), scheme, seed=5)
        assert np.array_equal(a.points, b.points)

    def test_fill_scaling_stable(self):
        # c / n <= h^d <= C / n with stable constants for quasi-uniform sets
        products = []
        for n in [16, 64, 256, 1024]:
            Y = generate_locations(n, BoxDomain.unit(1), "jittered-grid", seed=1)
            products.append(fill_distance(Y) * n)
        assert max(products) / min(products) < 3.0
