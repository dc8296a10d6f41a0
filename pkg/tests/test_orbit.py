import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from swarmdensity.grid import Grid
from swarmdensity.orbit import (
    PERIOD,
    OrbitGridAdapter,
    bin_centroid_at,
    orbit_alpha_vector,
    orbit_distances,
)


@pytest.fixture
def adapter():
    return OrbitGridAdapter(Grid(width=30, height=30))


def scalar_centroid(x, y, k):
    """Independent scalar evaluation of the centroid formula."""
    phase = math.pi * (k / 10.0 + y / 300.0)
    amp = 1.0 + x / 15.0
    return 0.5 * amp * math.sin(phase), amp * math.cos(phase)


def test_origin_bin_at_k0(adapter):
    assert_allclose(bin_centroid_at(adapter, 0, 0), [0.0, 1.0], atol=1e-15)


def test_far_column_quarter_period(adapter):
    # bin at (x=15, y=0): amplitude 2, phase pi/2 at k=5
    i = adapter.grid.bin_index(0, 15)
    assert_allclose(bin_centroid_at(adapter, i, 5), [1.0, 0.0], atol=1e-15)


def test_matches_scalar_formula(adapter):
    rng = np.random.default_rng(0)
    for _ in range(200):
        i = int(rng.integers(900))
        k = int(rng.integers(0, PERIOD))
        x, y = adapter.grid.centroids[i]
        assert_allclose(bin_centroid_at(adapter, i, k),
                        scalar_centroid(x, y, k), atol=1e-15)


def test_period_identity_exact(adapter):
    for k in [0, 3, 7, 19]:
        assert_array_equal(adapter.centroids_at(k),
                           adapter.centroids_at(k + PERIOD))
        assert_array_equal(adapter.centroids_at(k),
                           adapter.centroids_at(k + 50 * PERIOD))


def test_centroids_pairwise_distinct(adapter):
    for k in [0, 5, 13]:
        pos = adapter.centroids_at(k)
        d = np.abs(pos[:, None, :] - pos[None, :, :]).sum(axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 0


def test_negative_step_rejected(adapter):
    with pytest.raises(ValueError):
        adapter.centroids_at(-1)
    with pytest.raises(IndexError):
        bin_centroid_at(adapter, 900, 0)


def test_orbit_distances_self_zero(adapter):
    d = orbit_distances(adapter, 17, 4)
    assert d[17] == 0.0
    assert (d[np.arange(900) != 17] > 0).all()


def test_orbit_alpha_properties(adapter):
    for k in [0, 9]:
        a = orbit_alpha_vector(adapter, 42, k)
        assert a[42] == 1.0
        assert (a > 0).all() and (a <= 1).all()


def test_orbit_alpha_periodic(adapter):
    assert_array_equal(orbit_alpha_vector(adapter, 7, 3),
                       orbit_alpha_vector(adapter, 7, 3 + PERIOD))


def test_orbit_alpha_actually_time_varying(adapter):
    a0 = orbit_alpha_vector(adapter, 7, 0)
    a5 = orbit_alpha_vector(adapter, 7, 5)
    assert np.abs(a0 - a5).max() > 1e-3
