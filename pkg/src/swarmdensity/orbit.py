"""Time-varying bin centroids riding passive relative orbits.

Bins keep their logical raster identity (so the target density, recurrent
set and motion constraints are time-invariant) while their centroids move
on closed 2:1 ellipses in the orbital plane. Holding a bin is then free;
only the distances feeding the guidance weights change with time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .guidance import alpha_from_distances

PERIOD = 20  # steps per full orbit: the phase advances by pi/10 each step


@dataclass(frozen=True)
class OrbitGridAdapter:
    """Maps a logical raster grid onto orbiting centroids."""

    grid: Grid

    def centroids_at(self, k: int) -> np.ndarray:
        """(n_cell, 2) centroid positions at step k."""
        if k < 0:
            raise ValueError("step must be nonnegative")
        x = self.grid.centroids[:, 0].astype(float)
        y = self.grid.centroids[:, 1].astype(float)
        # k is reduced mod the orbit period, which is exact in floats and
        # keeps the phase argument small for any step count.
        phase = np.pi * ((k % PERIOD) / 10.0 + y / 300.0)
        amp = 1.0 + x / 15.0
        return np.column_stack([0.5 * amp * np.sin(phase), amp * np.cos(phase)])


def bin_centroid_at(adapter: OrbitGridAdapter, i: int, k: int) -> np.ndarray:
    """Centroid of bin i at step k (2-vector in orbital-plane units)."""
    if not 0 <= i < adapter.grid.n_cell:
        raise IndexError("bin index out of range")
    return adapter.centroids_at(k)[i]


def orbit_distances(adapter: OrbitGridAdapter, c: int, k: int) -> np.ndarray:
    """Instantaneous l1 distance from every bin centroid to bin c's."""
    pos = adapter.centroids_at(k)
    return np.abs(pos - pos[c]).sum(axis=1)


def orbit_alpha_vector(adapter: OrbitGridAdapter, c: int, k: int) -> np.ndarray:
    """Distance-based guidance weights using the step-k centroid positions."""
    if not 0 <= c < adapter.grid.n_cell:
        raise IndexError("reference bin out of range")
    return alpha_from_distances(orbit_distances(adapter, c, k))
