"""Rectangular bin geometry and target formations.

The workspace is a width x height raster of disjoint bins, indexed row-major.
A formation is a probability vector over those bins; bins with positive mass
are "recurrent", the rest "transient".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

NORM_TOL = 1e-12


class FormationError(ValueError):
    """Raised for malformed formation rasters."""


@dataclass(frozen=True)
class Grid:
    """Row-major raster of width*height bins with integer centroids."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def n_cell(self) -> int:
        return self.width * self.height

    @cached_property
    def centroids(self) -> np.ndarray:
        """(n_cell, 2) array of (col, row) coordinates in grid units."""
        rows, cols = np.divmod(np.arange(self.n_cell), self.width)
        return np.column_stack([cols, rows]).astype(np.int64)

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """All-pairs l1 distance between bin centroids."""
        c = self.centroids
        return np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2)

    def bin_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(f"bin ({row}, {col}) outside {self.height}x{self.width} grid")
        return row * self.width + col


@dataclass(frozen=True)
class Formation:
    """Target density pi over the bins of a grid."""

    pi: np.ndarray
    recurrent: np.ndarray = field(init=False)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1:
            raise FormationError("pi must be a vector")
        if (pi < 0).any():
            raise FormationError("pi entries must be nonnegative")
        if abs(pi.sum() - 1.0) > NORM_TOL:
            raise FormationError(f"pi must sum to 1 (got {pi.sum()!r})")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "recurrent", np.flatnonzero(pi > 0))
        if self.n_rec < 1:
            raise FormationError("formation needs at least one positive bin")

    @property
    def n_cell(self) -> int:
        return self.pi.size

    @property
    def n_rec(self) -> int:
        return self.recurrent.size


def validate_density(values: np.ndarray, tol: float = NORM_TOL) -> np.ndarray:
    """Check a vector is a probability mass function; returns it as float array."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("density must be a vector")
    if (v < 0).any() or (v > 1 + tol).any():
        raise ValueError("density entries must lie in [0, 1]")
    if abs(v.sum() - 1.0) > tol:
        raise ValueError(f"density must sum to 1 (got {v.sum()!r})")
    return v


def parse_formation_raster(text: str) -> np.ndarray:
    """Parse a formation file into a (height, width) weight array.

    Two layouts are accepted: lines of '.'/'#' characters (marked cells get
    weight 1) or whitespace-separated nonnegative numbers. Lines starting
    with ';' are comments; blank lines are ignored.
    """
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        rows.append(line)
    if not rows:
        raise FormationError("formation file contains no raster lines")

    if set("".join(rows)) <= {".", "#"}:
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise FormationError("ragged raster rows")
        weights = np.array([[1.0 if ch == "#" else 0.0 for ch in r] for r in rows])
    else:
        parsed = []
        for r in rows:
            try:
                parsed.append([float(tok) for tok in r.split()])
            except ValueError as exc:
                raise FormationError(f"bad numeric raster line {r!r}") from exc
        widths = {len(p) for p in parsed}
        if len(widths) != 1:
            raise FormationError("ragged raster rows")
        weights = np.array(parsed)
        if (weights < 0).any():
            raise FormationError("negative weights in formation raster")

    if weights.sum() == 0:
        raise FormationError("all-zero formation raster")
    return weights


def load_formation(text: str, grid: Grid | None = None) -> Formation:
    """Parse a formation file and normalize it to a density over grid bins."""
    weights = parse_formation_raster(text)
    if grid is not None and weights.shape != (grid.height, grid.width):
        raise FormationError(
            f"raster is {weights.shape[0]}x{weights.shape[1]}, "
            f"grid is {grid.height}x{grid.width}"
        )
    pi = weights.ravel() / weights.sum()
    return Formation(pi=pi)


def bin_distance(grid: Grid, l: int, c: int) -> int:
    """l1 distance between the centroids of two bins."""
    n = grid.n_cell
    if not (0 <= l < n and 0 <= c < n):
        raise IndexError(f"bin index out of range for {n} bins")
    return int(np.abs(grid.centroids[l] - grid.centroids[c]).sum())


def check_pi_connectivity(formation: Formation, constraint) -> bool:
    """True iff all recurrent bins are mutually reachable through recurrent
    bins only, using single-step moves allowed by the constraint matrix."""
    A = np.asarray(getattr(constraint, "A", constraint), dtype=bool)
    rec = formation.recurrent
    if rec.size <= 1:
        return True
    sub = A[np.ix_(rec, rec)]
    seen = np.zeros(rec.size, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(sub[u] & ~seen):
            seen[v] = True
            stack.append(int(v))
    return bool(seen.all())
