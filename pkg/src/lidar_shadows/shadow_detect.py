"""Ground-slab occupancy grid over the front RoI and clustering of its empty cells."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clustering import DbscanParams, dbscan

GROUND_MODES = ("fixed", "percentile")


@dataclass(frozen=True)
class RoiConfig:
    x_min: float = 0.0
    x_max: float = 30.0
    y_half_width: float = 5.0
    cell: float = 0.3
    slab_z_min: float = -2.0
    slab_z_max: float = -1.4
    ground_mode: str = "fixed"

    def __post_init__(self) -> None:
        if not self.x_max > self.x_min:
            raise ValueError("roi.x_max must exceed roi.x_min")
        if not self.y_half_width > 0:
            raise ValueError("roi.y_half_width must be positive")
        if not self.cell > 0:
            raise ValueError("roi.cell must be positive")
        if not self.slab_z_max > self.slab_z_min:
            raise ValueError("roi.slab_z_max must exceed roi.slab_z_min")
        if self.ground_mode not in GROUND_MODES:
            raise ValueError(f"roi.ground_mode must be one of {GROUND_MODES}")

    @property
    def nx(self) -> int:
        return math.ceil((self.x_max - self.x_min) / self.cell - 1e-9)

    @property
    def ny(self) -> int:
        return math.ceil(2 * self.y_half_width / self.cell - 1e-9)

    def in_rect(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)[..., :2].reshape(-1, 2)
        return ((xy[:, 0] >= self.x_min) & (xy[:, 0] < self.x_max)
                & (xy[:, 1] >= -self.y_half_width) & (xy[:, 1] < self.y_half_width))


@dataclass
class Slab:
    points: np.ndarray  # (M, 3) selected points
    indices: np.ndarray  # indices into the source cloud
    z_min: float
    z_max: float
    ground_level: float


@dataclass
class OccupancyGrid:
    occupied: np.ndarray  # (nx, ny) bool
    roi: RoiConfig

    @property
    def nx(self) -> int:
        return self.occupied.shape[0]

    @property
    def ny(self) -> int:
        return self.occupied.shape[1]

    def empty_cells(self) -> np.ndarray:
        """(K, 2) indices of empty cells in lexicographic (ix, iy) order."""
        return np.argwhere(~self.occupied)


@dataclass(frozen=True)
class ShadowCluster:
    id: int
    cells: np.ndarray  # (K, 2) int, lexicographically sorted

    def __len__(self) -> int:
        return len(self.cells)

    def cell_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.cells}


def slab_bounds(xyz: np.ndarray, roi: RoiConfig) -> tuple[float, float]:
    if roi.ground_mode == "fixed":
        return roi.slab_z_min, roi.slab_z_max
    in_roi = roi.in_rect(xyz[:, :2])
    if not in_roi.any():
        return roi.slab_z_min, roi.slab_z_max
    lo = float(np.percentile(xyz[in_roi, 2], 2)) - roi.cell / 2
    return lo, lo + (roi.slab_z_max - roi.slab_z_min)


def extract_slab(xyz: np.ndarray, roi: RoiConfig) -> Slab:
    """Points of the thin ground-level band inside the RoI rectangle.

    ``ground_level`` is the 2nd percentile of the slab heights (the slab centre
    when the slab is empty); the obstacle stage measures clearance from it.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    z_lo, z_hi = slab_bounds(xyz, roi)
    mask = roi.in_rect(xyz[:, :2]) & (xyz[:, 2] >= z_lo) & (xyz[:, 2] < z_hi)
    idx = np.flatnonzero(mask)
    pts = xyz[idx]
    ground = float(np.percentile(pts[:, 2], 2)) if len(pts) else 0.5 * (z_lo + z_hi)
    return Slab(pts, idx, z_lo, z_hi, ground)


def cell_index(xy: np.ndarray, roi: RoiConfig) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    ix = np.floor((xy[:, 0] - roi.x_min) / roi.cell).astype(np.int64)
    iy = np.floor((xy[:, 1] + roi.y_half_width) / roi.cell).astype(np.int64)
    return np.column_stack([ix, iy])


def occupancy_grid(slab_points: np.ndarray, roi: RoiConfig) -> OccupancyGrid:
    occ = np.zeros((roi.nx, roi.ny), dtype=bool)
    pts = np.asarray(slab_points, dtype=np.float64)
    if pts.size:
        ij = cell_index(pts[..., :2], roi)
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < roi.nx) & (ij[:, 1] >= 0) & (ij[:, 1] < roi.ny)
        occ[ij[ok, 0], ij[ok, 1]] = True
    return OccupancyGrid(occ, roi)


def find_shadow_clusters(grid: OccupancyGrid, params: DbscanParams, min_cells: int = 6) -> list[ShadowCluster]:
    cells = grid.empty_cells()
    if len(cells) == 0:
        return []
    labels = dbscan(cells, params)
    out = []
    # dbscan numbers clusters by lexicographic minimum cell, which is the
    # required output order; the speckle filter keeps that order.
    for k in range(labels.n_clusters):
        members = cells[labels.assignment == k]
        if len(members) >= min_cells:
            out.append(ShadowCluster(len(out), members))
    return out


def cell_footprint(ix: int, iy: int, roi: RoiConfig) -> np.ndarray:
    """BEV corners (4, 2) of one grid cell, counter-clockwise."""
    if not (0 <= ix < roi.nx and 0 <= iy < roi.ny):
        raise IndexError(f"cell ({ix}, {iy}) outside {roi.nx}x{roi.ny} grid")
    x0 = roi.x_min + ix * roi.cell
    y0 = -roi.y_half_width + iy * roi.cell
    x1, y1 = x0 + roi.cell, y0 + roi.cell
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def cell_centers(cells: np.ndarray, roi: RoiConfig) -> np.ndarray:
    cells = np.asarray(cells).reshape(-1, 2)
    x = roi.x_min + (cells[:, 0] + 0.5) * roi.cell
    y = -roi.y_half_width + (cells[:, 1] + 0.5) * roi.cell
    return np.column_stack([x, y])
