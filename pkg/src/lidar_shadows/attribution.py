"""Frustum collection, attribution to known objects, and obstacle localization."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import DbscanParams, dbscan
from .geometry import Aabb3, TWO_PI, Wedge, aabb_of_points, nearest_edge_distance
from .scene_io import LabeledObject, Scene
from .shadow_detect import (
    RoiConfig,
    ShadowCluster,
    extract_slab,
    find_shadow_clusters,
    occupancy_grid,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    roi: RoiConfig = field(default_factory=RoiConfig)
    cell_dbscan: DbscanParams = field(default_factory=lambda: DbscanParams(1.0, 3, "chebyshev_grid"))
    point_dbscan: DbscanParams = field(default_factory=lambda: DbscanParams(0.6, 8, "euclidean_3d"))
    min_cells: int = 6
    range_min: float = 2.5
    ground_clearance: float = 0.2
    min_obstacle_height: float = 0.3
    match_min_points: int = 1
    cell_stride: int = 1

    def __post_init__(self) -> None:
        if self.min_cells < 1 or self.match_min_points < 1 or self.cell_stride < 1:
            raise ValueError("min_cells, match_min_points and cell_stride must be >= 1")
        if self.range_min < 0 or self.ground_clearance < 0 or self.min_obstacle_height < 0:
            raise ValueError("range_min, ground_clearance and min_obstacle_height must be >= 0")


@dataclass
class Obstacle:
    id: int
    indices: np.ndarray  # into the scene cloud
    points: np.ndarray  # (M, 3)
    box: Aabb3
    source_shadow_ids: frozenset[int] = frozenset()


@dataclass
class DetectionResult:
    shadow_clusters: list[ShadowCluster]
    attributed: dict[int, int]
    obstacles: list[Obstacle]
    timing: dict[str, float]
    config: PipelineConfig
    frustum_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    residue_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    ground_level: float = 0.0
    slab_z: tuple[float, float] = (0.0, 0.0)
    scene_id: str = ""
    warnings: list[str] = field(default_factory=list)


# --- wedges ----------------------------------------------------------------


@dataclass
class WedgeArrays:
    """Columnar form of a wedge list, one row per wedge."""

    az_min: np.ndarray
    az_max: np.ndarray
    range_max: np.ndarray
    range_min: np.ndarray

    def __len__(self) -> int:
        return len(self.az_min)

    def to_list(self) -> list[Wedge]:
        return [Wedge(*map(float, row)) for row in
                zip(self.az_min, self.az_max, self.range_max, self.range_min)]

    @classmethod
    def from_list(cls, wedges: list[Wedge]) -> "WedgeArrays":
        cols = np.array([(w.az_min, w.az_max, w.range_max, w.range_min) for w in wedges],
                        dtype=np.float64).reshape(-1, 4)
        return cls(*cols.T.copy())


def wedge_arrays_of_cells(cells: np.ndarray, roi: RoiConfig, range_min: float) -> tuple[WedgeArrays, np.ndarray]:
    """Wedges for many cells at once; also returns the mask of cells kept.

    Cells whose square contains the origin have no wedge and are dropped.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    x0 = roi.x_min + cells[:, 0] * roi.cell
    y0 = -roi.y_half_width + cells[:, 1] * roi.cell
    x1, y1 = x0 + roi.cell, y0 + roi.cell
    keep = ~((x0 <= 0) & (x1 >= 0) & (y0 <= 0) & (y1 >= 0))
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    cx = np.stack([x0, x1, x1, x0], axis=1)
    cy = np.stack([y0, y0, y1, y1], axis=1)
    az = np.arctan2(cy, cx)
    mean = np.arctan2(np.sin(az).sum(axis=1), np.cos(az).sum(axis=1))
    az = az - TWO_PI * np.round((az - mean[:, None]) / TWO_PI)
    lo, hi = az.min(axis=1), az.max(axis=1)
    shift = np.where(lo <= -math.pi, TWO_PI, np.where(lo > math.pi, -TWO_PI, 0.0))
    rmax = np.hypot(cx, cy).min(axis=1)
    arrays = WedgeArrays(lo + shift, hi + shift, rmax, np.full(len(lo), float(range_min)))
    return arrays, keep


def wedges_of_cluster(cluster: ShadowCluster, roi: RoiConfig, range_min: float = 2.5,
                      stride: int = 1) -> list[Wedge]:
    cells = cluster.cells[::stride]
    arrays, keep = wedge_arrays_of_cells(cells, roi, range_min)
    if not keep.all():
        log.warning("shadow cluster %d: skipped %d cell(s) containing the sensor origin",
                    cluster.id, int((~keep).sum()))
    return arrays.to_list()


class WedgeUnion:
    """Membership test for the union of many wedges.

    For each distinct lower radius the union is an azimuth envelope: the largest
    upper radius among wedges covering that azimuth. Envelope pieces alternate
    between breakpoints and the open gaps between them, so closed interval
    ends are honoured exactly.
    """

    def __init__(self, wedges: WedgeArrays | list[Wedge]):
        if isinstance(wedges, list):
            wedges = WedgeArrays.from_list(wedges)
        self.groups = []
        for rmin in np.unique(wedges.range_min):
            sel = wedges.range_min == rmin
            self.groups.append((float(rmin), *self._envelope(
                wedges.az_min[sel], wedges.az_max[sel], wedges.range_max[sel])))

    @staticmethod
    def _envelope(lo: np.ndarray, hi: np.ndarray, rmax: np.ndarray):
        wrap = hi > math.pi
        lo = np.concatenate([lo, np.full(int(wrap.sum()), -math.pi)])
        hi = np.concatenate([np.where(wrap, math.pi, hi), hi[wrap] - TWO_PI])
        rmax = np.concatenate([rmax, rmax[wrap]])
        brk = np.unique(np.concatenate([lo, hi]))
        first = 2 * np.searchsorted(brk, lo)
        last = 2 * np.searchsorted(brk, hi)
        n_pieces = 2 * len(brk) - 1
        env = np.full(n_pieces, -np.inf)
        # Paint from the largest radius down; each piece is written once.
        nxt = list(range(n_pieces + 1))

        def find(x: int) -> int:
            root = x
            while nxt[root] != root:
                root = nxt[root]
            while nxt[x] != root:
                nxt[x], x = root, nxt[x]
            return root

        for k in np.argsort(-rmax, kind="stable").tolist():
            x, stop, r = find(int(first[k])), int(last[k]), float(rmax[k])
            while x <= stop:
                env[x] = r
                nxt[x] = x + 1
                x = find(x + 1)
        return brk, env

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        inside = np.zeros(len(pts), dtype=bool)
        if not len(pts) or not self.groups:
            return inside
        r = np.hypot(pts[:, 0], pts[:, 1])
        az = np.arctan2(pts[:, 1], pts[:, 0])
        for rmin, brk, env in self.groups:
            k = np.searchsorted(brk, az, side="left")
            kc = np.minimum(k, len(brk) - 1)
            exact = brk[kc] == az
            piece = np.where(exact, 2 * kc, 2 * k - 1)
            valid = exact | ((k > 0) & (k < len(brk)))
            bound = np.full(len(pts), -np.inf)
            bound[valid] = env[piece[valid]]
            inside |= (r >= rmin) & (r < bound)
        return inside


def collect_frustum_points(xyz: np.ndarray, wedges: WedgeArrays | list[Wedge]) -> np.ndarray:
    """Sorted indices of points inside at least one wedge."""
    if len(wedges) == 0:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(WedgeUnion(wedges).contains(np.asarray(xyz, dtype=np.float64)))


# --- attribution -----------------------------------------------------------


def split_by_objects(xyz: np.ndarray, frustum_idx: np.ndarray,
                     objects: list[LabeledObject]) -> tuple[dict[int, int], np.ndarray]:
    """Count frustum points per containing object box; unclaimed points form the residue."""
    frustum_idx = np.asarray(frustum_idx, dtype=np.int64)
    pts = np.asarray(xyz, dtype=np.float64)[frustum_idx]
    claimed = np.zeros(len(frustum_idx), dtype=bool)
    attributed: dict[int, int] = {}
    for obj in objects:
        inside = obj.box.contains(pts)
        n = int(inside.sum())
        if n:
            attributed[obj.id] = n
            claimed |= inside
    return attributed, frustum_idx[~claimed]


def detect_obstacles(xyz: np.ndarray, residue_idx: np.ndarray, cfg: PipelineConfig,
                     ground_level: float) -> list[Obstacle]:
    """Cluster residue points above the ground clearance into boxed obstacles."""
    residue_idx = np.asarray(residue_idx, dtype=np.int64)
    pts = np.asarray(xyz, dtype=np.float64)[residue_idx]
    keep = pts[:, 2] >= ground_level + cfg.ground_clearance
    idx, pts = residue_idx[keep], pts[keep]
    if not len(idx):
        return []
    labels = dbscan(pts, cfg.point_dbscan)
    found = []
    for k in range(labels.n_clusters):
        sel = labels.assignment == k
        if sel.sum() < cfg.point_dbscan.min_pts:
            continue
        box = aabb_of_points(pts[sel])
        if box.max[2] - box.min[2] < cfg.min_obstacle_height:
            continue
        found.append((nearest_edge_distance(box), k, idx[sel], pts[sel], box))
    found.sort(key=lambda t: (t[0], t[1]))
    return [Obstacle(i, f[2], f[3], f[4]) for i, f in enumerate(found)]


def run_pipeline(scene: Scene, visible_objects: list[LabeledObject] | None = None,
                 cfg: PipelineConfig | None = None) -> DetectionResult:
    cfg = cfg or PipelineConfig()
    visible_objects = scene.labels if visible_objects is None else visible_objects
    known = {o.id for o in scene.labels}
    if any(o.id not in known for o in visible_objects):
        raise ValueError("visible objects must be a subset of the scene labels")
    warnings: list[str] = []
    timing: dict[str, float] = {}
    t_start = clock = time.perf_counter()

    def lap(stage: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        timing[stage] = now - clock
        clock = now

    xyz = scene.cloud.xyz
    if not len(xyz):
        warnings.append("empty point cloud")
        log.warning("scene %r: empty point cloud", scene.scene_id)
    slab = extract_slab(xyz, cfg.roi)
    lap("slab")
    grid = occupancy_grid(slab.points, cfg.roi)
    lap("grid")
    clusters = find_shadow_clusters(grid, cfg.cell_dbscan, cfg.min_cells)
    lap("cell_dbscan")

    per_cluster = []
    skipped = 0
    for c in clusters:
        arrays, keep = wedge_arrays_of_cells(c.cells[::cfg.cell_stride], cfg.roi, cfg.range_min)
        skipped += int((~keep).sum())
        per_cluster.append(arrays)
    if skipped:
        warnings.append(f"skipped {skipped} shadow cell(s) containing the sensor origin")
        log.warning("scene %r: skipped %d shadow cell(s) containing the sensor origin",
                    scene.scene_id, skipped)
    all_wedges = WedgeArrays(*(np.concatenate([getattr(a, f) for a in per_cluster] or [np.empty(0)])
                               for f in ("az_min", "az_max", "range_max", "range_min")))
    lap("wedges")
    frustum = collect_frustum_points(xyz, all_wedges)
    lap("collect")
    attributed, residue = split_by_objects(xyz, frustum, visible_objects)
    lap("attribution")
    obstacles = detect_obstacles(xyz, residue, cfg, slab.ground_level)
    lap("point_dbscan")
    if obstacles:
        unions = [WedgeUnion(a) for a in per_cluster]
        for ob in obstacles:
            ob.source_shadow_ids = frozenset(
                c.id for c, u in zip(clusters, unions) if u.contains(ob.points).any())
    lap("sources")
    timing["total"] = time.perf_counter() - t_start

    return DetectionResult(
        shadow_clusters=clusters,
        attributed=attributed,
        obstacles=obstacles,
        timing=timing,
        config=cfg,
        frustum_indices=frustum,
        residue_indices=residue,
        ground_level=slab.ground_level,
        slab_z=(slab.z_min, slab.z_max),
        scene_id=scene.scene_id,
        warnings=warnings,
    )
