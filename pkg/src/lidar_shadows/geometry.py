"""Oriented boxes, BEV polygon overlap, azimuth wedges and axis-aligned enclosure.

All coordinates are in the sensor frame (x forward, y left, z up) with the
LiDAR at the origin. Containment tests treat boundaries as inside.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CLIP_EPS = 1e-9
TWO_PI = 2.0 * math.pi


class DegenerateGeometryError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class OrientedBox3:
    center: tuple[float, float, float]
    dims: tuple[float, float, float]  # length (along yaw), width, height
    yaw: float = 0.0

    def __post_init__(self) -> None:
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims must have three components")
        if not all(d > 0 for d in dims):
            raise ValueError(f"box dimensions must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def z_min(self) -> float:
        return self.center[2] - self.dims[2] / 2

    @property
    def z_max(self) -> float:
        return self.center[2] + self.dims[2] / 2

    def footprint(self) -> np.ndarray:
        """BEV corners, counter-clockwise, shape (4, 2)."""
        l2, w2 = self.dims[0] / 2, self.dims[1] / 2
        local = np.array([[l2, w2], [-l2, w2], [-l2, -w2], [l2, -w2]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def corners(self) -> np.ndarray:
        """All eight 3D corners, shape (8, 3): bottom ring then top ring."""
        fp = self.footprint()
        bottom = np.column_stack([fp, np.full(4, self.z_min)])
        top = np.column_stack([fp, np.full(4, self.z_max)])
        return np.vstack([bottom, top])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        d = pts[..., :3] - np.array(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * d[..., 0] + s * d[..., 1]
        y = -s * d[..., 0] + c * d[..., 1]
        return np.stack([x, y, d[..., 2]], axis=-1)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Vectorized closed containment for an (N, >=3) array."""
        local = self.to_local(points)
        half = np.array(self.dims) / 2 + tol
        return np.all(np.abs(local) <= half, axis=-1)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "dims": list(self.dims), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedBox3":
        return cls(tuple(d["center"]), tuple(d["dims"]), d.get("yaw", 0.0))


@dataclass(frozen=True)
class Aabb3:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((a + b) / 2 for a, b in zip(self.min, self.max))

    def footprint(self) -> np.ndarray:
        (x0, y0, _), (x1, y1, _) = self.min, self.max
        return np.array([[x1, y1], [x0, y1], [x0, y0], [x1, y0]], dtype=np.float64)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)[..., :3]
        return np.all((pts >= np.array(self.min)) & (pts <= np.array(self.max)), axis=-1)

    def as_oriented(self) -> OrientedBox3:
        """Equivalent yaw-0 box. Zero-thickness extents are padded to 1e-9 m."""
        dims = tuple(max(b - a, 1e-9) for a, b in zip(self.min, self.max))
        return OrientedBox3(self.center, dims, 0.0)

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d: dict) -> "Aabb3":
        return cls(tuple(d["min"]), tuple(d["max"]))


@dataclass(frozen=True)
class Wedge:
    """Azimuth sector seen from the origin, bounded radially.

    ``az_min``/``az_max`` are unwrapped so that az_min <= az_max; az_min lies in
    (-pi, pi] and az_max may exceed pi for sectors straddling the -x axis.
    """

    az_min: float
    az_max: float
    range_max: float
    range_min: float = 2.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.range_min < self.range_max:
            raise ValueError(f"invalid wedge ranges [{self.range_min}, {self.range_max})")
        if not 0.0 <= self.az_max - self.az_min < math.pi:
            raise ValueError(f"invalid wedge azimuth span [{self.az_min}, {self.az_max}]")

    @property
    def az_mid(self) -> float:
        return 0.5 * (self.az_min + self.az_max)


# --- containment -----------------------------------------------------------


def point_in_obox(p, box: OrientedBox3) -> bool:
    return bool(box.contains(np.asarray(p, dtype=np.float64)[None, :3])[0])


def _unwrap_near(az: np.ndarray, ref: float) -> np.ndarray:
    """Shift azimuths by multiples of 2*pi to lie within pi of ``ref``."""
    return az - TWO_PI * np.round((az - ref) / TWO_PI)


def point_in_wedge(p, w: Wedge) -> bool:
    return bool(points_in_wedge(np.asarray(p, dtype=np.float64)[None, :], w)[0])


def points_in_wedge(points: np.ndarray, w: Wedge) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    r = np.hypot(pts[:, 0], pts[:, 1])
    az = _unwrap_near(np.arctan2(pts[:, 1], pts[:, 0]), w.az_mid)
    return (r >= w.range_min) & (r < w.range_max) & (az >= w.az_min) & (az <= w.az_max)


def wedge_of_footprint(corners, range_min: float = 2.5) -> Wedge:
    """Sector from the origin that covers a BEV footprint, stopping at its nearest corner."""
    c = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    if polygon_contains_origin(c):
        raise DegenerateGeometryError("footprint contains the sensor origin")
    dist = np.hypot(c[:, 0], c[:, 1])
    az = np.arctan2(c[:, 1], c[:, 0])
    mean_az = math.atan2(np.sin(az).sum(), np.cos(az).sum())
    az = _unwrap_near(az, mean_az)
    lo, hi = float(az.min()), float(az.max())
    shift = normalize_angle(lo) - lo
    return Wedge(lo + shift, hi + shift, float(dist.min()), range_min)


# --- polygons --------------------------------------------------------------


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _ccw(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    signed = np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))
    return poly if signed >= 0 else poly[::-1]


def clip_convex(subject: np.ndarray, clipper: np.ndarray, eps: float = CLIP_EPS) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by the convex polygon ``clipper``."""
    out = [tuple(p) for p in _ccw(np.asarray(subject, dtype=np.float64))]
    clip = _ccw(np.asarray(clipper, dtype=np.float64))
    n = len(clip)
    for k in range(n):
        if not out:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        norm = math.hypot(ex, ey)
        if norm == 0.0:
            continue

        def side(p):
            # Signed distance to the edge line, positive on the inner (left) side.
            return (ex * (p[1] - ay) - ey * (p[0] - ax)) / norm

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= -eps:
                if sp < -eps:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= -eps:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _footprint(box) -> np.ndarray:
    if isinstance(box, (OrientedBox3, Aabb3)):
        return box.footprint()
    return np.asarray(box, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a, b) -> float:
    return polygon_area(clip_convex(_footprint(a), _footprint(b)))


def bev_iou(a, b) -> float:
    fa, fb = _footprint(a), _footprint(b)
    # Cheap reject on bounding rectangles keeps disjoint pairs exactly zero.
    if (fa[:, 0].max() < fb[:, 0].min() or fb[:, 0].max() < fa[:, 0].min()
            or fa[:, 1].max() < fb[:, 1].min() or fb[:, 1].max() < fa[:, 1].min()):
        return 0.0
    inter = polygon_area(clip_convex(fa, fb))
    if inter <= 0.0:
        return 0.0
    union = polygon_area(fa) + polygon_area(fb) - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def polygon_contains_origin(poly: np.ndarray) -> bool:
    """Closed containment of (0, 0) in a convex polygon."""
    p = _ccw(np.asarray(poly, dtype=np.float64))
    a = p
    b = np.roll(p, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (0.0 - a[:, 1]) - (b[:, 1] - a[:, 1]) * (0.0 - a[:, 0])
    return bool(np.all(cross >= 0.0))


def _segment_distance_to_origin(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.where(dd > 0, -np.einsum("ij,ij->i", a, d) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * d
    return np.hypot(closest[:, 0], closest[:, 1])


def nearest_edge_distance(box) -> float:
    """BEV distance from the origin to the closest footprint edge (0 when inside)."""
    fp = _footprint(box)
    if polygon_contains_origin(fp):
        return 0.0
    return float(_segment_distance_to_origin(fp, np.roll(fp, -1, axis=0)).min())


def aabb_of_points(points) -> Aabb3:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise EmptyInputError("cannot enclose an empty point set")
    pts = pts.reshape(-1, pts.shape[-1])[:, :3]
    return Aabb3(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))
