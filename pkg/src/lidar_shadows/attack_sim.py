"""Object-hiding emulation and synthetic ray-cast scenes with analytic shadow truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import OrientedBox3, wedge_of_footprint
from .scene_io import Calibration, LabeledObject, PointCloud, Scene
from .shadow_detect import RoiConfig, cell_centers

SCAN_MODES = ("beams", "dense_ground")
GROUND_INTENSITY = 0.3
OBJECT_INTENSITY = 0.7


def _default_elevations() -> list[float]:
    return np.linspace(-24.8, 2.0, 64).tolist()


@dataclass(frozen=True)
class ScanPattern:
    mode: str = "dense_ground"
    azimuth_step: float = 0.2  # degrees
    elevations: tuple[float, ...] = field(default_factory=lambda: tuple(_default_elevations()))
    max_range: float = 80.0
    ground_grid_step: float = 0.1
    noise_sigma: float = 0.01
    # Dense-mode ground lattice: the RoI rectangle plus a surrounding apron so
    # that boxes are sampled to full height even where their shadows leave the RoI.
    x_range: tuple[float, float] = (0.0, 30.0)
    y_half_width: float = 5.0
    far_x: float = 60.0
    far_y: float = 15.0
    apron_step: float | None = None  # defaults to twice ground_grid_step

    def __post_init__(self) -> None:
        if self.mode not in SCAN_MODES:
            raise ValueError(f"scan mode must be one of {SCAN_MODES}")
        if not self.azimuth_step > 0:
            raise ValueError("azimuth_step must be positive")
        if self.mode == "beams" and not self.elevations:
            raise ValueError("beams mode needs at least one elevation")
        if not self.ground_grid_step > 0:
            raise ValueError("ground_grid_step must be positive")
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))


@dataclass(frozen=True)
class SceneObject:
    box: OrientedBox3
    class_name: str = "Car"


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...] = ()
    ground_z: float = -1.73
    sensor_height: float = 1.73
    scan: ScanPattern = field(default_factory=ScanPattern)
    seed: int = 0
    scene_id: str = "000000"

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        for obj in self.objects:
            if obj.box.z_min < self.ground_z - 1e-6:
                raise ValueError(f"object {obj.class_name} extends below the ground plane")

    @property
    def sensor_z(self) -> float:
        return self.ground_z + self.sensor_height

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "ground_z": self.ground_z,
            "sensor_height": self.sensor_height,
            "scan": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.scan).items()},
            "objects": [{"class_name": o.class_name, **o.box.to_dict()} for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        scan = ScanPattern(**d.get("scan", {}))
        objects = tuple(
            SceneObject(OrientedBox3.from_dict(o), o.get("class_name", "Car")) for o in d.get("objects", [])
        )
        return cls(objects, float(d.get("ground_z", -1.73)), float(d.get("sensor_height", 1.73)),
                   scan, int(d.get("seed", 0)), str(d.get("scene_id", "000000")))


# --- attack emulation ------------------------------------------------------


def hide_objects(labels: list[LabeledObject], hidden) -> list[LabeledObject]:
    """Drop the hidden ids from the detector output; the cloud is left alone."""
    hidden = set(hidden)
    unknown = hidden - {o.id for o in labels}
    if unknown:
        raise KeyError(f"unknown object id(s): {sorted(unknown)}")
    return [o for o in labels if o.id not in hidden]


# --- ray casting -----------------------------------------------------------


def ray_box_entry(origin: np.ndarray, dirs: np.ndarray, box: OrientedBox3) -> np.ndarray:
    """Parametric entry distance of rays into a box (inf where missed).

    Rays are origin + t * dir with t >= 0. A ray starting inside the box
    reports t = 0.
    """
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot_t = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot_t @ (np.asarray(origin, dtype=np.float64) - np.array(box.center))
    d = dirs @ rot_t.T
    half = np.array(box.dims) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    # Axis-parallel rays: inside the slab -> unconstrained, outside -> miss.
    parallel = d == 0
    inside_slab = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    t_in = lo.max(axis=1)
    t_out = hi.min(axis=1)
    hit = (t_out >= t_in) & (t_out >= 0)
    return np.where(hit, np.maximum(t_in, 0.0), np.inf)


def _first_box_hit(origin: np.ndarray, dirs: np.ndarray, boxes: list[OrientedBox3]):
    best = np.full(len(dirs), np.inf)
    for box in boxes:
        best = np.minimum(best, ray_box_entry(origin, dirs, box))
    return best


def _axis_samples(lo: float, hi: float, step: float) -> np.ndarray:
    """Centres of step-sized intervals tiling [lo, hi); the last one is clipped."""
    n = int(math.ceil((hi - lo) / step - 1e-9))
    left = lo + np.arange(n) * step
    return 0.5 * (left + np.minimum(left + step, hi))


def _dense_ground_lattice(scan: ScanPattern, ground_z: float) -> np.ndarray:
    """Ground samples tiling the RoI rectangle, plus an apron out to far_x / far_y."""
    step = scan.ground_grid_step
    x0, x1 = scan.x_range
    half = scan.y_half_width
    xs, ys = _axis_samples(x0, x1, step), _axis_samples(-half, half, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    parts = [np.column_stack([gx.ravel(), gy.ravel()])]
    far_x, far_y = max(scan.far_x, x1), max(scan.far_y, half)
    if far_x > x1 or far_y > half:
        step = scan.apron_step or 2 * step
        ax = x0 + (np.arange(int(math.ceil((far_x - x0) / step))) + 0.5) * step
        n_side = int(math.ceil((far_y - half) / step))
        ay = -half + (np.arange(-n_side, int(math.ceil(2 * half / step)) + n_side) + 0.5) * step
        gx, gy = np.meshgrid(ax, ay, indexing="ij")
        outside = (gx >= x1) | (gy < -half) | (gy >= half)
        parts.append(np.column_stack([gx[outside], gy[outside]]))
    xy = np.vstack(parts)
    return np.column_stack([xy, np.full(len(xy), ground_z)])


def raycast_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    scan = spec.scan
    origin = np.array([0.0, 0.0, spec.sensor_z])
    boxes = [o.box for o in spec.objects]

    if scan.mode == "beams":
        az = np.deg2rad(np.arange(0.0, 360.0, scan.azimuth_step))
        el = np.deg2rad(np.asarray(scan.elevations))
        a, e = np.meshgrid(az, el, indexing="ij")  # azimuth-major
        a, e = a.ravel(), e.ravel()
        dirs = np.column_stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
        with np.errstate(divide="ignore"):
            t_ground = np.where(dirs[:, 2] < 0, (spec.ground_z - spec.sensor_z) / dirs[:, 2], np.inf)
        t_box = _first_box_hit(origin, dirs, boxes)
        t = np.minimum(t_ground, t_box)
        ok = t <= scan.max_range
        is_box = t_box <= t_ground
        dirs, t, is_box = dirs[ok], t[ok], is_box[ok]
    else:
        ground = _dense_ground_lattice(scan, spec.ground_z)
        seg = ground - origin
        length = np.linalg.norm(seg, axis=1)
        dirs = seg / length[:, None]
        t_box = _first_box_hit(origin, dirs, boxes)
        is_box = t_box < length
        t = np.where(is_box, t_box, length)

    noise = rng.normal(0.0, scan.noise_sigma, len(t)) if scan.noise_sigma > 0 else np.zeros(len(t))
    xyz = origin + (t + noise)[:, None] * dirs
    intensity = np.where(is_box, OBJECT_INTENSITY, GROUND_INTENSITY)
    cloud = PointCloud.from_xyz(xyz, intensity)
    labels = [LabeledObject(i, o.class_name, o.box) for i, o in enumerate(spec.objects)]
    return Scene(cloud, labels, spec.scene_id, Calibration.standard())


def oracle_shadow_cells(spec: SceneSpec, roi: RoiConfig) -> set[tuple[int, int]]:
    """Cells whose centre ground point is hidden from the sensor by some box."""
    if not spec.objects:
        return set()
    ij = np.argwhere(np.ones((roi.nx, roi.ny), dtype=bool))
    centers = cell_centers(ij, roi)
    origin = np.array([0.0, 0.0, spec.sensor_z])
    seg = np.column_stack([centers, np.full(len(centers), spec.ground_z)]) - origin
    length = np.linalg.norm(seg, axis=1)
    t_box = _first_box_hit(origin, seg / length[:, None], [o.box for o in spec.objects])
    shadowed = t_box < length
    return {(int(a), int(b)) for a, b in ij[shadowed]}


# --- random scene generation -----------------------------------------------


def _azimuth_interval(box: OrientedBox3) -> tuple[float, float]:
    w = wedge_of_footprint(box.footprint(), range_min=0.0)
    return w.az_min, w.az_max


def _aabb2(box: OrientedBox3, pad: float) -> tuple[float, float, float, float]:
    fp = box.footprint()
    return (fp[:, 0].min() - pad, fp[:, 1].min() - pad, fp[:, 0].max() + pad, fp[:, 1].max() + pad)


def random_scene_spec(rng: np.random.Generator, *, n_objects: tuple[int, int] = (1, 5),
                      footprint: tuple[float, float] = (0.5, 5.0), ranges: tuple[float, float] = (5.0, 25.0),
                      heights: tuple[float, float] = (0.5, 2.0), yaw_max: float = math.radians(10),
                      roi: RoiConfig | None = None, scan: ScanPattern | None = None,
                      min_gap: float = 1.0, min_azimuth_gap: float = math.radians(1.0),
                      seed: int = 0, scene_id: str = "000000", ground_z: float = -1.73,
                      max_tries: int = 500) -> SceneSpec:
    """Sample box occluders inside the RoI that neither touch nor shadow each other.

    Boxes keep ``min_gap`` metres between footprints and ``min_azimuth_gap``
    between their azimuth spans as seen from the sensor, so every box is fully
    visible. When the requested count cannot be placed the draw is retried.
    """
    roi = roi or RoiConfig()
    scan = scan or ScanPattern()
    target = int(rng.integers(n_objects[0], n_objects[1] + 1))
    for _ in range(max_tries):
        placed: list[OrientedBox3] = []
        for _ in range(max_tries):
            if len(placed) == target:
                break
            length, width = rng.uniform(*footprint, size=2)
            height = rng.uniform(*heights)
            rng_c = rng.uniform(*ranges)
            bearing = rng.uniform(-math.pi / 2, math.pi / 2)
            cx, cy = rng_c * math.cos(bearing), rng_c * math.sin(bearing)
            box = OrientedBox3((cx, cy, ground_z + height / 2), (length, width, height),
                               rng.uniform(-yaw_max, yaw_max))
            x0, y0, x1, y1 = _aabb2(box, 0.0)
            if x0 < 3.0 or x1 > roi.x_max - 0.3 or y0 < -roi.y_half_width + 0.3 or y1 > roi.y_half_width - 0.3:
                continue
            lo, hi = _azimuth_interval(box)
            ok = True
            for other in placed:
                a0, b0, a1, b1 = _aabb2(other, min_gap / 2)
                c0, d0, c1, d1 = _aabb2(box, min_gap / 2)
                if not (c1 < a0 or a1 < c0 or d1 < b0 or b1 < d0):
                    ok = False
                    break
                olo, ohi = _azimuth_interval(other)
                if not (hi + min_azimuth_gap < olo or ohi + min_azimuth_gap < lo):
                    ok = False
                    break
            if ok:
                placed.append(box)
        if len(placed) == target:
            objs = tuple(SceneObject(b, "Car") for b in placed)
            return SceneSpec(objs, ground_z, -ground_z, scan, seed, scene_id)
    raise RuntimeError(f"could not place {target} non-occluding boxes")
