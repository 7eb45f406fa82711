"""KITTI velodyne / label / calibration parsing into the sensor frame."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import OrientedBox3, normalize_angle

log = logging.getLogger(__name__)

KITTI_CLASSES = ("Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc")

# Velodyne (x fwd, y left, z up) -> camera (x right, y down, z fwd).
AXIS_PERMUTATION = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


class MalformedInputError(ValueError):
    pass


@dataclass
class PointCloud:
    """(N, 4) float32 array of x, y, z, intensity in the sensor frame."""

    data: np.ndarray
    rejected: int = 0

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32).reshape(-1, 4))

    def __len__(self) -> int:
        return len(self.data)

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3].astype(np.float64)

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, 3]

    def to_bytes(self) -> bytes:
        return self.data.astype("<f4").tobytes()

    @classmethod
    def from_xyz(cls, xyz: np.ndarray, intensity: np.ndarray | None = None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        return cls(np.column_stack([xyz, intensity]))


@dataclass(frozen=True)
class Calibration:
    velo_to_cam: np.ndarray  # 3x4
    rect: np.ndarray  # 3x3

    def __post_init__(self) -> None:
        for name, rot in (("Tr_velo_to_cam", self.velo_to_cam[:, :3]), ("R0_rect", self.rect)):
            err = np.linalg.norm(rot @ rot.T - np.eye(3))
            if err > 1e-4:
                raise MalformedInputError(f"{name} rotation is not orthonormal (error {err:.2e})")

    @classmethod
    def standard(cls) -> "Calibration":
        """Pure axis permutation with identity rectification."""
        return cls(np.column_stack([AXIS_PERMUTATION, np.zeros(3)]), np.eye(3))

    def cam_to_velo(self, pts_cam: np.ndarray) -> np.ndarray:
        """Rectified camera coordinates -> sensor frame, shape (N, 3)."""
        p = np.asarray(pts_cam, dtype=np.float64).reshape(-1, 3)
        p_ref = np.linalg.solve(self.rect, p.T).T
        rot, t = self.velo_to_cam[:, :3], self.velo_to_cam[:, 3]
        return (p_ref - t) @ rot  # rot^T (p - t), row form

    def velo_to_cam_points(self, pts_velo: np.ndarray) -> np.ndarray:
        p = np.asarray(pts_velo, dtype=np.float64).reshape(-1, 3)
        ref = p @ self.velo_to_cam[:, :3].T + self.velo_to_cam[:, 3]
        return ref @ self.rect.T

    def to_text(self) -> str:
        def fmt(a):
            return " ".join(f"{v:.12e}" for v in np.asarray(a).ravel())

        return f"R0_rect: {fmt(self.rect)}\nTr_velo_to_cam: {fmt(self.velo_to_cam)}\n"


@dataclass(frozen=True)
class LabeledObject:
    id: int
    class_name: str
    box: OrientedBox3


@dataclass
class Scene:
    cloud: PointCloud
    labels: list[LabeledObject] = field(default_factory=list)
    scene_id: str = ""
    calib: Calibration | None = None

    def __post_init__(self) -> None:
        ids = [o.id for o in self.labels]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate label ids in scene {self.scene_id!r}")


def parse_velodyne(data: bytes) -> PointCloud:
    if len(data) % 16:
        raise MalformedInputError(f"velodyne payload of {len(data)} bytes is not a multiple of 16")
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    ok = np.isfinite(arr[:, :3]).all(axis=1)
    rejected = int((~ok).sum())
    if rejected:
        log.warning("rejected %d velodyne records with non-finite coordinates", rejected)
        arr = arr[ok]
    return PointCloud(arr.astype(np.float32), rejected=rejected)


def _floats(line_no: int, key: str, values: list[str], n: int) -> np.ndarray:
    if len(values) != n:
        raise MalformedInputError(f"calib key {key} expects {n} floats, got {len(values)} (line {line_no})")
    try:
        return np.array([float(v) for v in values])
    except ValueError as exc:
        raise MalformedInputError(f"calib key {key}: {exc} (line {line_no})") from None


def parse_calib(text: str) -> Calibration:
    found: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key == "Tr_velo_to_cam":
            found[key] = _floats(line_no, key, rest.split(), 12).reshape(3, 4)
        elif key == "R0_rect":
            found[key] = _floats(line_no, key, rest.split(), 9).reshape(3, 3)
    for key in ("Tr_velo_to_cam", "R0_rect"):
        if key not in found:
            raise MalformedInputError(f"calib is missing required key {key}")
    return Calibration(found["Tr_velo_to_cam"], found["R0_rect"])


def camera_yaw_to_sensor(rotation_y: float) -> float:
    return normalize_angle(-rotation_y - math.pi / 2)


def sensor_yaw_to_camera(yaw: float) -> float:
    return normalize_angle(-yaw - math.pi / 2)


def parse_labels(text: str, calib: Calibration, classes: set[str] | None = None) -> list[LabeledObject]:
    """Parse KITTI label lines; ids follow file order over the kept objects."""
    objects: list[LabeledObject] = []
    for line_no, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):  # 16th field is a detection score
            raise MalformedInputError(f"label line {line_no}: expected 15 fields, got {len(fields)}")
        cls = fields[0]
        if cls == "DontCare":
            continue
        try:
            h, w, l, x, y, z, ry = (float(v) for v in fields[8:15])
        except ValueError as exc:
            raise MalformedInputError(f"label line {line_no}: {exc}") from None
        if classes is not None and cls not in classes:
            continue
        bottom = calib.cam_to_velo(np.array([x, y, z]))[0]
        center = (bottom[0], bottom[1], bottom[2] + h / 2)
        try:
            box = OrientedBox3(center, (l, w, h), camera_yaw_to_sensor(ry))
        except ValueError as exc:
            raise MalformedInputError(f"label line {line_no}: {exc}") from None
        objects.append(LabeledObject(len(objects), cls, box))
    return objects


def format_labels(objects: list[LabeledObject], calib: Calibration) -> str:
    """Inverse of parse_labels; image-plane fields are written as zeros."""
    lines = []
    for obj in objects:
        b = obj.box
        bottom = np.array([b.center[0], b.center[1], b.z_min])
        x, y, z = calib.velo_to_cam_points(bottom)[0]
        l, w, h = b.dims
        ry = sensor_yaw_to_camera(b.yaw)
        lines.append(
            f"{obj.class_name} 0.00 0 0.00 0.00 0.00 0.00 0.00 "
            f"{h:.6f} {w:.6f} {l:.6f} {x:.6f} {y:.6f} {z:.6f} {ry:.6f}"
        )
    return "".join(line + "\n" for line in lines)


def load_scene(cloud_path, label_path, calib_path, *, allow_unlabeled: bool = False,
               classes: set[str] | None = None, scene_id: str | None = None) -> Scene:
    cloud_path = Path(cloud_path)
    cloud = parse_velodyne(cloud_path.read_bytes())
    calib = parse_calib(Path(calib_path).read_text())
    label_path = Path(label_path) if label_path is not None else None
    if label_path is None or not label_path.exists():
        if not allow_unlabeled:
            raise FileNotFoundError(f"label file not found: {label_path}")
        labels = []
    else:
        labels = parse_labels(label_path.read_text(), calib, classes)
    return Scene(cloud, labels, scene_id or cloud_path.stem, calib)


def kitti_paths(root, scene_id: str) -> tuple[Path, Path, Path]:
    root = Path(root)
    return (root / "velodyne" / f"{scene_id}.bin",
            root / "label_2" / f"{scene_id}.txt",
            root / "calib" / f"{scene_id}.txt")


def list_kitti_scenes(root) -> list[str]:
    return sorted(p.stem for p in (Path(root) / "velodyne").glob("*.bin"))


def write_kitti_scene(root, scene: Scene) -> tuple[Path, Path, Path]:
    calib = scene.calib or Calibration.standard()
    paths = kitti_paths(root, scene.scene_id)
    for p in paths:
        p.parent.mkdir(parents=True, exist_ok=True)
    paths[0].write_bytes(scene.cloud.to_bytes())
    paths[1].write_text(format_labels(scene.labels, calib))
    paths[2].write_text(calib.to_text())
    return paths
