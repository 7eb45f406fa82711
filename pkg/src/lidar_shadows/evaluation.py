"""Shadow-to-object matching, localization error and runtime statistics over datasets."""
from __future__ import annotations

import csv
import datetime as _dt
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack_sim import SceneSpec, hide_objects, raycast_scene
from .attribution import DetectionResult, PipelineConfig, run_pipeline
from .geometry import bev_iou, nearest_edge_distance
from .scene_io import LabeledObject, Scene, kitti_paths, list_kitti_scenes, load_scene
from .shadow_detect import RoiConfig

log = logging.getLogger(__name__)

HIDDEN_POLICIES = ("none", "hide_all_in_roi", "explicit")
MATCH_PREDICATE = "attributed_points>=match_min_points OR obstacle_bev_iou>0"
FPR_DENOMINATOR = "all_detected_obstacles"
CSV_COLUMNS = ("scene_id", "object_id", "class", "matched", "best_iou", "edge_error", "runtime")


class ConfigMismatchError(ValueError):
    pass


@dataclass
class ObjectMatch:
    matched: bool
    best_iou: float | None = None
    edge_distance_error: float | None = None
    class_name: str = ""


@dataclass
class MatchReport:
    tp_ids: set[int] = field(default_factory=set)
    fn_ids: set[int] = field(default_factory=set)
    fp_obstacle_ids: set[int] = field(default_factory=set)
    per_object: dict[int, ObjectMatch] = field(default_factory=dict)
    n_obstacles: int = 0


@dataclass
class SceneReport:
    scene_id: str
    match: MatchReport
    timing: dict[str, float]
    hidden_ids: list[int] = field(default_factory=list)


@dataclass
class Metrics:
    scenes: int = 0
    skipped: int = 0
    objects_in_roi: int = 0
    tp: int = 0
    fn: int = 0
    fp: int = 0
    obstacles: int = 0
    tpr: float = 1.0
    fnr: float = 0.0
    fpr: float = 0.0
    mean_iou: float | None = None
    mean_edge_error: float | None = None
    std_edge_error: float | None = None
    mean_runtime: float | None = None
    std_runtime: float | None = None
    stage_runtime: dict[str, float] = field(default_factory=dict)
    skipped_scenes: list[tuple[str, str]] = field(default_factory=list)


def in_roi(obj: LabeledObject, roi: RoiConfig) -> bool:
    x, y = obj.box.center[0], obj.box.center[1]
    return roi.x_min <= x < roi.x_max and -roi.y_half_width <= y < roi.y_half_width


def match_scene(result: DetectionResult, gt_all: list[LabeledObject], cfg: PipelineConfig) -> MatchReport:
    if result.config != cfg:
        raise ConfigMismatchError("detection result was produced under a different configuration")
    roi_objects = [o for o in gt_all if in_roi(o, cfg.roi)]
    obstacles = result.obstacles
    iou = np.array([[bev_iou(o.box, ob.box) for ob in obstacles] for o in gt_all]).reshape(len(gt_all), len(obstacles))
    row = {o.id: k for k, o in enumerate(gt_all)}

    report = MatchReport(n_obstacles=len(obstacles))
    for obj in roi_objects:
        ious = iou[row[obj.id]]
        by_points = result.attributed.get(obj.id, 0) >= cfg.match_min_points
        by_box = bool(len(ious)) and float(ious.max()) > 0.0
        m = ObjectMatch(by_points or by_box, class_name=obj.class_name)
        if by_box:
            best = int(np.argmax(ious))
            m.best_iou = float(ious[best])
            m.edge_distance_error = abs(nearest_edge_distance(obstacles[best].box) - nearest_edge_distance(obj.box))
        (report.tp_ids if m.matched else report.fn_ids).add(obj.id)
        report.per_object[obj.id] = m

    roi_rows = [row[o.id] for o in roi_objects]
    for k, ob in enumerate(obstacles):
        overlaps = bool(roi_rows) and float(iou[roi_rows, k].max()) > 0.0
        c = np.array(ob.box.center)[None, :2]
        inside_any = any(bool(polygon_contains(o.box.footprint(), c)) for o in gt_all)
        if not overlaps and not inside_any:
            report.fp_obstacle_ids.add(ob.id)
    return report


def polygon_contains(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Closed containment of BEV points in a counter-clockwise convex polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    cross = ((b[:, 0] - a[:, 0])[None, :] * (pts[:, 1:2] - a[:, 1][None, :])
             - (b[:, 1] - a[:, 1])[None, :] * (pts[:, 0:1] - a[:, 0][None, :]))
    return np.all(cross >= 0.0, axis=1)


# --- scene sources ---------------------------------------------------------


@dataclass(frozen=True)
class KittiSceneRef:
    root: str
    scene_id: str
    allow_unlabeled: bool = False

    def load(self) -> Scene:
        cloud, label, calib = kitti_paths(self.root, self.scene_id)
        return load_scene(cloud, label, calib, allow_unlabeled=self.allow_unlabeled, scene_id=self.scene_id)


@dataclass(frozen=True)
class SyntheticSceneRef:
    spec: SceneSpec

    @property
    def scene_id(self) -> str:
        return self.spec.scene_id

    def load(self) -> Scene:
        return raycast_scene(self.spec)


def kitti_source(root, limit: int | None = None) -> list[KittiSceneRef]:
    ids = list_kitti_scenes(root)
    if limit is not None:
        ids = ids[:limit]
    return [KittiSceneRef(str(root), sid) for sid in ids]


def select_visible(scene: Scene, policy, cfg: PipelineConfig) -> tuple[list[LabeledObject], list[int]]:
    """Apply the hiding policy; returns (visible labels, hidden ids)."""
    if policy == "none" or policy is None:
        hidden: list[int] = []
    elif policy == "hide_all_in_roi":
        hidden = [o.id for o in scene.labels if in_roi(o, cfg.roi)]
    elif isinstance(policy, dict):
        hidden = sorted(policy.get(scene.scene_id, ()))
    else:
        raise ValueError(f"unknown hidden policy {policy!r}")
    return hide_objects(scene.labels, hidden), hidden


def _evaluate_one(args) -> SceneReport | tuple[str, str]:
    ref, policy, cfg = args
    try:
        scene = ref.load()
    except (OSError, ValueError) as exc:
        return (ref.scene_id, f"{type(exc).__name__}: {exc}")
    visible, hidden = select_visible(scene, policy, cfg)
    result = run_pipeline(scene, visible, cfg)
    return SceneReport(scene.scene_id, match_scene(result, scene.labels, cfg), result.timing, hidden)


def run_scenes(scenes, hidden_policy, cfg: PipelineConfig, parallel: int = 1) -> list:
    jobs = [(ref, hidden_policy, cfg) for ref in scenes]
    if parallel <= 1 or len(jobs) <= 1:
        return [_evaluate_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(_evaluate_one, jobs, chunksize=max(1, len(jobs) // (4 * parallel))))


def aggregate(outcomes: list) -> tuple[Metrics, list[SceneReport]]:
    m = Metrics()
    reports: list[SceneReport] = []
    ious, errors, runtimes = [], [], []
    stages: dict[str, list[float]] = {}
    for out in outcomes:
        if isinstance(out, tuple):
            m.skipped += 1
            m.skipped_scenes.append(out)
            continue
        reports.append(out)
        mr = out.match
        m.scenes += 1
        m.tp += len(mr.tp_ids)
        m.fn += len(mr.fn_ids)
        m.fp += len(mr.fp_obstacle_ids)
        m.obstacles += mr.n_obstacles
        for om in mr.per_object.values():
            if om.best_iou is not None:
                ious.append(om.best_iou)
            if om.edge_distance_error is not None:
                errors.append(om.edge_distance_error)
        runtimes.append(out.timing.get("total", 0.0))
        for k, v in out.timing.items():
            stages.setdefault(k, []).append(v)
    m.objects_in_roi = m.tp + m.fn
    # With no objects (or no obstacles) the rates are vacuous: nothing missed, nothing spurious.
    if m.objects_in_roi:
        m.tpr = m.tp / m.objects_in_roi
        m.fnr = m.fn / m.objects_in_roi
    if m.obstacles:
        m.fpr = m.fp / m.obstacles
    if ious:
        m.mean_iou = float(np.mean(ious))
    if errors:
        m.mean_edge_error = float(np.mean(errors))
        m.std_edge_error = float(np.std(errors))
    if runtimes:
        m.mean_runtime = float(np.mean(runtimes))
        m.std_runtime = float(np.std(runtimes))
    m.stage_runtime = {k: float(np.mean(v)) for k, v in sorted(stages.items())}
    return m, reports


def evaluate_dataset(scenes, hidden_policy="none", cfg: PipelineConfig | None = None,
                     parallel: int = 1) -> tuple[Metrics, list[SceneReport]]:
    cfg = cfg or PipelineConfig()
    scenes = list(scenes)
    if not scenes:
        raise ValueError("scene source is empty")
    return aggregate(run_scenes(scenes, hidden_policy, cfg, parallel))


# --- reporting -------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def summary_text(metrics: Metrics, extra: dict[str, str] | None = None,
                 timestamp: str | None = None) -> str:
    timestamp = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [
        f"timestamp: {timestamp}",
        f"match_predicate: {MATCH_PREDICATE}",
        f"fpr_denominator: {FPR_DENOMINATOR}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    for key in ("scenes", "skipped", "objects_in_roi", "tp", "fn", "fp", "obstacles",
                "tpr", "fnr", "fpr", "mean_iou", "mean_edge_error", "std_edge_error",
                "mean_runtime", "std_runtime"):
        lines.append(f"{key}: {_fmt(getattr(metrics, key))}")
    for stage, v in metrics.stage_runtime.items():
        lines.append(f"stage_runtime.{stage}: {_fmt(v)}")
    for sid, why in metrics.skipped_scenes:
        lines.append(f"skipped_scene.{sid}: {why}")
    return "\n".join(lines) + "\n"


def objects_csv(reports: list[SceneReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rep in reports:
        runtime = rep.timing.get("total", 0.0)
        for oid in sorted(rep.match.per_object):
            om = rep.match.per_object[oid]
            w.writerow([rep.scene_id, oid, om.class_name, _fmt(om.matched), _fmt(om.best_iou),
                        _fmt(om.edge_distance_error), _fmt(runtime)])
    return buf.getvalue()


def write_report(metrics: Metrics, reports: list[SceneReport], path, extra: dict[str, str] | None = None,
                 timestamp: str | None = None) -> tuple[Path, Path]:
    """Write ``summary.txt`` and ``objects.csv`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    summary, table = out / "summary.txt", out / "objects.csv"
    summary.write_text(summary_text(metrics, extra, timestamp), encoding="utf-8")
    table.write_text(objects_csv(reports), encoding="utf-8")
    return summary, table
