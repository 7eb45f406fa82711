"""JSON result files for a single detection run."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attribution import DetectionResult, Obstacle
from .config import flatten, unflatten
from .geometry import Aabb3, OrientedBox3
from .scene_io import LabeledObject
from .shadow_detect import ShadowCluster

FORMAT = "lidar-shadows-result/1"


def result_to_dict(result: DetectionResult, labels: list[LabeledObject] | None = None,
                   hidden_ids=()) -> dict:
    return {
        "format": FORMAT,
        "scene_id": result.scene_id,
        "config": flatten(result.config),
        "ground_level": result.ground_level,
        "slab_z": list(result.slab_z),
        "shadow_clusters": [{"id": c.id, "cells": c.cells.tolist()} for c in result.shadow_clusters],
        "attributed": {str(k): v for k, v in sorted(result.attributed.items())},
        "obstacles": [
            {"id": ob.id, "min": list(ob.box.min), "max": list(ob.box.max),
             "n_points": int(len(ob.indices)), "source_shadow_ids": sorted(ob.source_shadow_ids)}
            for ob in result.obstacles
        ],
        "labels": [{"id": o.id, "class_name": o.class_name, **o.box.to_dict()} for o in labels or ()],
        "hidden_ids": sorted(int(i) for i in hidden_ids),
        "counts": {"frustum": int(len(result.frustum_indices)), "residue": int(len(result.residue_indices))},
        "warnings": list(result.warnings),
        "timing": dict(result.timing),
    }


def result_from_dict(d: dict) -> tuple[DetectionResult, list[LabeledObject], list[int]]:
    """Inverse of :func:`result_to_dict`; point arrays are not stored and come back empty."""
    if d.get("format") != FORMAT:
        raise ValueError(f"not a result file (format {d.get('format')!r})")
    clusters = [ShadowCluster(c["id"], np.asarray(c["cells"], dtype=np.int64).reshape(-1, 2))
                for c in d["shadow_clusters"]]
    obstacles = [Obstacle(o["id"], np.empty(0, dtype=np.int64), np.empty((0, 3)),
                          Aabb3(tuple(o["min"]), tuple(o["max"])), frozenset(o["source_shadow_ids"]))
                 for o in d["obstacles"]]
    result = DetectionResult(
        shadow_clusters=clusters,
        attributed={int(k): int(v) for k, v in d["attributed"].items()},
        obstacles=obstacles,
        timing={k: float(v) for k, v in d.get("timing", {}).items()},
        config=unflatten(d["config"]),
        ground_level=float(d["ground_level"]),
        slab_z=tuple(d["slab_z"]),
        scene_id=d.get("scene_id", ""),
        warnings=list(d.get("warnings", [])),
    )
    labels = [LabeledObject(o["id"], o["class_name"], OrientedBox3.from_dict(o)) for o in d.get("labels", [])]
    return result, labels, list(d.get("hidden_ids", []))


def write_result(path, result: DetectionResult, labels=None, hidden_ids=()) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result_to_dict(result, labels, hidden_ids), indent=1) + "\n", encoding="utf-8")
    return path


def read_result(path):
    return result_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
