import json

import numpy as np
import pytest

from lidar_shadows.attack_sim import ScanPattern, SceneObject, SceneSpec, raycast_scene
from lidar_shadows.attribution import DetectionResult, PipelineConfig, run_pipeline
from lidar_shadows.cli import main
from lidar_shadows.config import (
    ConfigError,
    RunConfig,
    build_run_config,
    flatten,
    format_config,
    load_run_config,
    parse_config_text,
    unflatten,
)
from lidar_shadows.geometry import OrientedBox3
from lidar_shadows.render import render_svg
from lidar_shadows.results import read_result, result_from_dict, result_to_dict, write_result
from lidar_shadows.scene_io import parse_labels, parse_calib

GROUND_Z = -1.73


def one_box_spec(scene_id="000000", seed=0, objects=True):
    box = OrientedBox3((12.0, 0.0, GROUND_Z + 0.75), (4.0, 2.0, 1.5))
    objs = (SceneObject(box, "Car"),) if objects else ()
    return SceneSpec(objs, GROUND_Z, 1.73, ScanPattern(ground_grid_step=0.3), seed, scene_id)


@pytest.fixture
def synth_dir(tmp_path):
    spec_path = tmp_path / "spec.json"
    specs = [one_box_spec("000000"), one_box_spec("000001", seed=1, objects=False)]
    spec_path.write_text(json.dumps({"scenes": [s.to_dict() for s in specs]}))
    out = tmp_path / "syn"
    assert main(["synth", "--spec", str(spec_path), "--out", str(out)]) == 0
    return out


# --- config ---------------------------------------------------------------


def test_empty_config_reproduces_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("# nothing here\n\n")
    rc = load_run_config(p)
    assert rc.pipeline == PipelineConfig()
    assert rc.parallel == 1 and rc.hidden_policy == "none"


def test_defaults_match_documented_values():
    flat = flatten(PipelineConfig())
    assert flat == {
        "roi.x_min": 0.0, "roi.x_max": 30.0, "roi.y_half_width": 5.0, "roi.cell": 0.3,
        "roi.slab_z_min": -2.0, "roi.slab_z_max": -1.4, "roi.ground_mode": "fixed",
        "cell_dbscan.eps": 1.0, "cell_dbscan.min_pts": 3, "cell_dbscan.metric": "chebyshev_grid",
        "point_dbscan.eps": 0.6, "point_dbscan.min_pts": 8, "point_dbscan.metric": "euclidean_3d",
        "min_cells": 6, "range_min": 2.5, "ground_clearance": 0.2, "min_obstacle_height": 0.3,
        "match_min_points": 1, "cell_stride": 1,
    }


def test_flags_override_file():
    rc = build_run_config({"roi.cell": "0.5", "parallel": "2"}, {"roi.cell": "0.25"})
    assert rc.pipeline.roi.cell == 0.25 and rc.parallel == 2


def test_config_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("roi.cell = 0.3\nnonsense\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match="unknown"):
        unflatten({"roi.cel": "0.3"})
    with pytest.raises(ConfigError):
        unflatten({"roi.x_max": "-1"})
    with pytest.raises(ConfigError):
        RunConfig(parallel=0).validate()
    with pytest.raises(FileNotFoundError):
        RunConfig(dataset_root="/definitely/not/here").validate()


def test_format_config_round_trip():
    cfg = unflatten({"roi.cell": "0.25", "point_dbscan.metric": "euclidean_2d", "min_cells": "4"})
    assert unflatten(parse_config_text(format_config(cfg))) == cfg


# --- result files and rendering --------------------------------------------


def test_result_round_trip_and_render(tmp_path):
    scene = raycast_scene(one_box_spec())
    res = run_pipeline(scene, [])
    path = write_result(tmp_path / "r.json", res, scene.labels, [0])
    back, labels, hidden = read_result(path)
    assert back.config == res.config and back.attributed == res.attributed
    assert [o.box for o in back.obstacles] == [o.box for o in res.obstacles]
    assert [c.cells.tolist() for c in back.shadow_clusters] == [c.cells.tolist() for c in res.shadow_clusters]
    assert hidden == [0] and labels[0].box == scene.labels[0].box
    assert render_svg(back, labels, hidden) == render_svg(res, scene.labels, [0])
    with pytest.raises(ValueError):
        result_from_dict({"format": "other"})
    assert result_to_dict(back, labels, hidden)["obstacles"][0]["min"] == list(res.obstacles[0].box.min)


def test_render_empty_and_deterministic():
    empty = DetectionResult([], {}, [], {}, PipelineConfig())
    svg = render_svg(empty)
    assert '<g id="grid"' in svg and '<g id="origin">' in svg
    assert '<g id="shadow_cells" fill="#3b6fb6" fill-opacity="0.45">\n</g>' in svg
    assert svg == render_svg(empty)
    scene = raycast_scene(one_box_spec())
    res = run_pipeline(scene, [])
    a = render_svg(res, scene.labels, [0], scene.cloud.xyz[:100])
    assert a == render_svg(res, scene.labels, [0], scene.cloud.xyz[:100])
    for layer in ("slab_points", "shadow_cells", "wedges", "gt_boxes", "obstacle_boxes"):
        assert f'<g id="{layer}"' in a


# --- subcommands ----------------------------------------------------------


def test_synth_outputs(synth_dir):
    for sub, ext in (("velodyne", "bin"), ("label_2", "txt"), ("calib", "txt"), ("oracle", "txt")):
        assert (synth_dir / sub / f"000000.{ext}").exists()
    calib = parse_calib((synth_dir / "calib" / "000000.txt").read_text())
    labels = parse_labels((synth_dir / "label_2" / "000000.txt").read_text(), calib)
    assert len(labels) == 1 and labels[0].box.center[0] == pytest.approx(12.0, abs=1e-5)
    lines = (synth_dir / "oracle" / "000000.txt").read_text().splitlines()
    assert lines and all(len(l.split(",")) == 2 for l in lines)
    assert (synth_dir / "label_2" / "000001.txt").read_text() == ""
    assert (synth_dir / "oracle" / "000001.txt").read_text() == ""


def test_synth_byte_reproducible(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["synth", "--random", "2", "--seed", "5", "--ground-step", "0.3", "--out", str(out)]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_synth_invalid_spec(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"objects": [{"center": [10, 0, -5.0], "dims": [1, 1, 1]}]}))
    assert main(["synth", "--spec", str(bad), "--out", str(tmp_path / "o")]) == 1
    bad.write_text(json.dumps({"objects": [{"dims": [1, 1, 1]}]}))
    assert main(["synth", "--spec", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_detect_outputs(synth_dir, tmp_path, capsys):
    out, svg = tmp_path / "r.json", tmp_path / "f.svg"
    rc = main(["detect", "--kitti-root", str(synth_dir), "--scene-id", "000000",
               "--out", str(out), "--render", str(svg)])
    assert rc == 0 and svg.read_text().startswith("<svg")
    d = json.loads(out.read_text())
    assert d["attributed"] and "obstacles" in d and "timing" in d
    assert main(["detect", "--kitti-root", str(synth_dir), "--scene-id", "000000",
                 "--hide", "0", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["hidden_ids"] == [0] and d["obstacles"]
    assert main(["render", "--result", str(out), "--out", str(tmp_path / "g.svg"),
                 "--velodyne", str(synth_dir / "velodyne" / "000000.bin")]) == 0


def test_detect_errors(synth_dir, tmp_path, capsys):
    out = tmp_path / "x.json"
    base = ["detect", "--kitti-root", str(synth_dir), "--scene-id", "000000", "--out", str(out)]
    assert main(base + ["--hide", "7"]) == 1 and not out.exists()
    assert "unknown object" in capsys.readouterr().err
    assert main(base + ["--set", "roi.cell=abc"]) == 1
    assert main(base + ["--set", "no.such=1"]) == 1
    assert main(["detect", "--kitti-root", str(tmp_path / "none"), "--scene-id", "0", "--out", str(out)]) == 2
    assert main(base + ["--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["detect"]) == 1


def test_evaluate_writes_reports(synth_dir, tmp_path, capsys):
    rep = tmp_path / "rep"
    rc = main(["evaluate", "--kitti-root", str(synth_dir), "--hidden-policy", "hide_all_in_roi",
               "--out", str(rep)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "tpr: 1.000000" in printed and "mean_edge_error:" in printed
    rows = (rep / "objects.csv").read_text().splitlines()
    assert rows[0] == "scene_id,object_id,class,matched,best_iou,edge_error,runtime" and len(rows) == 2
    assert "stage_runtime.point_dbscan" in (rep / "summary.txt").read_text()


def test_evaluate_manifest_and_explicit(synth_dir, tmp_path):
    hidden = tmp_path / "hidden.json"
    hidden.write_text(json.dumps({"000000": [0]}))
    rc = main(["evaluate", "--manifest", str(synth_dir / "manifest.json"), "--hidden-policy", "explicit",
               "--hidden-file", str(hidden), "--out", str(tmp_path / "rep")])
    assert rc == 0


def test_evaluate_empty_dataset(tmp_path):
    (tmp_path / "velodyne").mkdir()
    assert main(["evaluate", "--kitti-root", str(tmp_path)]) == 1
    assert main(["evaluate"]) == 1
    assert main(["evaluate", "--kitti-root", str(tmp_path), "--parallel", "0"]) == 1
