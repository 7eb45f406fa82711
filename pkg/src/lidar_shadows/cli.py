"""Command-line entry point: detect, evaluate, synth, render."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attack_sim import ScanPattern, SceneSpec, hide_objects, oracle_shadow_cells, random_scene_spec, raycast_scene
from .attribution import run_pipeline
from .config import ConfigError, format_config, load_run_config, parse_overrides
from .evaluation import (
    SyntheticSceneRef,
    evaluate_dataset,
    kitti_source,
    summary_text,
    write_report,
)
from .render import render_bev
from .results import read_result, write_result
from .scene_io import MalformedInputError, kitti_paths, load_scene, parse_velodyne, write_kitti_scene
from .shadow_detect import extract_slab

log = logging.getLogger("lidar_shadows")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


def _ids(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad id list {text!r}") from None


def _run_config(args, extra: dict[str, str] | None = None):
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    return load_run_config(args.config, overrides).validate()


def load_manifest(path) -> list[SceneSpec]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    items = d["scenes"] if isinstance(d, dict) and "scenes" in d else d
    if isinstance(items, dict):
        items = [items]
    try:
        return [SceneSpec.from_dict(s) for s in items]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid scene spec: {exc}") from None


# --- subcommands -----------------------------------------------------------


def cmd_detect(args) -> int:
    rc = _run_config(args)
    cfg = rc.pipeline
    if args.kitti_root:
        cloud, label, calib = kitti_paths(args.kitti_root, args.scene_id)
    else:
        cloud, label, calib = args.velodyne, args.label, args.calib
        if not (cloud and calib):
            raise ConfigError("need --kitti-root/--scene-id or --velodyne and --calib")
    scene = load_scene(cloud, label, calib, allow_unlabeled=args.allow_unlabeled,
                       scene_id=args.scene_id or None)
    hidden = _ids(args.hide)
    try:
        visible = hide_objects(scene.labels, hidden)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    result = run_pipeline(scene, visible, cfg)
    write_result(args.out, result, scene.labels, hidden)
    if args.render:
        slab = extract_slab(scene.cloud.xyz, cfg.roi)
        render_bev(result, scene.labels, args.render, hidden, slab.points)
    print(f"scene {scene.scene_id}: {len(result.shadow_clusters)} shadow clusters, "
          f"{len(result.attributed)} attributed objects, {len(result.obstacles)} obstacles "
          f"({result.timing['total']:.3f} s)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rc = _run_config(args, {
        "dataset.root": args.kitti_root, "dataset.manifest": args.manifest,
        "hidden_policy": args.hidden_policy, "hidden_file": args.hidden_file,
        "parallel": None if args.parallel is None else str(args.parallel),
        "output.dir": args.out,
    })
    if rc.dataset_root:
        scenes = kitti_source(rc.dataset_root, args.limit)
        source = f"kitti:{rc.dataset_root}"
    elif rc.manifest:
        scenes = [SyntheticSceneRef(s) for s in load_manifest(rc.manifest)][: args.limit]
        source = f"manifest:{rc.manifest}"
    else:
        raise ConfigError("need --kitti-root or --manifest (or dataset.* in the config file)")
    if not scenes:
        raise ConfigError("dataset is empty")
    policy = rc.hidden_policy
    if policy == "explicit":
        raw = json.loads(Path(rc.hidden_file).read_text(encoding="utf-8"))
        policy = {str(k): [int(i) for i in v] for k, v in raw.items()}
    metrics, reports = evaluate_dataset(scenes, policy, rc.pipeline, rc.parallel)
    extra = {"source": source, "hidden_policy": rc.hidden_policy}
    extra.update({f"config.{k}": str(v) for k, v in rc.pipeline_items().items()})
    if rc.output_dir:
        write_report(metrics, reports, rc.output_dir, extra)
    sys.stdout.write(summary_text(metrics, extra))
    return EXIT_OK


def cmd_synth(args) -> int:
    rc = _run_config(args)
    roi = rc.pipeline.roi
    if args.spec:
        specs = load_manifest(args.spec)
    elif args.random:
        scan = ScanPattern(ground_grid_step=args.ground_step) if args.ground_step else ScanPattern()
        rng = np.random.default_rng(rc.seed)
        specs = [random_scene_spec(rng, roi=roi, scan=scan, seed=rc.seed + i, scene_id=f"{i:06d}")
                 for i in range(args.random)]
    else:
        raise ConfigError("need --spec or --random N")
    out = Path(args.out)
    (out / "oracle").mkdir(parents=True, exist_ok=True)
    for spec in specs:
        scene = raycast_scene(spec)
        write_kitti_scene(out, scene)
        cells = sorted(oracle_shadow_cells(spec, roi))
        (out / "oracle" / f"{spec.scene_id}.txt").write_text("".join(f"{a},{b}\n" for a, b in cells))
    manifest = {"scenes": [s.to_dict() for s in specs]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    (out / "config.txt").write_text(format_config(rc.pipeline), encoding="utf-8")
    print(f"wrote {len(specs)} scene(s) to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    result, labels, hidden = read_result(args.result)
    slab = None
    if args.velodyne:
        cloud = parse_velodyne(Path(args.velodyne).read_bytes())
        slab = extract_slab(cloud.xyz, result.config.roi).points
    render_bev(result, labels, args.out, hidden, slab)
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidar-shadows", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int, help="random seed")

    d = sub.add_parser("detect", help="run the pipeline on one scene")
    common(d)
    d.add_argument("--kitti-root")
    d.add_argument("--scene-id", default="")
    d.add_argument("--velodyne")
    d.add_argument("--label")
    d.add_argument("--calib")
    d.add_argument("--allow-unlabeled", action="store_true")
    d.add_argument("--hide", help="comma-separated object ids to drop from the detector output")
    d.add_argument("--out", required=True, help="result file (JSON)")
    d.add_argument("--render", help="also write a BEV figure (SVG)")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="evaluate over a dataset")
    common(e)
    e.add_argument("--kitti-root")
    e.add_argument("--manifest", help="synthetic scene manifest (JSON)")
    e.add_argument("--hidden-policy", choices=("none", "hide_all_in_roi", "explicit"))
    e.add_argument("--hidden-file", help="JSON map scene_id -> hidden ids (explicit policy)")
    e.add_argument("--parallel", type=int)
    e.add_argument("--limit", type=int)
    e.add_argument("--out", help="report directory")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="ray-cast synthetic scenes to KITTI layout")
    common(s)
    s.add_argument("--spec", help="scene spec or manifest (JSON)")
    s.add_argument("--random", type=int, help="number of random scenes")
    s.add_argument("--ground-step", type=float, help="dense ground lattice step for random scenes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("render", help="render a result file to SVG")
    r.add_argument("--result", required=True)
    r.add_argument("--velodyne", help="optional cloud for the slab point layer")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MalformedInputError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
