"""Flat dotted-key configuration files (``roi.cell = 0.3``) and run settings."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .attribution import PipelineConfig
from .clustering import DbscanParams
from .shadow_detect import RoiConfig

RUN_KEYS = ("dataset.root", "dataset.manifest", "hidden_policy", "hidden_file",
            "output.dir", "parallel", "seed")


class ConfigError(ValueError):
    pass


def flatten(cfg: PipelineConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for g in dataclasses.fields(value):
                out[f"{f.name}.{g.name}"] = getattr(value, g.name)
        else:
            out[f.name] = value
    return out


PIPELINE_KEYS = tuple(flatten(PipelineConfig()))


def _coerce(key: str, raw, like):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def unflatten(values: dict[str, object], base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    flat = flatten(base)
    unknown = sorted(set(values) - set(flat))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key, raw in values.items():
        flat[key] = _coerce(key, raw, flat[key])
    groups: dict[str, dict] = {}
    top: dict[str, object] = {}
    for key, value in flat.items():
        head, _, tail = key.partition(".")
        if tail:
            groups.setdefault(head, {})[tail] = value
        else:
            top[key] = value
    try:
        return PipelineConfig(
            roi=RoiConfig(**groups["roi"]),
            cell_dbscan=DbscanParams(**groups["cell_dbscan"]),
            point_dbscan=DbscanParams(**groups["point_dbscan"]),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {n}: expected key = value")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r}: expected key=value")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    dataset_root: str | None = None
    manifest: str | None = None
    hidden_policy: str = "none"
    hidden_file: str | None = None
    output_dir: str | None = None
    parallel: int = 1
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.hidden_policy not in ("none", "hide_all_in_roi", "explicit"):
            raise ConfigError(f"unknown hidden_policy {self.hidden_policy!r}")
        if self.hidden_policy == "explicit" and not self.hidden_file:
            raise ConfigError("hidden_policy explicit needs hidden_file")
        for name in ("dataset_root", "manifest", "hidden_file"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{name}: {p} does not exist")
        return self

    def pipeline_items(self) -> dict[str, object]:
        return flatten(self.pipeline)


def build_run_config(file_values: dict[str, str], overrides: dict[str, str]) -> RunConfig:
    """Defaults, then file values, then overrides (command-line flags)."""
    merged = {**file_values, **overrides}
    pipe = {k: v for k, v in merged.items() if k not in RUN_KEYS}
    run = {k: v for k, v in merged.items() if k in RUN_KEYS}
    rc = RunConfig(pipeline=unflatten(pipe))
    try:
        rc.parallel = int(run.get("parallel", rc.parallel))
        rc.seed = int(run.get("seed", rc.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rc.dataset_root = run.get("dataset.root") or None
    rc.manifest = run.get("dataset.manifest") or None
    rc.hidden_policy = run.get("hidden_policy", rc.hidden_policy)
    rc.hidden_file = run.get("hidden_file") or None
    rc.output_dir = run.get("output.dir") or None
    return rc


def load_run_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    file_values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    return build_run_config(file_values, overrides or {})


def format_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(cfg).items())
