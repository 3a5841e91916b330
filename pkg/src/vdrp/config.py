"""Flat dotted-key run configuration with defaults, file loading, and
command-line overrides, plus the run manifest written next to every output.

Manifests echo the fully resolved configuration and the content digest of
each artifact; nothing time-dependent is recorded, so reruns with the same
seed produce byte-identical metadata.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .classifier import PipelineSettings
from .core import atomic_write_text
from .errors import ParameterError

__all__ = [
    "DEFAULTS",
    "default_config",
    "load_config",
    "apply_overrides",
    "build_settings",
    "file_sha256",
    "write_manifest",
]

DEFAULTS = {
    "dims.d": 32,
    "dims.d_t": 16,
    "dims.d_up": 48,
    "dims.d_down": 8,
    "dims.n_ctx": 24,
    "dims.mlp_hidden": 64,
    "dims.spatial_hidden": 32,
    "dims.adapter_blocks": 2,
    "dims.grid": 7,
    "dims.samples": 2,
    "vdp.alpha": 0.02,
    "vdp.beta": 0.1,
    "vdp.stat_mode": "variance",
    "vdp.group_size": 3,
    "vdp.init_std": 0.02,
    "vdp.resample_noise": False,
    "rap.gamma": 0.2,
    "rap.mode": "sparsemax",
    "rap.tau": 0.0,
    "rap.temperature": 1.0,
    "rap.top_k": 3,
    "fusion.branches": ["human", "object", "union"],
    "train.steps": 200,
    "train.lr": 0.01,
    "train.lr_final_scale": 0.1,
    "train.weight_decay": 0.01,
    "train.focal_gamma": 2.0,
    "train.focal_alpha": 0.75,
    "train.assign_iou": 0.5,
    "detect.score_threshold": 0.2,
    "eval.iou_threshold": 0.5,
    "eval.permutation_rounds": 5,
    "split.scenario": "nf_uc",
    "split.n_unseen": 120,
    "split.n_unseen_objects": 12,
    "split.n_unseen_verbs": 20,
    "synth.taxonomy": "compositional",
    "synth.verbs": 10,
    "synth.objects": 20,
    "synth.triplets_per_verb": 6,
    "synth.train_images": 80,
    "synth.pairs_per_image": 2,
    "synth.test_coverage": 2,
    "synth.size": 24,
    "synth.holdout": "nf_uc",
    "synth.holdout_count": 8,
    "synth.concepts_k": 10,
    "synth.background_noise": 0.05,
    "synth.diversity_min": 0.1,
    "synth.diversity_max": 0.6,
    "synth.concept_noise": 0.25,
    "synth.detection_jitter": 0.05,
    "synth.spurious_objects": 5,
    "synth.spurious_humans": 0,
    "synth.spurious_score_lo": 0.25,
    "synth.spurious_score_hi": 0.5,
    "data.dataset": "",
    "data.splits": "",
    "data.stats": "",
    "data.checkpoint": "",
    "data.predictions": "",
}


def default_config() -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS.items()}


def _coerce(key: str, value):
    ref = DEFAULTS[key]
    if isinstance(ref, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ParameterError(f"config {key}: expected a boolean, got {value!r}")
    if isinstance(ref, int) and not isinstance(ref, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParameterError(f"config {key}: expected an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ParameterError(f"config {key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(ref, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParameterError(f"config {key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(ref, str):
        if not isinstance(value, str):
            raise ParameterError(f"config {key}: expected a string, got {value!r}")
        return value
    if isinstance(ref, list):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
            raise ParameterError(f"config {key}: expected a list of strings, got {value!r}")
        return list(value)
    raise ParameterError(f"config {key}: unsupported value type")


def load_config(path: str | Path | None = None) -> dict:
    """Defaults overlaid with a JSON config file of dotted keys."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParameterError(f"config {path}: top level must be an object")
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ParameterError(f"config {path}: unknown key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``key=value`` strings; values parse as JSON, else raw strings."""
    for item in assignments or []:
        if "=" not in item:
            raise ParameterError(f"override {item!r} is not of the form key=value")
        key, _, text = item.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ParameterError(f"override references unknown key {key!r}")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        cfg[key] = _coerce(key, value)
    return cfg


def build_settings(cfg: dict) -> PipelineSettings:
    return PipelineSettings(
        d=cfg["dims.d"], d_t=cfg["dims.d_t"], d_up=cfg["dims.d_up"], d_down=cfg["dims.d_down"],
        n_ctx=cfg["dims.n_ctx"], mlp_hidden=cfg["dims.mlp_hidden"],
        spatial_hidden=cfg["dims.spatial_hidden"], adapter_blocks=cfg["dims.adapter_blocks"],
        grid=cfg["dims.grid"], samples=cfg["dims.samples"],
        alpha=cfg["vdp.alpha"], beta=cfg["vdp.beta"], stat_mode=cfg["vdp.stat_mode"],
        group_size=cfg["vdp.group_size"], init_std=cfg["vdp.init_std"],
        resample_noise=cfg["vdp.resample_noise"],
        gamma=cfg["rap.gamma"], retrieve_mode=cfg["rap.mode"], tau=cfg["rap.tau"],
        temperature=cfg["rap.temperature"], top_k=cfg["rap.top_k"],
        branches=tuple(cfg["fusion.branches"]),
        focal_gamma=cfg["train.focal_gamma"], focal_alpha=cfg["train.focal_alpha"],
        score_threshold=cfg["detect.score_threshold"], assign_iou=cfg["train.assign_iou"],
        steps=cfg["train.steps"], lr=cfg["train.lr"],
        lr_final_scale=cfg["train.lr_final_scale"], weight_decay=cfg["train.weight_decay"],
    )


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_tree(path: Path) -> dict:
    if path.is_dir():
        return {p.name: file_sha256(p) for p in sorted(path.iterdir()) if p.is_file()}
    return {path.name: file_sha256(path)}


def write_manifest(out_dir: str | Path, command: str, cfg: dict, seed: int, outputs: dict) -> Path:
    """Record command, resolved config, seed, and output digests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "seed": int(seed),
        "outputs": {
            name: {"path": str(Path(p).relative_to(out) if Path(p).is_relative_to(out) else p),
                   "sha256": _digest_tree(Path(p))}
            for name, p in sorted(outputs.items())
        },
    }
    path = out / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")
    return path
