"""Command-line entry point.

Every subcommand takes ``--config`` (JSON of dotted keys), repeatable
``--set key=value`` overrides, ``--seed``, and ``--out``; data locations come
from ``data.*`` config keys.  Validation problems exit 2, numeric failures 3.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .classifier import (build_model, estimate_statistics, image_logits,
                         load_checkpoint, predict_dataset, save_checkpoint,
                         train_model, candidate_pairs)
from .concepts import load_concepts
from .config import apply_overrides, build_settings, load_config, write_manifest
from .core import atomic_write_text, read_vdt1, write_vdt1
from .data import (load_dataset, load_predictions, load_split, save_predictions,
                   save_split)
from .errors import DataError, NumericError, ParameterError, ValidationError
from .evaluate import build_split, evaluate_predictions, permutation_baseline
from .prompts import build_prompts
from .stats import diversity_score, interclass_divergence, medoid_index
from .synthetic import generate_world

__all__ = ["main"]


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _require(cfg: dict, key: str) -> str:
    value = cfg[key]
    if not value:
        raise ParameterError(f"this command needs the {key} config key")
    return value


def _check_dims(settings, dataset) -> None:
    dims = dataset.meta["dims"]
    for name, have in (("d", settings.d), ("d_t", settings.d_t),
                       ("d_up", settings.d_up), ("n_ctx", settings.n_ctx)):
        if int(dims[name]) != int(have):
            raise DataError(
                f"dims.{name}={have} does not match the dataset's {name}={dims[name]}"
            )


def _load_stats(path: str | Path) -> dict:
    root = Path(path)
    stacked = read_vdt1(root / "stats.vdt1")
    if stacked.ndim != 3 or stacked.shape[1] != 4:
        raise DataError(f"{root}/stats.vdt1: expected shape (V, 4, d)")
    try:
        meta = json.loads((root / "stats.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{root}/stats.json: {exc}") from exc
    return {
        "mean": stacked[:, 0], "var": stacked[:, 1],
        "group_mean": stacked[:, 2], "group_var": stacked[:, 3],
        "counts": np.asarray(meta["counts"], dtype=np.int64),
        "groups": np.asarray(meta["groups"], dtype=np.int64),
    }


def _save_stats(out: Path, stats: dict) -> None:
    stacked = np.stack([stats["mean"], stats["var"],
                        stats["group_mean"], stats["group_var"]], axis=1)
    write_vdt1(out / "stats.vdt1", stacked)
    atomic_write_text(out / "stats.json", _dump_json({
        "counts": [int(c) for c in stats["counts"]],
        "groups": [[int(g) for g in row] for row in stats["groups"]],
    }))


def _stats_for(cfg: dict, dataset, settings, unseen) -> dict:
    if cfg["data.stats"]:
        return _load_stats(cfg["data.stats"])
    return estimate_statistics(dataset, settings, unseen)


def _split_for(cfg: dict):
    return load_split(cfg["data.splits"]) if cfg["data.splits"] else None


def _test_gts(dataset) -> list:
    wanted = set(dataset.test_images)
    return [g for g in dataset.gts if g["image_id"] in wanted]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(cfg, seed, out) -> int:
    generate_world(out, cfg, seed)
    outputs = {name: out / name for name in
               ("meta.json", "gts.jsonl", "detections.jsonl", "concepts.json",
                "labels_verbs.vdt1", "labels_objects.vdt1", "features")}
    write_manifest(out, "gen-synth", cfg, seed, outputs)
    print(f"dataset written to {out}")
    return 0


def cmd_build_splits(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    split = build_split(cfg["split.scenario"], dataset.triplets, dataset.frequencies,
                        dataset.n_verbs, dataset.n_objects,
                        n_unseen=cfg["split.n_unseen"],
                        n_unseen_objects=cfg["split.n_unseen_objects"],
                        n_unseen_verbs=cfg["split.n_unseen_verbs"])
    out.mkdir(parents=True, exist_ok=True)
    save_split(out / "splits.json", split)
    write_manifest(out, "build-splits", cfg, seed, {"splits.json": out / "splits.json"})
    print(f"split {split.name}: {len(split.seen)} seen / {len(split.unseen)} unseen")
    return 0


def cmd_estimate_variance(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    settings = build_settings(cfg)
    _check_dims(settings, dataset)
    split = _split_for(cfg)
    stats = estimate_statistics(dataset, settings, split.unseen if split else ())
    out.mkdir(parents=True, exist_ok=True)
    _save_stats(out, stats)
    write_manifest(out, "estimate-variance", cfg, seed,
                   {"stats.vdt1": out / "stats.vdt1", "stats.json": out / "stats.json"})
    populated = int(np.count_nonzero(stats["counts"]))
    print(f"statistics for {populated}/{dataset.n_verbs} verbs")
    return 0


def cmd_build_prompts(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    settings = build_settings(cfg)
    _check_dims(settings, dataset)
    split = _split_for(cfg)
    unseen = split.unseen if split else ()
    bank = load_concepts(dataset.concepts_path(), dataset.n_verbs, settings.d)
    model = build_model(dataset, bank, settings, seed,
                        stats=_stats_for(cfg, dataset, settings, unseen))
    prompts, _ = build_prompts(model.params, model.prompt_buffers(), model.encoder)
    out.mkdir(parents=True, exist_ok=True)
    write_vdt1(out / "prompts.vdt1", prompts)
    write_vdt1(out / "noise.vdt1", model.noise)
    atomic_write_text(out / "prompt_meta.json", _dump_json({
        "alpha": settings.alpha, "beta": settings.beta,
        "stat_mode": settings.stat_mode, "verbs": dataset.n_verbs,
    }))
    write_manifest(out, "build-prompts", cfg, seed,
                   {"prompts.vdt1": out / "prompts.vdt1", "noise.vdt1": out / "noise.vdt1",
                    "prompt_meta.json": out / "prompt_meta.json"})
    print(f"prompts for {dataset.n_verbs} verbs")
    return 0


def cmd_train(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    settings = build_settings(cfg)
    _check_dims(settings, dataset)
    split = _split_for(cfg)
    unseen = split.unseen if split else ()
    bank = load_concepts(dataset.concepts_path(), dataset.n_verbs, settings.d)
    model = build_model(dataset, bank, settings, seed,
                        stats=_stats_for(cfg, dataset, settings, unseen))
    history = train_model(model, dataset, split, seed)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["step,loss,lr"] + [f"{s},{float(loss)!r},{float(lr)!r}" for s, loss, lr in history]
    atomic_write_text(out / "loss.csv", "\n".join(lines) + "\n")
    save_checkpoint(out / "checkpoint", model)
    write_manifest(out, "train", cfg, seed,
                   {"loss.csv": out / "loss.csv", "checkpoint": out / "checkpoint"})
    final = history[-1][1] if history else float("nan")
    print(f"trained {len(history)} steps, final loss {final:.6f}")
    return 0


def cmd_predict(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    ckpt_dir = _require(cfg, "data.checkpoint")
    manifest = json.loads((Path(ckpt_dir) / "manifest.json").read_text())
    d = int(manifest["settings"]["d"])
    bank = load_concepts(dataset.concepts_path(), dataset.n_verbs, d)
    model = load_checkpoint(ckpt_dir, bank)
    _check_dims(model.settings, dataset)
    rows = predict_dataset(model, dataset)
    out.mkdir(parents=True, exist_ok=True)
    save_predictions(out / "predictions.jsonl", rows)
    write_manifest(out, "predict", cfg, seed,
                   {"predictions.jsonl": out / "predictions.jsonl"})
    print(f"{len(rows)} predictions over {len(dataset.test_images)} images")
    return 0


def cmd_evaluate(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    preds = load_predictions(_require(cfg, "data.predictions"))
    split = _split_for(cfg)
    gts = _test_gts(dataset)
    report = evaluate_predictions(preds, gts, split, cfg["eval.iou_threshold"])
    rounds = cfg["eval.permutation_rounds"]
    if split is not None and rounds > 0:
        report["chance_unseen"] = permutation_baseline(
            preds, gts, split, rounds, seed, cfg["eval.iou_threshold"])
    report["per_triplet"] = {str(k): v for k, v in report["per_triplet"].items()}
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.json", _dump_json(report))
    write_manifest(out, "evaluate", cfg, seed, {"report.json": out / "report.json"})
    if split is not None:
        print(f"full {report['full']:.4f} seen {report['seen']:.4f} "
              f"unseen {report['unseen']:.4f} hm {report['harmonic_mean']:.4f}")
    else:
        print(f"full {report['full']:.4f}")
    return 0


def cmd_analyze(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    settings = build_settings(cfg)
    _check_dims(settings, dataset)
    split = _split_for(cfg)
    stats = estimate_statistics(dataset, settings, split.unseen if split else ())
    emb, ids = stats["embeddings"], stats["verb_ids"]
    per_verb = {}
    prototypes = []
    for v in range(dataset.n_verbs):
        rows = emb[ids == v]
        if rows.shape[0] == 0:
            continue
        per_verb[str(v)] = diversity_score(rows) if rows.shape[0] > 1 else 0.0
        prototypes.append(rows[medoid_index(rows)] if rows.shape[0] > 1 else rows[0])
    divergence = interclass_divergence(np.stack(prototypes)) if len(prototypes) > 1 else 0.0
    analysis = {
        "per_verb_diversity": per_verb,
        "interclass_divergence": divergence,
        "instance_counts": [int(c) for c in stats["counts"]],
        "groups": [[int(g) for g in row] for row in stats["groups"]],
    }
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "analysis.json", _dump_json(analysis))
    write_manifest(out, "analyze", cfg, seed, {"analysis.json": out / "analysis.json"})
    print(f"diversity for {len(per_verb)} verbs, divergence {divergence:.4f}")
    return 0


def _variant(model, **changes):
    clone = dataclasses.replace(model)
    clone.settings = dataclasses.replace(model.settings, **changes)
    return clone


def _max_logit_gap(model_a, model_b, dataset, n_images: int = 3) -> float:
    gap = 0.0
    for image_id in dataset.test_images[:n_images]:
        instances = dataset.detections.get(image_id, [])
        pairs = candidate_pairs(instances, model_a.settings.score_threshold)
        if not pairs:
            continue
        feats = dataset.features(image_id)
        la, _ = image_logits(model_a, feats, instances, pairs)
        lb, _ = image_logits(model_b, feats, instances, pairs)
        gap = max(gap, float(np.max(np.abs(la - lb))))
    return gap


def cmd_ablate(cfg, seed, out) -> int:
    dataset = load_dataset(_require(cfg, "data.dataset"))
    ckpt_dir = _require(cfg, "data.checkpoint")
    manifest = json.loads((Path(ckpt_dir) / "manifest.json").read_text())
    d = int(manifest["settings"]["d"])
    bank = load_concepts(dataset.concepts_path(), dataset.n_verbs, d)
    model = load_checkpoint(ckpt_dir, bank)
    _check_dims(model.settings, dataset)
    split = _split_for(cfg)
    gts = _test_gts(dataset)

    identities = {
        "tau_zero_matches_plain": _max_logit_gap(
            _variant(model, retrieve_mode="sparsemax"),
            _variant(model, retrieve_mode="tau_sparsemax", tau=0.0), dataset),
        "gamma_zero_ignores_retrieval_mode": _max_logit_gap(
            _variant(model, gamma=0.0, retrieve_mode="sparsemax"),
            _variant(model, gamma=0.0, retrieve_mode="softmax"), dataset),
    }
    image_id = next((i for i in dataset.test_images
                     if candidate_pairs(dataset.detections.get(i, []),
                                        model.settings.score_threshold)), None)
    if image_id is not None:
        instances = dataset.detections[image_id]
        pairs = candidate_pairs(instances, model.settings.score_threshold)
        hoi, cache = image_logits(model, dataset.features(image_id), instances, pairs)
        stacked = sum(cache["branch_logits"][r] for r in model.settings.branches)
        identities["fusion_is_branch_mean"] = float(
            np.max(np.abs(hoi - stacked / len(model.settings.branches))))

    metrics = {}
    variants = {
        "full": model,
        "no_retrieval": _variant(model, gamma=0.0),
        "static_prompts": _variant(model, alpha=0.0, beta=0.0),
        "static_no_retrieval": _variant(model, alpha=0.0, beta=0.0, gamma=0.0),
    }
    for name, variant in variants.items():
        rows = predict_dataset(variant, dataset)
        rep = evaluate_predictions(rows, gts, split, cfg["eval.iou_threshold"])
        entry = {"full": rep["full"]}
        if split is not None:
            entry.update({"seen": rep["seen"], "unseen": rep["unseen"],
                          "harmonic_mean": rep["harmonic_mean"]})
        metrics[name] = entry
    ablation = {"identities": identities, "metrics": metrics}
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "ablation.json", _dump_json(ablation))
    write_manifest(out, "ablate", cfg, seed, {"ablation.json": out / "ablation.json"})
    print("ablation identities: " + ", ".join(f"{k}={v:.2e}" for k, v in identities.items()))
    return 0


# ---------------------------------------------------------------------------
# parser


_COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "build-splits": cmd_build_splits,
    "estimate-variance": cmd_estimate_variance,
    "build-prompts": cmd_build_prompts,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vdrp",
        description="zero-shot human-object interaction pipeline on embedding-space data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON config of dotted keys")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.set)
        return _COMMANDS[args.command](cfg, args.seed, Path(args.out))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
