"""Dataset directory layout and record files.

A dataset directory holds meta.json (taxonomy, image lists, seeds, dims),
per-image feature maps under features/, detections.jsonl, gts.jsonl,
concepts.json, and label embedding tensors.  Prediction and ground-truth
records share one jsonl schema apart from the score field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import atomic_write_text, read_vdt1
from .errors import DataError
from .regions import load_detections, validate_box

__all__ = [
    "Dataset",
    "load_dataset",
    "Split",
    "load_split",
    "save_split",
    "load_gt_records",
    "save_gt_records",
    "load_predictions",
    "save_predictions",
]


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# splits


@dataclass
class Split:
    name: str
    seen: list
    unseen: list

    def __post_init__(self):
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise DataError(f"split {self.name!r}: triplets in both halves: {sorted(overlap)[:5]}")


def save_split(path: str | Path, split: Split) -> None:
    atomic_write_text(path, _dump_json({
        "name": split.name,
        "seen": [int(t) for t in split.seen],
        "unseen": [int(t) for t in split.unseen],
    }))


def load_split(path: str | Path) -> Split:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot parse split file: {exc}") from exc
    for key in ("name", "seen", "unseen"):
        if key not in raw:
            raise DataError(f"{path}: missing key {key!r}")
    return Split(str(raw["name"]), [int(t) for t in raw["seen"]], [int(t) for t in raw["unseen"]])


# ---------------------------------------------------------------------------
# interaction records


def _read_jsonl(path: str | Path):
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad json: {exc}") from exc


def load_gt_records(path: str | Path) -> list:
    rows = []
    for lineno, row in _read_jsonl(path):
        try:
            rows.append({
                "image_id": int(row["image_id"]),
                "human_box": validate_box(row["human_box"], f"{path}:{lineno}: human_box"),
                "object_box": validate_box(row["object_box"], f"{path}:{lineno}: object_box"),
                "triplet_id": int(row["triplet_id"]),
            })
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
    return rows


def save_gt_records(path: str | Path, rows) -> None:
    lines = [
        _dump_json({
            "image_id": int(r["image_id"]),
            "human_box": [float(c) for c in r["human_box"]],
            "object_box": [float(c) for c in r["object_box"]],
            "triplet_id": int(r["triplet_id"]),
        }).rstrip("\n")
        for r in rows
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_predictions(path: str | Path) -> list:
    rows = []
    for lineno, row in _read_jsonl(path):
        try:
            score = float(row["score"])
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
        if not np.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score")
        rows.append({
            "image_id": int(row["image_id"]),
            "human_box": validate_box(row["human_box"], f"{path}:{lineno}: human_box"),
            "object_box": validate_box(row["object_box"], f"{path}:{lineno}: object_box"),
            "triplet_id": int(row["triplet_id"]),
            "score": score,
        })
    return rows


def save_predictions(path: str | Path, rows) -> None:
    lines = [
        _dump_json({
            "image_id": int(r["image_id"]),
            "human_box": [float(c) for c in r["human_box"]],
            "object_box": [float(c) for c in r["object_box"]],
            "triplet_id": int(r["triplet_id"]),
            "score": float(r["score"]),
        }).rstrip("\n")
        for r in rows
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# dataset directory


@dataclass
class Dataset:
    root: Path
    meta: dict
    triplets: np.ndarray
    frequencies: np.ndarray
    detections: dict
    gts: list
    _feature_cache: dict = field(default_factory=dict)

    @property
    def n_verbs(self) -> int:
        return int(self.meta["verbs"])

    @property
    def n_objects(self) -> int:
        return int(self.meta["objects"])

    @property
    def verb_names(self) -> list:
        return list(self.meta["verb_names"])

    @property
    def object_names(self) -> list:
        return list(self.meta["object_names"])

    @property
    def train_images(self) -> list:
        return [int(i) for i in self.meta["train_images"]]

    @property
    def test_images(self) -> list:
        return [int(i) for i in self.meta["test_images"]]

    @property
    def image_size(self):
        return tuple(self.meta["image_size"])

    @property
    def feature_stride(self) -> float:
        return float(self.meta.get("feature_stride", 1.0))

    @property
    def encoder_seed(self) -> int:
        return int(self.meta["encoder_seed"])

    @property
    def backbone_seed(self) -> int:
        return int(self.meta["backbone_seed"])

    def features(self, image_id: int) -> np.ndarray:
        image_id = int(image_id)
        if image_id not in self._feature_cache:
            path = self.root / "features" / f"img_{image_id:05d}.vdt1"
            if not path.exists():
                raise DataError(f"{self.root}: missing feature map for image {image_id}")
            self._feature_cache[image_id] = read_vdt1(path)
        return self._feature_cache[image_id]

    def gts_by_image(self, image_ids=None) -> dict:
        wanted = None if image_ids is None else {int(i) for i in image_ids}
        out: dict = {}
        for row in self.gts:
            if wanted is None or row["image_id"] in wanted:
                out.setdefault(row["image_id"], []).append(row)
        return out

    def verb_labels(self) -> np.ndarray:
        return read_vdt1(self.root / "labels_verbs.vdt1")

    def object_labels(self) -> np.ndarray:
        return read_vdt1(self.root / "labels_objects.vdt1")

    def concepts_path(self) -> Path:
        return self.root / "concepts.json"


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{root}: not a dataset directory (no meta.json)")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{meta_path}: bad json: {exc}") from exc
    for key in ("verbs", "objects", "verb_names", "object_names", "triplets",
                "triplet_frequencies", "train_images", "test_images",
                "image_size", "encoder_seed", "backbone_seed", "dims"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing key {key!r}")
    triplets = np.asarray(meta["triplets"], dtype=np.int64)
    if triplets.ndim != 2 or triplets.shape[1] != 2:
        raise DataError(f"{meta_path}: triplets must be (T, 2) verb/object pairs")
    n_verbs, n_objects = int(meta["verbs"]), int(meta["objects"])
    if triplets.size and (triplets[:, 0].max() >= n_verbs or triplets[:, 1].max() >= n_objects
                          or triplets.min() < 0):
        raise DataError(f"{meta_path}: triplet references primitive out of range")
    pairs = {(int(v), int(o)) for v, o in triplets}
    if len(pairs) != triplets.shape[0]:
        raise DataError(f"{meta_path}: duplicate triplets")
    frequencies = np.asarray(meta["triplet_frequencies"], dtype=np.int64)
    if frequencies.shape != (triplets.shape[0],):
        raise DataError(f"{meta_path}: triplet_frequencies must align with triplets")
    detections = load_detections(root / "detections.jsonl")
    gts = load_gt_records(root / "gts.jsonl")
    known = {int(i) for i in meta["train_images"]} | {int(i) for i in meta["test_images"]}
    for row in gts:
        if row["triplet_id"] < 0 or row["triplet_id"] >= triplets.shape[0]:
            raise DataError(f"{root}: gt references unknown triplet {row['triplet_id']}")
        if row["image_id"] not in known:
            raise DataError(f"{root}: gt references unknown image {row['image_id']}")
    for image_id in detections:
        if image_id not in known:
            raise DataError(f"{root}: detections reference unknown image {image_id}")
    return Dataset(root=root, meta=meta, triplets=triplets, frequencies=frequencies,
                   detections=detections, gts=gts)
