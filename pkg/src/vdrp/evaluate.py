"""Zero-shot split construction and detection-style mAP scoring.

Splits hold out triplets by frequency rank (head or tail), by object, or by
verb.  Scoring matches predictions to ground truth greedily per triplet at a
strict pairwise IoU threshold and integrates the all-points precision
envelope; the summary reports Full, Seen, and Unseen means plus their
harmonic mean.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import Rng
from .data import Split
from .errors import DataError, DegenerateInputWarning, ParameterError
from .regions import box_iou

__all__ = [
    "SPLIT_SCENARIOS",
    "build_split",
    "average_precision",
    "triplet_average_precision",
    "evaluate_predictions",
    "permutation_baseline",
]

SPLIT_SCENARIOS = ("nf_uc", "rf_uc", "uo", "uv")


def _orphan_check(name: str, triplets: np.ndarray, seen_ids, n_verbs: int, n_objects: int,
                  held_verbs=(), held_objects=()) -> None:
    # primitives that were held out on purpose are allowed to vanish
    seen = triplets[np.asarray(sorted(seen_ids), dtype=np.int64)]
    verbs = set(seen[:, 0].tolist())
    objects = set(seen[:, 1].tolist())
    lost_v = sorted(set(range(n_verbs)) - verbs - set(held_verbs))
    lost_o = sorted(set(range(n_objects)) - objects - set(held_objects))
    if lost_v or lost_o:
        warnings.warn(
            f"split {name!r} leaves primitives with no seen triplet "
            f"(verbs {lost_v[:5]}, objects {lost_o[:5]})",
            DegenerateInputWarning,
        )


def build_split(scenario: str, triplets, frequencies, n_verbs: int, n_objects: int,
                n_unseen: int = 120, n_unseen_objects: int = 12,
                n_unseen_verbs: int = 20) -> Split:
    """Select unseen triplet ids for a scenario; ties always break to lower id.

    nf_uc holds out the most frequent triplets, rf_uc the least frequent.
    uo and uv hold out every triplet of the lowest-total-frequency objects or
    verbs respectively.
    """
    trip = np.asarray(triplets, dtype=np.int64)
    freq = np.asarray(frequencies, dtype=np.int64)
    t = trip.shape[0]
    if freq.shape != (t,):
        raise DataError("build_split: frequencies must align with triplets")
    ids = np.arange(t)
    held_verbs: set = set()
    held_objects: set = set()
    if scenario == "nf_uc":
        if not 0 < n_unseen < t:
            raise ParameterError(f"build_split: n_unseen must be in (0, {t}), got {n_unseen}")
        order = np.lexsort((ids, -freq))
        unseen = sorted(order[:n_unseen].tolist())
    elif scenario == "rf_uc":
        if not 0 < n_unseen < t:
            raise ParameterError(f"build_split: n_unseen must be in (0, {t}), got {n_unseen}")
        order = np.lexsort((ids, freq))
        unseen = sorted(order[:n_unseen].tolist())
    elif scenario == "uo":
        totals = np.bincount(trip[:, 1], weights=freq, minlength=n_objects)
        if not 0 < n_unseen_objects < n_objects:
            raise ParameterError(f"build_split: n_unseen_objects out of range: {n_unseen_objects}")
        obj_order = np.lexsort((np.arange(n_objects), totals))
        held_objects = set(obj_order[:n_unseen_objects].tolist())
        unseen = sorted(int(i) for i in ids[np.isin(trip[:, 1], list(held_objects))])
    elif scenario == "uv":
        totals = np.bincount(trip[:, 0], weights=freq, minlength=n_verbs)
        if not 0 < n_unseen_verbs < n_verbs:
            raise ParameterError(f"build_split: n_unseen_verbs out of range: {n_unseen_verbs}")
        verb_order = np.lexsort((np.arange(n_verbs), totals))
        held_verbs = set(verb_order[:n_unseen_verbs].tolist())
        unseen = sorted(int(i) for i in ids[np.isin(trip[:, 0], list(held_verbs))])
    else:
        raise ParameterError(f"unknown split scenario {scenario!r}, expected one of {SPLIT_SCENARIOS}")
    unseen_set = set(unseen)
    seen = [int(i) for i in ids if int(i) not in unseen_set]
    _orphan_check(scenario, trip, seen, n_verbs, n_objects, held_verbs, held_objects)
    return Split(name=scenario, seen=seen, unseen=unseen)


# ---------------------------------------------------------------------------
# matching and AP


def average_precision(tp, fp, n_gt: int) -> float:
    """All-points interpolated AP from per-rank hit/miss flags."""
    tp = np.asarray(tp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    if n_gt <= 0:
        raise ParameterError("average_precision: n_gt must be positive")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1e-12)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def triplet_average_precision(preds, gts, iou_threshold: float = 0.5) -> float:
    """AP for a single triplet's predictions against its ground truths.

    Predictions are ranked by score (ties keep input order).  A prediction is
    a hit when both boxes strictly exceed the IoU threshold against one
    unmatched ground truth in the same image; it claims the candidate with
    the highest pairwise overlap, ties toward the earlier ground truth.
    """
    n_gt = len(gts)
    if n_gt == 0:
        raise ParameterError("triplet_average_precision: no ground truth")
    if not preds:
        return 0.0
    scores = np.array([p["score"] for p in preds])
    order = np.argsort(-scores, kind="stable")
    matched = [False] * n_gt
    tp = np.zeros(len(preds))
    fp = np.zeros(len(preds))
    for rank, pi in enumerate(order):
        pred = preds[pi]
        best_overlap = 0.0
        best_gt = -1
        for gi, gt in enumerate(gts):
            if matched[gi] or gt["image_id"] != pred["image_id"]:
                continue
            overlap = min(box_iou(pred["human_box"], gt["human_box"]),
                          box_iou(pred["object_box"], gt["object_box"]))
            if overlap > iou_threshold and overlap > best_overlap:
                best_overlap = overlap
                best_gt = gi
        if best_gt >= 0:
            matched[best_gt] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0
    return average_precision(tp, fp, n_gt)


def evaluate_predictions(preds, gts, split: Split | None = None,
                         iou_threshold: float = 0.5) -> dict:
    """Per-triplet APs and the Full/Seen/Unseen summary.

    Triplets with no ground truth are excluded from every mean; a triplet
    with ground truth but no predictions scores zero.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ParameterError(f"evaluate_predictions: iou_threshold must be in (0, 1), got {iou_threshold}")
    gts_by_triplet: dict = {}
    for g in gts:
        gts_by_triplet.setdefault(int(g["triplet_id"]), []).append(g)
    preds_by_triplet: dict = {}
    for p in preds:
        preds_by_triplet.setdefault(int(p["triplet_id"]), []).append(p)
    per_triplet = {
        tid: triplet_average_precision(preds_by_triplet.get(tid, []), rows, iou_threshold)
        for tid, rows in sorted(gts_by_triplet.items())
    }

    def _mean(tids) -> float:
        vals = [per_triplet[t] for t in tids if t in per_triplet]
        return float(np.mean(vals)) if vals else 0.0

    report = {
        "per_triplet": per_triplet,
        "full": _mean(sorted(per_triplet)),
        "n_triplets": len(per_triplet),
    }
    if split is not None:
        seen = _mean(split.seen)
        unseen = _mean(split.unseen)
        hm = 2.0 * seen * unseen / (seen + unseen) if seen + unseen > 0 else 0.0
        report.update({"seen": seen, "unseen": unseen, "harmonic_mean": hm,
                       "split": split.name})
    return report


def permutation_baseline(preds, gts, split: Split, rounds: int = 5, seed: int = 0,
                         iou_threshold: float = 0.5) -> float:
    """Mean Unseen mAP when scores are replaced by uniform noise.

    Keeps boxes and triplet assignments, so it measures what the localization
    alone earns without any ranking signal.
    """
    if rounds <= 0:
        raise ParameterError("permutation_baseline: rounds must be positive")
    rng = Rng(seed).spawn("permutation-baseline")
    vals = []
    for r in range(rounds):
        rr = rng.spawn(r)
        shuffled = [dict(p, score=float(rr.uniform())) for p in preds]
        vals.append(evaluate_predictions(shuffled, gts, split, iou_threshold)["unseen"])
    return float(np.mean(vals))
