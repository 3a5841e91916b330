"""Synthetic embedding-space worlds for exercising the pipeline end to end.

A world plants per-class latent directions on a small feature grid: person
and object latents inside their boxes, a verb latent (with per-verb diversity
jitter) over the union region, plus background noise.  Detections are
jittered copies of the ground truth boxes with extra spurious instances, and
the concept banks are built from the same latents through the same frozen
projection, so retrieval genuinely helps.  Also provides a fixed large
taxonomy whose frequency plan makes every holdout scenario unambiguous.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Rng, atomic_write_text, write_vdt1
from .concepts import ROUTES, ConceptBank, save_concepts
from .errors import DataError, ParameterError
from .evaluate import build_split
from .prompts import embed_names
from .regions import frozen_projection, save_detections, union_box
from .data import save_gt_records

__all__ = ["paper_scale_taxonomy", "compositional_taxonomy", "generate_world"]


def paper_scale_taxonomy():
    """117 verbs, 80 objects, 600 triplets with a deliberate frequency plan.

    The plan pins every holdout rule to one answer: the 120 lowest and
    highest frequency triplets are unique, the 12 lowest-frequency objects
    cover exactly 100 triplets, and the 20 lowest-frequency verbs cover
    exactly 84, with no primitive orphaned by any of those holdouts.
    """
    n_verbs, n_objects = 117, 80
    triplets, freqs = [], []
    head = 0
    for j in range(5):
        v_count = 97 if j < 4 else 28
        for v in range(v_count):
            triplets.append((v, (v + 30 * j) % 68))
            if j == 0:
                freqs.append(3)
            elif j == 1 or (j == 2 and v < 23):
                freqs.append(1)
            else:
                freqs.append(20 + head)
                head += 1
    for i, v in enumerate(range(97, 117)):
        count = 4 if i < 16 else 5
        base = (7 * v) % 68
        for t in range(count):
            triplets.append((v, (base + t) % 68))
            freqs.append(2)
    for i, o in enumerate(range(68, 80)):
        count = 8 if i < 8 else 9
        base = (11 * o) % 97
        for t in range(count):
            triplets.append(((base + t) % 97, o))
            freqs.append(2)
    trip = np.asarray(triplets, dtype=np.int64)
    freq = np.asarray(freqs, dtype=np.int64)
    if trip.shape[0] != 600 or len({(int(v), int(o)) for v, o in trip}) != 600:
        raise DataError("paper_scale_taxonomy: construction lost triplets")
    if set(trip[:, 0].tolist()) != set(range(n_verbs)) or set(trip[:, 1].tolist()) != set(range(n_objects)):
        raise DataError("paper_scale_taxonomy: some primitive is unused")
    return trip, freq, n_verbs, n_objects


def compositional_taxonomy(n_verbs: int, n_objects: int, per_verb: int):
    """Small world: each verb pairs with ``per_verb`` evenly spread objects."""
    if n_verbs <= 0 or n_objects <= 0 or not 1 <= per_verb <= n_objects:
        raise ParameterError("compositional_taxonomy: bad sizes")
    stride = max(1, n_objects // per_verb)
    triplets = []
    for v in range(n_verbs):
        for i in range(per_verb):
            triplets.append((v, (v + i * stride) % n_objects))
    trip = np.asarray(triplets, dtype=np.int64)
    if len({(int(v), int(o)) for v, o in trip}) != trip.shape[0]:
        raise ParameterError("compositional_taxonomy: stride collides, lower per_verb")
    if set(trip[:, 1].tolist()) != set(range(n_objects)):
        raise ParameterError("compositional_taxonomy: some object unused, raise verbs or per_verb")
    freq = 1 + (np.arange(trip.shape[0], dtype=np.int64) * 7919) % 13
    return trip, freq, n_verbs, n_objects


# ---------------------------------------------------------------------------
# world generation


def _paint(grid: np.ndarray, box, vec: np.ndarray) -> None:
    # cells whose centers fall inside the box
    h, w = grid.shape[1], grid.shape[2]
    x_lo = max(0, int(np.ceil(box[0] - 0.5)))
    x_hi = min(w - 1, int(np.floor(box[2] - 0.5)))
    y_lo = max(0, int(np.ceil(box[1] - 0.5)))
    y_hi = min(h - 1, int(np.floor(box[3] - 0.5)))
    if x_hi >= x_lo and y_hi >= y_lo:
        grid[:, y_lo:y_hi + 1, x_lo:x_hi + 1] += vec[:, None, None]


def _rand_box(rng: Rng, size: int, w_lo: float, w_hi: float, h_lo: float, h_hi: float):
    w = w_lo + (w_hi - w_lo) * rng.uniform()
    h = h_lo + (h_hi - h_lo) * rng.uniform()
    x1 = (size - w) * rng.uniform()
    y1 = (size - h) * rng.uniform()
    return np.array([x1, y1, x1 + w, y1 + h])


def _near_box(rng: Rng, anchor, size: int, w_lo: float, w_hi: float, reach: float):
    w = w_lo + (w_hi - w_lo) * rng.uniform()
    h = w_lo + (w_hi - w_lo) * rng.uniform()
    cx = (anchor[0] + anchor[2]) / 2.0 + (2.0 * rng.uniform() - 1.0) * reach
    cy = (anchor[1] + anchor[3]) / 2.0 + (2.0 * rng.uniform() - 1.0) * reach
    cx = min(max(cx, w / 2.0), size - w / 2.0)
    cy = min(max(cy, h / 2.0), size - h / 2.0)
    return np.array([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0])


def _jitter_box(rng: Rng, box, size: int, amount: float):
    w = box[2] - box[0]
    h = box[3] - box[1]
    out = np.array([
        box[0] + (2.0 * rng.uniform() - 1.0) * amount * w,
        box[1] + (2.0 * rng.uniform() - 1.0) * amount * h,
        box[2] + (2.0 * rng.uniform() - 1.0) * amount * w,
        box[3] + (2.0 * rng.uniform() - 1.0) * amount * h,
    ])
    out[0] = min(max(out[0], 0.0), size - 0.5)
    out[1] = min(max(out[1], 0.0), size - 0.5)
    out[2] = min(max(out[2], out[0] + 0.5), size)
    out[3] = min(max(out[3], out[1] + 0.5), size)
    return out


def _weighted_draw(rng: Rng, cumulative: np.ndarray) -> int:
    u = rng.uniform() * cumulative[-1]
    return int(np.searchsorted(cumulative, u, side="right"))


def generate_world(out_dir: str | Path, cfg: dict, seed: int) -> dict:
    """Write a complete dataset directory; returns its meta dict."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    d = int(cfg["dims.d"])
    d_up = int(cfg["dims.d_up"])
    size = int(cfg["synth.size"])
    if cfg["synth.taxonomy"] == "paper_scale":
        triplets, freqs, n_verbs, n_objects = paper_scale_taxonomy()
    elif cfg["synth.taxonomy"] == "compositional":
        triplets, freqs, n_verbs, n_objects = compositional_taxonomy(
            int(cfg["synth.verbs"]), int(cfg["synth.objects"]), int(cfg["synth.triplets_per_verb"]))
    else:
        raise ParameterError(f"unknown taxonomy {cfg['synth.taxonomy']!r}")
    verb_names = [f"verb{v:03d}" for v in range(n_verbs)]
    object_names = ["person"] + [f"object{o:03d}" for o in range(1, n_objects)]

    root = Rng(seed)
    backbone_seed = root.spawn("backbone").seed
    encoder_seed = root.spawn("encoder").seed
    w_out = frozen_projection(backbone_seed, d, d_up)
    lat_rng = root.spawn("latents")
    if n_objects + n_verbs <= d_up:
        # plant the class directions as one orthonormal frame so no two
        # classes collide by chance and every verb is equally recoverable
        frame = np.linalg.qr(lat_rng.normal((d_up, d_up)))[0].T * np.sqrt(d_up)
        z_obj = frame[:n_objects]
        u_verb = frame[n_objects:n_objects + n_verbs]
    else:
        z_obj = lat_rng.normal((n_objects, d_up))
        u_verb = lat_rng.normal((n_verbs, d_up))
    div_lo = float(cfg["synth.diversity_min"])
    div_hi = float(cfg["synth.diversity_max"])
    diversity = div_lo + (div_hi - div_lo) * lat_rng.uniform((n_verbs,))

    holdout = cfg["synth.holdout"]
    if holdout == "none":
        unseen: set = set()
    else:
        split = build_split(holdout, triplets, freqs, n_verbs, n_objects,
                            n_unseen=int(cfg["synth.holdout_count"]),
                            n_unseen_objects=int(cfg["split.n_unseen_objects"]),
                            n_unseen_verbs=int(cfg["split.n_unseen_verbs"]))
        unseen = set(split.unseen)
    seen_ids = [t for t in range(triplets.shape[0]) if t not in unseen]
    if not seen_ids:
        raise DataError("generate_world: holdout removed every triplet")
    cumulative = np.cumsum(freqs[seen_ids].astype(np.float64))

    ppi = int(cfg["synth.pairs_per_image"])
    n_train = int(cfg["synth.train_images"])
    reps = int(cfg["synth.test_coverage"])
    jitter = float(cfg["synth.detection_jitter"])
    bg = float(cfg["synth.background_noise"])
    n_spur_obj = int(cfg["synth.spurious_objects"])
    n_spur_hum = int(cfg["synth.spurious_humans"])
    spur_lo = float(cfg["synth.spurious_score_lo"])
    spur_hi = float(cfg["synth.spurious_score_hi"])
    if not 0.0 <= spur_lo <= spur_hi <= 1.0:
        raise ParameterError("generate_world: spurious score band must satisfy 0 <= lo <= hi <= 1")

    # train interactions: one coverage pass over seen ids, then frequency-weighted
    train_plan_rng = root.spawn("train-plan")
    total_train = n_train * ppi
    train_draws = [seen_ids[i % len(seen_ids)] for i in range(min(len(seen_ids), total_train))]
    while len(train_draws) < total_train:
        train_draws.append(seen_ids[_weighted_draw(train_plan_rng, cumulative)])

    # test interactions: fixed coverage of every triplet, shuffled
    test_plan_rng = root.spawn("test-plan")
    test_draws = [t for _ in range(reps) for t in range(triplets.shape[0])]
    order = test_plan_rng.permutation(len(test_draws))
    test_draws = [test_draws[int(i)] for i in order]
    n_test = int(np.ceil(len(test_draws) / ppi))

    gt_rows = []
    detections = {}

    def synth_image(image_id: int, draw_list) -> None:
        img_rng = root.spawn(f"image-{image_id}")
        grid = bg * img_rng.normal((d_up, size, size))
        instances = []
        for tid in draw_list:
            v, o = int(triplets[tid, 0]), int(triplets[tid, 1])
            bh = _rand_box(img_rng, size, 5.0, 9.0, 6.0, 10.0)
            bo = _near_box(img_rng, bh, size, 3.0, 8.0, 6.0)
            _paint(grid, bh, z_obj[0])
            _paint(grid, bo, z_obj[o])
            _paint(grid, union_box(bh, bo), u_verb[v] + diversity[v] * img_rng.normal((d_up,)))
            gt_rows.append({"image_id": image_id, "human_box": bh,
                            "object_box": bo, "triplet_id": tid})
            instances.append({"score": 0.88 + 0.11 * img_rng.uniform(), "class_id": 0,
                              "box": _jitter_box(img_rng, bh, size, jitter)})
            instances.append({"score": 0.88 + 0.11 * img_rng.uniform(), "class_id": o,
                              "box": _jitter_box(img_rng, bo, size, jitter)})
        spur_span = spur_hi - spur_lo
        for _ in range(n_spur_hum):
            instances.append({"score": spur_lo + spur_span * img_rng.uniform(), "class_id": 0,
                              "box": _rand_box(img_rng, size, 4.0, 8.0, 5.0, 9.0)})
        for _ in range(n_spur_obj):
            instances.append({"score": spur_lo + spur_span * img_rng.uniform(),
                              "class_id": img_rng.integers(0, n_objects),
                              "box": _rand_box(img_rng, size, 3.0, 7.0, 3.0, 7.0)})
        detections[image_id] = instances
        write_vdt1(out / "features" / f"img_{image_id:05d}.vdt1", grid)

    train_ids = list(range(n_train))
    for i, image_id in enumerate(train_ids):
        synth_image(image_id, train_draws[i * ppi:(i + 1) * ppi])
    test_ids = list(range(n_train, n_train + n_test))
    for j, image_id in enumerate(test_ids):
        synth_image(image_id, test_draws[j * ppi:(j + 1) * ppi])

    # concept banks from the same latents, one bank per route
    conc_rng = root.spawn("concepts")
    k = int(cfg["synth.concepts_k"])
    noise = float(cfg["synth.concept_noise"])
    partners = {v: [int(o) for vv, o in triplets if int(vv) == v] for v in range(n_verbs)}
    bank_emb = {r: np.zeros((n_verbs, k, d)) for r in ROUTES}
    bank_txt = {r: [] for r in ROUTES}
    for v in range(n_verbs):
        obj_mix = z_obj[partners[v]].mean(axis=0) if partners[v] else np.zeros(d_up)
        base = {
            "human": z_obj[0] + 0.5 * u_verb[v],
            "object": obj_mix + 0.5 * u_verb[v],
            "union": u_verb[v] + 0.25 * z_obj[0],
        }
        for route in ROUTES:
            texts = []
            for kk in range(k):
                raw = w_out @ (base[route] + noise * conc_rng.normal((d_up,)))
                norm = float(np.linalg.norm(raw))
                bank_emb[route][v, kk] = raw / (norm if norm > 0 else 1.0)
                texts.append(f"{verb_names[v]} {route} cue {kk}")
            bank_txt[route].append(texts)
    bank = ConceptBank(embeddings=bank_emb, texts=bank_txt)

    save_gt_records(out / "gts.jsonl", gt_rows)
    save_detections(out / "detections.jsonl", detections)
    save_concepts(out / "concepts.json", bank)
    write_vdt1(out / "labels_verbs.vdt1", embed_names(verb_names, d, encoder_seed))
    write_vdt1(out / "labels_objects.vdt1", embed_names(object_names, d, encoder_seed))
    meta = {
        "format": "vdrp-dataset",
        "seed": int(seed),
        "dims": {"d": d, "d_t": int(cfg["dims.d_t"]), "d_up": d_up,
                 "n_ctx": int(cfg["dims.n_ctx"])},
        "verbs": n_verbs,
        "objects": n_objects,
        "verb_names": verb_names,
        "object_names": object_names,
        "triplets": [[int(v), int(o)] for v, o in triplets],
        "triplet_frequencies": [int(f) for f in freqs],
        "train_images": train_ids,
        "test_images": test_ids,
        "image_size": [size, size],
        "feature_stride": 1.0,
        "encoder_seed": int(encoder_seed),
        "backbone_seed": int(backbone_seed),
        "holdout": holdout,
    }
    atomic_write_text(out / "meta.json", json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
    return meta
