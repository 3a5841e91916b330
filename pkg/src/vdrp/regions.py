"""Region feature extraction and refinement.

Covers box utilities, grid-sampled RoI pooling over a feature map, prior
tokens built from detection metadata, a residual cross-attention adapter that
lets region features attend to those priors, and the gated spatial head that
fuses human and object appearance with pair geometry into the union feature.
Forward passes cache what their exact backward passes need.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .core import Rng, as_f64, atomic_write_text, ensure_matrix, ensure_vector
from .errors import DataError, DegenerateInputWarning, DimensionError, ParameterError

__all__ = [
    "validate_box",
    "box_area",
    "box_iou",
    "union_box",
    "roi_align",
    "roi_align_backward",
    "roi_pool_vector",
    "pair_geometry",
    "frozen_projection",
    "init_region_params",
    "build_prior_tokens",
    "prior_tokens_backward",
    "adapter_forward",
    "adapter_backward",
    "spatial_fuse",
    "spatial_fuse_backward",
    "load_detections",
    "save_detections",
]

_GEO_EPS = 1e-6


# ---------------------------------------------------------------------------
# boxes


def validate_box(box, name: str = "box") -> np.ndarray:
    b = ensure_vector(box, dim=4, name=name)
    if not np.all(np.isfinite(b)):
        raise DataError(f"{name}: non-finite coordinates")
    if b[2] < b[0] or b[3] < b[1]:
        raise DataError(f"{name}: corners out of order: {b.tolist()}")
    return b


def box_area(box) -> float:
    b = validate_box(box)
    return float(max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1]))


def box_iou(a, b) -> float:
    """Intersection over union with continuous (no pixel offset) areas."""
    ba = validate_box(a, "box_iou: a")
    bb = validate_box(b, "box_iou: b")
    ix = max(0.0, min(ba[2], bb[2]) - max(ba[0], bb[0]))
    iy = max(0.0, min(ba[3], bb[3]) - max(ba[1], bb[1]))
    inter = ix * iy
    union = box_area(ba) + box_area(bb) - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)


def union_box(a, b) -> np.ndarray:
    ba = validate_box(a, "union_box: a")
    bb = validate_box(b, "union_box: b")
    return np.array([
        min(ba[0], bb[0]), min(ba[1], bb[1]),
        max(ba[2], bb[2]), max(ba[3], bb[3]),
    ])


# ---------------------------------------------------------------------------
# RoI pooling


def _sample_axis(lo: float, hi: float, grid: int, samples: int, limit: int):
    span = max(hi - lo, _GEO_EPS)
    step = span / (grid * samples)
    coords = lo + step * (np.arange(grid * samples) + 0.5) - 0.5
    i0 = np.floor(coords).astype(np.int64)
    frac = coords - i0
    lo_idx = np.clip(i0, 0, limit - 1)
    hi_idx = np.clip(i0 + 1, 0, limit - 1)
    return lo_idx, hi_idx, frac


def roi_align(features, box, grid: int = 7, samples: int = 2, scale: float = 1.0):
    """Average-of-bilinear-samples pooling of a box into a (C, grid, grid) map.

    Sample points sit on a regular lattice inside the box; out-of-bounds
    reads clamp to the border, so constant maps pool to the same constant.
    Returns (pooled, cache) where the cache drives the backward pass.
    """
    f = as_f64(features, "roi_align: features")
    if f.ndim != 3:
        raise DimensionError(f"roi_align: features must be (C, H, W), got {f.shape}")
    if grid < 1 or samples < 1:
        raise ParameterError("roi_align: grid and samples must be >= 1")
    b = validate_box(box, "roi_align: box") * float(scale)
    if b[2] - b[0] < _GEO_EPS or b[3] - b[1] < _GEO_EPS:
        warnings.warn("roi_align: degenerate box, sampling a point region", DegenerateInputWarning)
    c, h, w = f.shape
    y0, y1, ty = _sample_axis(b[1], b[3], grid, samples, h)
    x0, x1, tx = _sample_axis(b[0], b[2], grid, samples, w)
    f00 = f[:, y0[:, None], x0[None, :]]
    f01 = f[:, y0[:, None], x1[None, :]]
    f10 = f[:, y1[:, None], x0[None, :]]
    f11 = f[:, y1[:, None], x1[None, :]]
    wy1 = ty[:, None]
    wy0 = 1.0 - wy1
    wx1 = tx[None, :]
    wx0 = 1.0 - wx1
    vals = f00 * wy0 * wx0 + f01 * wy0 * wx1 + f10 * wy1 * wx0 + f11 * wy1 * wx1
    n = grid
    pooled = vals.reshape(c, n, samples, n, samples).mean(axis=(2, 4))
    cache = {"shape": f.shape, "y0": y0, "y1": y1, "x0": x0, "x1": x1,
             "ty": ty, "tx": tx, "grid": grid, "samples": samples}
    return pooled, cache


def roi_align_backward(d_pooled, cache) -> np.ndarray:
    """Scatter pooled-output gradient back onto the feature map."""
    g = as_f64(d_pooled, "roi_align_backward: d_pooled")
    grid, samples = cache["grid"], cache["samples"]
    c = g.shape[0]
    d_vals = np.repeat(np.repeat(g, samples, axis=1), samples, axis=2) / float(samples * samples)
    y0, y1, ty = cache["y0"], cache["y1"], cache["ty"]
    x0, x1, tx = cache["x0"], cache["x1"], cache["tx"]
    wy1 = ty[:, None]
    wy0 = 1.0 - wy1
    wx1 = tx[None, :]
    wx0 = 1.0 - wx1
    d_f = np.zeros(cache["shape"])
    yy0 = np.broadcast_to(y0[:, None], d_vals.shape[1:])
    yy1 = np.broadcast_to(y1[:, None], d_vals.shape[1:])
    xx0 = np.broadcast_to(x0[None, :], d_vals.shape[1:])
    xx1 = np.broadcast_to(x1[None, :], d_vals.shape[1:])
    for ch in range(c):
        np.add.at(d_f[ch], (yy0, xx0), d_vals[ch] * wy0 * wx0)
        np.add.at(d_f[ch], (yy0, xx1), d_vals[ch] * wy0 * wx1)
        np.add.at(d_f[ch], (yy1, xx0), d_vals[ch] * wy1 * wx0)
        np.add.at(d_f[ch], (yy1, xx1), d_vals[ch] * wy1 * wx1)
    return d_f


def roi_pool_vector(features, box, grid: int = 7, samples: int = 2, scale: float = 1.0) -> np.ndarray:
    """Box feature as the mean over the pooled grid, shape (C,)."""
    pooled, _ = roi_align(features, box, grid=grid, samples=samples, scale=scale)
    return pooled.mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# pair geometry


def pair_geometry(box_h, box_o, image_size) -> np.ndarray:
    """Twelve scale-normalized layout features for a human-object pair."""
    bh = validate_box(box_h, "pair_geometry: human box")
    bo = validate_box(box_o, "pair_geometry: object box")
    iw, ih = float(image_size[0]), float(image_size[1])
    if iw <= 0 or ih <= 0:
        raise ParameterError("pair_geometry: image size must be positive")
    wh, hh = bh[2] - bh[0], bh[3] - bh[1]
    wo, ho = bo[2] - bo[0], bo[3] - bo[1]
    cxh, cyh = (bh[0] + bh[2]) / 2.0, (bh[1] + bh[3]) / 2.0
    cxo, cyo = (bo[0] + bo[2]) / 2.0, (bo[1] + bo[3]) / 2.0
    ah, ao = wh * hh, wo * ho
    return np.array([
        abs(cxo - cxh) / (wh + _GEO_EPS),
        abs(cyo - cyh) / (hh + _GEO_EPS),
        box_iou(bh, bo),
        wh / (hh + _GEO_EPS),
        wo / (ho + _GEO_EPS),
        cxh / iw,
        cyh / ih,
        cxo / iw,
        cyo / ih,
        ah / (iw * ih),
        ao / (iw * ih),
        ao / (ah + _GEO_EPS),
    ])


# ---------------------------------------------------------------------------
# parameters


def frozen_projection(seed: int, d: int, d_up: int) -> np.ndarray:
    """Fixed visual-to-embedding projection shared by a dataset's pipeline."""
    rng = Rng(seed).spawn("visual-projection")
    return rng.normal((d, d_up)) / np.sqrt(d_up)


def init_region_params(rng: Rng, d: int, d_up: int, d_down: int,
                       n_blocks: int, label_dim: int, spatial_hidden: int = 32) -> dict:
    """Trainable region-side parameters: prior projection, adapter, spatial head."""
    if min(d, d_up, d_down, n_blocks, label_dim, spatial_hidden) <= 0:
        raise ParameterError("init_region_params: all dimensions must be positive")
    r = rng.spawn("region-init")
    prior_in = 1 + label_dim + 4
    params = {
        "prior.w": r.normal((prior_in, d_down)) / np.sqrt(prior_in),
        "prior.b": np.zeros(d_down),
    }
    for i in range(n_blocks):
        params[f"adapter.{i}.wd"] = r.normal((d_up, d_down)) / np.sqrt(d_up)
        params[f"adapter.{i}.wq"] = r.normal((d_down, d_down)) / np.sqrt(d_down)
        params[f"adapter.{i}.wk"] = r.normal((d_down, d_down)) / np.sqrt(d_down)
        params[f"adapter.{i}.wv"] = r.normal((d_down, d_down)) / np.sqrt(d_down)
        # zero up-projection keeps each block an identity map at init
        params[f"adapter.{i}.wu"] = np.zeros((d_down, d_up))
    params.update({
        "spatial.w1": r.normal((12, spatial_hidden)) / np.sqrt(12.0),
        "spatial.b1": np.zeros(spatial_hidden),
        "spatial.w2": r.normal((spatial_hidden, d)) / np.sqrt(spatial_hidden),
        "spatial.b2": np.zeros(d),
        "spatial.wg": r.normal((d, d)) / np.sqrt(d),
        "spatial.bg": np.zeros(d),
        "spatial.wf": r.normal((2 * d, d)) / np.sqrt(2.0 * d),
        "spatial.bf": np.zeros(d),
        # pass the union feature through unchanged at init; the gated pair
        # path switches on only once its output rows move away from zero
        "spatial.wp": np.concatenate([np.eye(d), np.zeros((d, d))], axis=0),
        "spatial.bp": np.zeros(d),
    })
    return params


# ---------------------------------------------------------------------------
# prior tokens


def build_prior_tokens(params: dict, instances, labels, image_size):
    """Project each detection's (score, label embedding, normalized box) to a token."""
    lab = ensure_matrix(labels, name="build_prior_tokens: labels")
    iw, ih = float(image_size[0]), float(image_size[1])
    rows = []
    for inst in instances:
        box = validate_box(inst["box"], "prior token box")
        cid = int(inst["class_id"])
        if not 0 <= cid < lab.shape[0]:
            raise DataError(f"prior token: class id {cid} outside [0, {lab.shape[0]})")
        rows.append(np.concatenate([
            [float(inst["score"])], lab[cid],
            [box[0] / iw, box[1] / ih, box[2] / iw, box[3] / ih],
        ]))
    q = np.stack(rows) if rows else np.zeros((0, 1 + lab.shape[1] + 4))
    if q.shape[1] != params["prior.w"].shape[0]:
        raise DimensionError("build_prior_tokens: input width does not match prior.w")
    tokens = q @ params["prior.w"] + params["prior.b"]
    return tokens, {"q": q}


def prior_tokens_backward(cache, d_tokens) -> dict:
    g = np.asarray(d_tokens, dtype=np.float64)
    return {"prior.w": cache["q"].T @ g, "prior.b": g.sum(axis=0)}


# ---------------------------------------------------------------------------
# adapter


def adapter_forward(params: dict, n_blocks: int, x, priors):
    """Residual cross-attention refinement of region tokens against priors.

    ``x`` is (T, d_up) region features, ``priors`` (M, d_down) prior tokens.
    Returns (refined, caches).  With no priors the stack is the identity.
    """
    xt = ensure_matrix(x, name="adapter_forward: x")
    p = ensure_matrix(priors, name="adapter_forward: priors")
    caches = []
    if p.shape[0] == 0:
        return xt.copy(), caches
    d_down = p.shape[1]
    inv = 1.0 / np.sqrt(d_down)
    cur = xt
    for i in range(n_blocks):
        wd = params[f"adapter.{i}.wd"]
        wq = params[f"adapter.{i}.wq"]
        wk = params[f"adapter.{i}.wk"]
        wv = params[f"adapter.{i}.wv"]
        wu = params[f"adapter.{i}.wu"]
        xd = cur @ wd
        q = xd @ wq
        k = p @ wk
        v = p @ wv
        scores = q @ k.T * inv
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        attn = e / e.sum(axis=1, keepdims=True)
        h = attn @ v
        nxt = cur + h @ wu
        caches.append({"x_in": cur, "xd": xd, "q": q, "k": k, "v": v,
                       "attn": attn, "h": h, "inv": inv, "block": i})
        cur = nxt
    return cur, caches


def adapter_backward(params: dict, caches, priors, d_out):
    """Gradients for the adapter stack: (param grads, d_x, d_priors)."""
    g = np.asarray(d_out, dtype=np.float64)
    p = ensure_matrix(priors, name="adapter_backward: priors")
    grads: dict = {}
    d_priors = np.zeros_like(p)
    if not caches:
        return grads, g.copy(), d_priors
    d_cur = g
    for cache in reversed(caches):
        i = cache["block"]
        wd = params[f"adapter.{i}.wd"]
        wq = params[f"adapter.{i}.wq"]
        wk = params[f"adapter.{i}.wk"]
        wv = params[f"adapter.{i}.wv"]
        wu = params[f"adapter.{i}.wu"]
        attn, v, q, k, xd = cache["attn"], cache["v"], cache["q"], cache["k"], cache["xd"]
        inv = cache["inv"]
        grads[f"adapter.{i}.wu"] = cache["h"].T @ d_cur
        d_h = d_cur @ wu.T
        d_attn = d_h @ v.T
        d_v = attn.T @ d_h
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
        d_q = d_scores @ k * inv
        d_k = d_scores.T @ q * inv
        grads[f"adapter.{i}.wq"] = xd.T @ d_q
        d_xd = d_q @ wq.T
        grads[f"adapter.{i}.wd"] = cache["x_in"].T @ d_xd
        grads[f"adapter.{i}.wk"] = p.T @ d_k
        grads[f"adapter.{i}.wv"] = p.T @ d_v
        d_priors += d_k @ wk.T + d_v @ wv.T
        d_cur = d_cur + d_xd @ wd.T
    return grads, d_cur, d_priors


# ---------------------------------------------------------------------------
# spatial head


def spatial_fuse(params: dict, z_h, z_o, z_un, geo):
    """Gate pair appearance by encoded geometry, then fuse into the union feature.

    All of ``z_h``, ``z_o``, ``z_un`` are (P, d) batches; ``geo`` is (P, 12).
    Returns (z_u, cache).
    """
    zh = ensure_matrix(z_h, name="spatial_fuse: z_h")
    zo = ensure_matrix(z_o, rows=zh.shape[0], cols=zh.shape[1], name="spatial_fuse: z_o")
    zu = ensure_matrix(z_un, rows=zh.shape[0], cols=zh.shape[1], name="spatial_fuse: z_un")
    g = ensure_matrix(geo, rows=zh.shape[0], cols=12, name="spatial_fuse: geo")
    h_pre = g @ params["spatial.w1"] + params["spatial.b1"]
    h_act = np.maximum(h_pre, 0.0)
    es = h_act @ params["spatial.w2"] + params["spatial.b2"]
    g_pre = es @ params["spatial.wg"] + params["spatial.bg"]
    gate = 1.0 / (1.0 + np.exp(-g_pre))
    pair = np.concatenate([zh, zo], axis=1)
    a_pre = pair @ params["spatial.wf"] + params["spatial.bf"]
    fused = a_pre * gate
    upair = np.concatenate([zu, fused], axis=1)
    out = upair @ params["spatial.wp"] + params["spatial.bp"]
    cache = {"geo": g, "h_pre": h_pre, "h_act": h_act, "es": es, "gate": gate,
             "pair": pair, "a_pre": a_pre, "upair": upair}
    return out, cache


def spatial_fuse_backward(params: dict, cache, d_out):
    """Gradients for the spatial head: (param grads, d_z_h, d_z_o, d_z_un)."""
    g = np.asarray(d_out, dtype=np.float64)
    d = g.shape[1]
    grads = {
        "spatial.wp": cache["upair"].T @ g,
        "spatial.bp": g.sum(axis=0),
    }
    d_upair = g @ params["spatial.wp"].T
    d_zun = d_upair[:, :d]
    d_fused = d_upair[:, d:]
    gate = cache["gate"]
    d_apre = d_fused * gate
    d_gate = d_fused * cache["a_pre"]
    grads["spatial.wf"] = cache["pair"].T @ d_apre
    grads["spatial.bf"] = d_apre.sum(axis=0)
    d_pair = d_apre @ params["spatial.wf"].T
    d_gpre = d_gate * gate * (1.0 - gate)
    grads["spatial.wg"] = cache["es"].T @ d_gpre
    grads["spatial.bg"] = d_gpre.sum(axis=0)
    d_es = d_gpre @ params["spatial.wg"].T
    grads["spatial.w2"] = cache["h_act"].T @ d_es
    grads["spatial.b2"] = d_es.sum(axis=0)
    d_hact = d_es @ params["spatial.w2"].T
    d_hpre = d_hact * (cache["h_pre"] > 0.0)
    grads["spatial.w1"] = cache["geo"].T @ d_hpre
    grads["spatial.b1"] = d_hpre.sum(axis=0)
    return grads, d_pair[:, :d], d_pair[:, d:], d_zun


# ---------------------------------------------------------------------------
# detection files


def load_detections(path: str | Path) -> dict:
    """Read detections keyed by image id from a jsonl file."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: bad json: {exc}") from exc
        if "image_id" not in row or "instances" not in row:
            raise DataError(f"{path}:{lineno}: rows need image_id and instances")
        image_id = int(row["image_id"])
        if image_id in out:
            raise DataError(f"{path}:{lineno}: duplicate image id {image_id}")
        instances = []
        for inst in row["instances"]:
            score = float(inst["score"])
            if not 0.0 <= score <= 1.0:
                raise DataError(f"{path}:{lineno}: score {score} outside [0, 1]")
            instances.append({
                "score": score,
                "class_id": int(inst["class_id"]),
                "box": validate_box(inst["box"], f"{path}:{lineno}: box"),
            })
        out[image_id] = instances
    return out


def save_detections(path: str | Path, detections: dict) -> None:
    lines = []
    for image_id in sorted(detections):
        row = {
            "image_id": int(image_id),
            "instances": [
                {"score": float(i["score"]), "class_id": int(i["class_id"]),
                 "box": [float(c) for c in i["box"]]}
                for i in detections[image_id]
            ],
        }
        lines.append(json.dumps(row, sort_keys=True, separators=(",", ":")))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
