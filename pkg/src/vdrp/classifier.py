"""End-to-end interaction classifier: forward pass, exact backward pass,
focal training loop, prediction, and checkpointing.

Per image: detection pairs are pooled into human/object/union features,
refined against detection priors by the adapter, projected into the shared
embedding space, fused with pair geometry, scored against concept-refined
prompts on each branch, and the branch logits are averaged.  The trainable
pieces are the prompt side (context plus modulation net) and the region side
(prior projection, adapter, spatial head); everything else stays frozen.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .concepts import ROUTES, ConceptBank, refine_prompts, refine_prompts_backward
from .core import Rng, atomic_write_text, read_vdt1, write_vdt1
from .errors import DataError, DimensionError, ParameterError
from .prompts import (SyntheticTextEncoder, build_prompts, build_prompts_backward,
                      init_vdp_params, sample_noise, variance_stat_input)
from .regions import (adapter_backward, adapter_forward, box_iou, build_prior_tokens,
                      frozen_projection, init_region_params, pair_geometry,
                      prior_tokens_backward, roi_pool_vector, spatial_fuse,
                      spatial_fuse_backward, union_box)
from .simplex import RETRIEVE_MODES
from .stats import group_average, per_verb_moments, semantic_groups

__all__ = [
    "PipelineSettings",
    "focal_loss",
    "candidate_pairs",
    "assign_targets",
    "HoiModel",
    "estimate_statistics",
    "build_model",
    "image_logits",
    "image_loss_and_grads",
    "AdamW",
    "cosine_lr",
    "train_model",
    "predict_dataset",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class PipelineSettings:
    """Hyperparameters for the full pipeline, all desk scale by default."""

    d: int = 32
    d_t: int = 16
    d_up: int = 48
    d_down: int = 8
    n_ctx: int = 24
    mlp_hidden: int = 64
    spatial_hidden: int = 32
    adapter_blocks: int = 2
    grid: int = 7
    samples: int = 2
    alpha: float = 0.02
    beta: float = 0.1
    stat_mode: str = "variance"
    group_size: int = 3
    init_std: float = 0.02
    resample_noise: bool = False
    gamma: float = 0.2
    retrieve_mode: str = "sparsemax"
    tau: float = 0.0
    temperature: float = 1.0
    top_k: int = 3
    branches: tuple = ("human", "object", "union")
    focal_gamma: float = 2.0
    focal_alpha: float = 0.75
    score_threshold: float = 0.2
    assign_iou: float = 0.5
    steps: int = 200
    lr: float = 0.01
    lr_final_scale: float = 0.1
    weight_decay: float = 0.01

    def __post_init__(self):
        self.branches = tuple(self.branches)
        if not self.branches or any(b not in ROUTES for b in self.branches):
            raise ParameterError(f"branches must be a non-empty subset of {ROUTES}")
        if len(set(self.branches)) != len(self.branches):
            raise ParameterError("branches must not repeat")
        if self.retrieve_mode not in RETRIEVE_MODES:
            raise ParameterError(f"retrieve_mode must be one of {RETRIEVE_MODES}")
        if self.stat_mode not in ("variance", "mean_and_variance"):
            raise ParameterError(f"unknown stat_mode {self.stat_mode!r}")
        if not 0.0 <= self.tau < 1.0:
            raise ParameterError("tau must be in [0, 1)")
        if self.temperature <= 0.0:
            raise ParameterError("temperature must be positive")
        if self.focal_gamma < 0.0 or not 0.0 <= self.focal_alpha <= 1.0:
            raise ParameterError("focal parameters out of range")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ParameterError("score_threshold must be in [0, 1]")
        if not 0.0 < self.assign_iou <= 1.0:
            raise ParameterError("assign_iou must be in (0, 1]")
        if self.steps < 0 or self.lr <= 0.0 or self.weight_decay < 0.0:
            raise ParameterError("bad optimizer settings")
        if self.gamma < 0.0 or self.alpha < 0.0 or self.beta < 0.0:
            raise ParameterError("alpha, beta, and gamma must be non-negative")
        if self.top_k < 1 or self.group_size < 1 or self.adapter_blocks < 1:
            raise ParameterError("top_k, group_size, and adapter_blocks must be >= 1")
        if min(self.d, self.d_t, self.d_up, self.d_down, self.n_ctx,
               self.mlp_hidden, self.spatial_hidden, self.grid, self.samples) < 1:
            raise ParameterError("all dimensions must be positive")

    @property
    def stat_dim(self) -> int:
        return self.d * (2 if self.stat_mode == "mean_and_variance" else 1)


# ---------------------------------------------------------------------------
# loss


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def focal_loss(logits, targets, gamma: float = 2.0, alpha: float = 0.5):
    """Mean sigmoid focal loss and its exact gradient in the logits.

    The log is clamped at 1e-12; inside the clamp the corresponding gradient
    term is zero, so value and gradient stay consistent.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise DimensionError(f"focal_loss: logits {z.shape} vs targets {y.shape}")
    if z.size == 0:
        raise ParameterError("focal_loss: empty input")
    q = _sigmoid(z)
    pt = y * q + (1.0 - y) * (1.0 - q)
    at = alpha * y + (1.0 - alpha) * (1.0 - y)
    log_pt = np.log(np.maximum(pt, 1e-12))
    one_m = 1.0 - pt
    elem = -at * one_m**gamma * log_pt
    loss = float(elem.mean())
    term1 = gamma * one_m ** (gamma - 1.0) * log_pt if gamma != 0.0 else 0.0
    inv_pt = np.where(pt > 1e-12, 1.0 / np.maximum(pt, 1e-12), 0.0)
    dl_dpt = at * (term1 - one_m**gamma * inv_pt)
    dpt_dz = (2.0 * y - 1.0) * q * (1.0 - q)
    d_logits = dl_dpt * dpt_dz / z.size
    return loss, d_logits


# ---------------------------------------------------------------------------
# pairs and targets


def candidate_pairs(instances, score_threshold: float) -> list:
    """All (human index, other index) pairs above the detection threshold."""
    kept = [i for i, inst in enumerate(instances) if inst["score"] >= score_threshold]
    humans = [i for i in kept if instances[i]["class_id"] == 0]
    return [(h, o) for h in humans for o in kept if o != h]


def assign_targets(pairs, instances, gt_rows, triplets: np.ndarray, unseen_ids,
                   n_verbs: int, iou_threshold: float = 0.5) -> np.ndarray:
    """Multi-hot verb targets per pair from overlapping ground truth.

    A ground truth supervises a pair when the object classes agree and both
    boxes reach the IoU threshold.  Ground truth from held-out triplets never
    contributes, which keeps the unseen half strictly zero shot.
    """
    unseen = set(int(t) for t in unseen_ids)
    y = np.zeros((len(pairs), n_verbs))
    for p, (hi, oi) in enumerate(pairs):
        bh = instances[hi]["box"]
        bo = instances[oi]["box"]
        cls_o = instances[oi]["class_id"]
        for gt in gt_rows:
            tid = int(gt["triplet_id"])
            if tid in unseen:
                continue
            verb, obj = int(triplets[tid, 0]), int(triplets[tid, 1])
            if obj != cls_o:
                continue
            overlap = min(box_iou(bh, gt["human_box"]), box_iou(bo, gt["object_box"]))
            if overlap >= iou_threshold:
                y[p, verb] = 1.0
    return y


# ---------------------------------------------------------------------------
# model state


@dataclass
class HoiModel:
    settings: PipelineSettings
    params: dict
    encoder: SyntheticTextEncoder
    class_tokens: np.ndarray
    stat_input: np.ndarray
    sigma_norm: np.ndarray
    noise: np.ndarray
    object_labels: np.ndarray
    w_out: np.ndarray
    bank: ConceptBank
    triplets: np.ndarray
    image_size: tuple
    feature_stride: float = 1.0

    @property
    def n_verbs(self) -> int:
        return self.class_tokens.shape[0]

    def prompt_buffers(self, alpha: float | None = None, beta: float | None = None) -> dict:
        return {
            "class_tokens": self.class_tokens,
            "stat_input": self.stat_input,
            "sigma_norm": self.sigma_norm,
            "noise": self.noise,
            "alpha": self.settings.alpha if alpha is None else alpha,
            "beta": self.settings.beta if beta is None else beta,
        }


def estimate_statistics(dataset, settings: PipelineSettings, exclude_triplets=()) -> dict:
    """Per-verb embedding statistics from training-image ground truth regions.

    Union boxes are pooled from the frozen feature maps and projected by the
    frozen visual projection, so the statistics exist before any training.
    """
    w_out = frozen_projection(dataset.backbone_seed, settings.d, settings.d_up)
    scale = 1.0 / dataset.feature_stride
    exclude = set(int(t) for t in exclude_triplets)
    rows, verb_ids = [], []
    for image_id in dataset.train_images:
        gt_rows = [g for g in dataset.gts if g["image_id"] == image_id]
        if not gt_rows:
            continue
        feats = dataset.features(image_id)
        for gt in gt_rows:
            tid = int(gt["triplet_id"])
            if tid in exclude:
                continue
            box = union_box(gt["human_box"], gt["object_box"])
            x = roi_pool_vector(feats, box, settings.grid, settings.samples, scale)
            rows.append(w_out @ x)
            verb_ids.append(int(dataset.triplets[tid, 0]))
    if rows:
        emb = np.stack(rows)
        ids = np.asarray(verb_ids, dtype=np.int64)
    else:
        emb = np.zeros((0, settings.d))
        ids = np.zeros(0, dtype=np.int64)
    mean, var, counts = per_verb_moments(emb, ids, dataset.n_verbs)
    groups = semantic_groups(dataset.verb_labels(), min(settings.group_size, dataset.n_verbs))
    return {
        "mean": mean,
        "var": var,
        "counts": counts,
        "groups": groups,
        "group_mean": group_average(mean, groups, counts),
        "group_var": group_average(var, groups, counts),
        "embeddings": emb,
        "verb_ids": ids,
    }


def build_model(dataset, bank: ConceptBank, settings: PipelineSettings, seed: int,
                stats: dict | None = None, exclude_triplets=()) -> HoiModel:
    """Fresh model wired to a dataset's frozen encoder, projection, and bank."""
    if stats is None:
        stats = estimate_statistics(dataset, settings, exclude_triplets)
    if bank.n_verbs != dataset.n_verbs or bank.dim != settings.d:
        raise DataError(
            f"concept bank ({bank.n_verbs} verbs, dim {bank.dim}) does not match "
            f"dataset ({dataset.n_verbs} verbs, dim {settings.d})"
        )
    encoder = SyntheticTextEncoder(dataset.encoder_seed, settings.n_ctx, settings.d_t, settings.d)
    class_tokens = np.stack([encoder.token_embedding(n) for n in dataset.verb_names])
    stat_input, sigma_norm = variance_stat_input(stats["group_mean"], stats["group_var"],
                                                 settings.stat_mode)
    rng = Rng(seed)
    params = init_vdp_params(rng, settings.n_ctx, settings.d_t, settings.stat_dim,
                             settings.mlp_hidden, settings.init_std)
    params.update(init_region_params(rng, settings.d, settings.d_up, settings.d_down,
                                     settings.adapter_blocks, settings.d,
                                     settings.spatial_hidden))
    object_labels = dataset.object_labels()
    if object_labels.shape != (dataset.n_objects, settings.d):
        raise DataError(f"object label table has shape {object_labels.shape}, "
                        f"expected ({dataset.n_objects}, {settings.d})")
    return HoiModel(
        settings=settings,
        params=params,
        encoder=encoder,
        class_tokens=class_tokens,
        stat_input=stat_input,
        sigma_norm=sigma_norm,
        noise=sample_noise(rng, dataset.n_verbs, settings.d),
        object_labels=object_labels,
        w_out=frozen_projection(dataset.backbone_seed, settings.d, settings.d_up),
        bank=bank,
        triplets=dataset.triplets.copy(),
        image_size=dataset.image_size,
        feature_stride=dataset.feature_stride,
    )


# ---------------------------------------------------------------------------
# forward and backward


def image_logits(model: HoiModel, features, instances, pairs, need_cache: bool = False):
    """Fused verb logits (P, V) for an image's candidate pairs.

    Returns (logits, cache); the cache also exposes per-branch logits under
    ``branch_logits`` for fusion inspection.
    """
    s = model.settings
    if not pairs:
        raise ParameterError("image_logits: no candidate pairs")
    prompts, p_cache = build_prompts(model.params, model.prompt_buffers(), model.encoder)
    priors, prior_cache = build_prior_tokens(model.params, instances, model.object_labels,
                                             model.image_size)
    scale = 1.0 / model.feature_stride
    rois, geo = [], []
    for hi, oi in pairs:
        bh = instances[hi]["box"]
        bo = instances[oi]["box"]
        rois.append(roi_pool_vector(features, bh, s.grid, s.samples, scale))
        rois.append(roi_pool_vector(features, bo, s.grid, s.samples, scale))
        rois.append(roi_pool_vector(features, union_box(bh, bo), s.grid, s.samples, scale))
        geo.append(pair_geometry(bh, bo, model.image_size))
    x = np.stack(rois)
    xa, a_caches = adapter_forward(model.params, s.adapter_blocks, x, priors)
    z = xa @ model.w_out.T
    z_h, z_o, z_un = z[0::3], z[1::3], z[2::3]
    z_u, s_cache = spatial_fuse(model.params, z_h, z_o, z_un, np.stack(geo))
    route_feats = {"human": z_h, "object": z_o, "union": z_u}
    n_pairs = len(pairs)
    branch_logits = {}
    refine_caches = {}
    for route in s.branches:
        bank_c = model.bank.embeddings[route]
        logits = np.empty((n_pairs, model.n_verbs))
        caches = []
        for p in range(n_pairs):
            refined, rc = refine_prompts(prompts, route_feats[route][p], bank_c, s.gamma,
                                         mode=s.retrieve_mode, tau=s.tau,
                                         temperature=s.temperature, k=s.top_k)
            logits[p] = refined @ route_feats[route][p]
            caches.append((rc, refined))
        branch_logits[route] = logits
        refine_caches[route] = caches
    hoi = sum(branch_logits[r] for r in s.branches) / float(len(s.branches))
    cache = {"branch_logits": branch_logits}
    if need_cache:
        cache.update({
            "p_cache": p_cache, "prior_cache": prior_cache, "priors": priors,
            "a_caches": a_caches, "s_cache": s_cache, "route_feats": route_feats,
            "refine_caches": refine_caches, "n_pairs": n_pairs,
        })
    return hoi, cache


def _zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def image_backward(model: HoiModel, cache, d_hoi) -> dict:
    """Exact parameter gradients given the gradient in the fused logits."""
    s = model.settings
    grads = _zero_grads(model.params)
    n_branch = float(len(s.branches))
    route_feats = cache["route_feats"]
    n_pairs = cache["n_pairs"]
    d_routes = {r: np.zeros_like(route_feats[r]) for r in ROUTES}
    d_prompts = None
    for route in s.branches:
        d_branch = np.asarray(d_hoi) / n_branch
        for p in range(n_pairs):
            rc, refined = cache["refine_caches"][route][p]
            zr = route_feats[route][p]
            d_logit = d_branch[p]
            d_refined = d_logit[:, None] * zr[None, :]
            d_z = refined.T @ d_logit
            d_prompt_part, d_x = refine_prompts_backward(rc, d_refined)
            d_prompts = d_prompt_part if d_prompts is None else d_prompts + d_prompt_part
            d_routes[route][p] += d_z + d_x
    sp_grads, d_zh_sp, d_zo_sp, d_zun = spatial_fuse_backward(model.params, cache["s_cache"],
                                                              d_routes["union"])
    for k, v in sp_grads.items():
        grads[k] += v
    d_z = np.zeros((3 * n_pairs, s.d))
    d_z[0::3] = d_routes["human"] + d_zh_sp
    d_z[1::3] = d_routes["object"] + d_zo_sp
    d_z[2::3] = d_zun
    d_xa = d_z @ model.w_out
    a_grads, _, d_priors = adapter_backward(model.params, cache["a_caches"], cache["priors"], d_xa)
    for k, v in a_grads.items():
        grads[k] += v
    for k, v in prior_tokens_backward(cache["prior_cache"], d_priors).items():
        grads[k] += v
    if d_prompts is not None:
        for k, v in build_prompts_backward(cache["p_cache"], d_prompts).items():
            grads[k] += v
    return grads


def image_loss_and_grads(model: HoiModel, features, instances, pairs, targets):
    hoi, cache = image_logits(model, features, instances, pairs, need_cache=True)
    loss, d_hoi = focal_loss(hoi, targets, model.settings.focal_gamma, model.settings.focal_alpha)
    return loss, image_backward(model, cache, d_hoi)


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(self, params: dict, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key in sorted(self.params):
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(self.params[key])
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            self.params[key] -= lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                      + self.weight_decay * self.params[key])


def cosine_lr(step: int, total: int, lr: float, final_scale: float = 0.1) -> float:
    """Half-cosine decay from lr to lr*final_scale over the run."""
    if total <= 0:
        return lr
    lr_final = lr * final_scale
    frac = min(max(step / total, 0.0), 1.0)
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + np.cos(np.pi * frac))


# ---------------------------------------------------------------------------
# training and prediction


def train_model(model: HoiModel, dataset, split=None, seed: int = 0) -> list:
    """One optimizer step per training image visit, cosine learning rate.

    Returns history rows (step, loss, lr).  Image order reshuffles each pass.
    """
    s = model.settings
    unseen = set(split.unseen) if split is not None else set()
    opt = AdamW(model.params, s.weight_decay)
    order_rng = Rng(seed).spawn("train-order")
    noise_rng = Rng(seed).spawn("train-noise")
    train_ids = dataset.train_images
    if not train_ids:
        raise DataError("train_model: dataset has no training images")
    gts_map = dataset.gts_by_image(train_ids)
    history = []
    perm = np.zeros(0, dtype=np.int64)
    n = len(train_ids)
    for step in range(s.steps):
        if step % n == 0:
            perm = order_rng.spawn(step // n).permutation(n)
        image_id = train_ids[int(perm[step % n])]
        lr = cosine_lr(step, s.steps, s.lr, s.lr_final_scale)
        instances = dataset.detections.get(image_id, [])
        pairs = candidate_pairs(instances, s.score_threshold)
        if not pairs:
            history.append((step, 0.0, lr))
            continue
        if s.resample_noise:
            model.noise = noise_rng.spawn(step).normal(model.noise.shape)
        targets = assign_targets(pairs, instances, gts_map.get(image_id, []),
                                 model.triplets, unseen, model.n_verbs, s.assign_iou)
        loss, grads = image_loss_and_grads(model, dataset.features(image_id),
                                           instances, pairs, targets)
        opt.step(grads, lr)
        history.append((step, loss, lr))
    return history


def predict_dataset(model: HoiModel, dataset, image_ids=None) -> list:
    """Scored triplet predictions for every candidate pair of every image.

    The triplet score is detection confidence times the fused verb
    probability; only triplets whose object class matches the pair appear.
    """
    s = model.settings
    if image_ids is None:
        image_ids = dataset.test_images
    by_object: dict = {}
    for tid, (_, obj) in enumerate(model.triplets):
        by_object.setdefault(int(obj), []).append(tid)
    rows = []
    for image_id in image_ids:
        instances = dataset.detections.get(int(image_id), [])
        pairs = candidate_pairs(instances, s.score_threshold)
        if not pairs:
            continue
        hoi, _ = image_logits(model, dataset.features(image_id), instances, pairs)
        prob = _sigmoid(hoi)
        for p, (hi, oi) in enumerate(pairs):
            s_h = instances[hi]["score"]
            s_o = instances[oi]["score"]
            for tid in by_object.get(int(instances[oi]["class_id"]), []):
                verb = int(model.triplets[tid, 0])
                rows.append({
                    "image_id": int(image_id),
                    "human_box": np.asarray(instances[hi]["box"], dtype=np.float64),
                    "object_box": np.asarray(instances[oi]["box"], dtype=np.float64),
                    "triplet_id": tid,
                    "score": float(s_h * s_o * prob[p, verb]),
                })
    return rows


# ---------------------------------------------------------------------------
# checkpoints

_BUFFER_KEYS = ("class_tokens", "stat_input", "sigma_norm", "noise",
                "object_labels", "w_out")


def save_checkpoint(dir_path: str | Path, model: HoiModel) -> None:
    """Manifest plus one tensor file per parameter and buffer."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    params_index = {}
    for key in sorted(model.params):
        fname = key.replace(".", "_") + ".vdt1"
        write_vdt1(out / fname, model.params[key])
        params_index[key] = fname
    buffers_index = {}
    for key in _BUFFER_KEYS:
        fname = "buf_" + key + ".vdt1"
        write_vdt1(out / fname, getattr(model, key))
        buffers_index[key] = fname
    settings = asdict(model.settings)
    settings["branches"] = list(model.settings.branches)
    manifest = {
        "format": "vdrp-checkpoint",
        "settings": settings,
        "encoder_seed": model.encoder.seed,
        "image_size": [int(v) for v in model.image_size],
        "feature_stride": model.feature_stride,
        "triplets": model.triplets.tolist(),
        "params": params_index,
        "buffers": buffers_index,
    }
    atomic_write_text(out / "manifest.json",
                      json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(dir_path: str | Path, bank: ConceptBank) -> HoiModel:
    root = Path(dir_path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{root}: not a checkpoint directory (no manifest.json)")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: bad json: {exc}") from exc
    if manifest.get("format") != "vdrp-checkpoint":
        raise DataError(f"{manifest_path}: unexpected format tag {manifest.get('format')!r}")
    settings = PipelineSettings(**manifest["settings"])
    params = {k: read_vdt1(root / f) for k, f in manifest["params"].items()}
    buffers = {k: read_vdt1(root / f) for k, f in manifest["buffers"].items()}
    missing = set(_BUFFER_KEYS) - set(buffers)
    if missing:
        raise DataError(f"{root}: checkpoint missing buffers {sorted(missing)}")
    encoder = SyntheticTextEncoder(int(manifest["encoder_seed"]), settings.n_ctx,
                                   settings.d_t, settings.d)
    model = HoiModel(
        settings=settings,
        params=params,
        encoder=encoder,
        class_tokens=buffers["class_tokens"],
        stat_input=buffers["stat_input"],
        sigma_norm=buffers["sigma_norm"],
        noise=buffers["noise"],
        object_labels=buffers["object_labels"],
        w_out=buffers["w_out"],
        bank=bank,
        triplets=np.asarray(manifest["triplets"], dtype=np.int64),
        image_size=tuple(manifest["image_size"]),
        feature_stride=float(manifest["feature_stride"]),
    )
    if bank.n_verbs != model.n_verbs or bank.dim != settings.d:
        raise DataError("load_checkpoint: concept bank does not match checkpoint")
    return model
