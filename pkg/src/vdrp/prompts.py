"""Variance-conditioned prompt construction over a frozen text encoder.

A shared learnable context block is modulated per verb by a small network fed
with that verb's group feature statistics, concatenated with the verb's class
token, pushed through the frozen encoder, then perturbed along a fixed noise
direction scaled by the verb's relative feature spread.  The backward pass is
exact, including the rank-one term from the output-std scale factor.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import Rng, ensure_matrix
from .errors import DegenerateInputWarning, DimensionError, ParameterError

__all__ = [
    "hash_embedding",
    "embed_names",
    "SyntheticTextEncoder",
    "variance_stat_input",
    "init_vdp_params",
    "build_prompts",
    "build_prompts_backward",
]


def hash_embedding(name: str, dim: int, seed: int, scale: float | None = None) -> np.ndarray:
    """Deterministic pseudo-embedding for a token name, about unit norm."""
    if dim <= 0:
        raise ParameterError("hash_embedding: dim must be positive")
    rng = Rng(seed).spawn("name:" + name)
    if scale is None:
        scale = 1.0 / np.sqrt(dim)
    return rng.normal((dim,)) * scale


def embed_names(names, dim: int, seed: int) -> np.ndarray:
    return np.stack([hash_embedding(n, dim, seed) for n in names])


class SyntheticTextEncoder:
    """Frozen two-layer tanh map from a token matrix to an output embedding.

    Stands in for a pretrained text tower: deterministic in its seed, never
    updated, and differentiable with respect to the input tokens.
    """

    def __init__(self, seed: int, n_ctx: int, d_t: int, d: int, hidden: int = 64):
        if min(n_ctx, d_t, d, hidden) <= 0:
            raise ParameterError("SyntheticTextEncoder: all dimensions must be positive")
        self.seed = int(seed)
        self.n_ctx = int(n_ctx)
        self.d_t = int(d_t)
        self.d = int(d)
        self.hidden = int(hidden)
        self.in_dim = (self.n_ctx + 1) * self.d_t
        rng = Rng(seed).spawn("text-encoder")
        self.w1 = rng.normal((self.in_dim, hidden)) / np.sqrt(self.in_dim)
        self.b1 = rng.normal((hidden,)) * 0.1
        # output scale keeps prompt norms near one so that retrieval-based
        # refinements are not drowned out by the raw prompt direction
        self.w2 = rng.normal((hidden, d)) * (0.35 / np.sqrt(hidden))
        self.b2 = rng.normal((d,)) * 0.035

    def token_embedding(self, name: str) -> np.ndarray:
        return hash_embedding(name, self.d_t, self.seed)

    def label_embedding(self, name: str) -> np.ndarray:
        return hash_embedding(name, self.d, self.seed)

    def encode(self, tokens: np.ndarray):
        """Encode (V, n_ctx+1, d_t) token stacks to (V, d); returns a cache."""
        t = np.asarray(tokens, dtype=np.float64)
        if t.ndim != 3 or t.shape[1] != self.n_ctx + 1 or t.shape[2] != self.d_t:
            raise DimensionError(
                f"encode: expected (V, {self.n_ctx + 1}, {self.d_t}), got {t.shape}"
            )
        flat = t.reshape(t.shape[0], self.in_dim)
        h = np.tanh(flat @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        return out, {"h": h, "shape": t.shape}

    def encode_backward(self, cache, d_out: np.ndarray) -> np.ndarray:
        h = cache["h"]
        dh = (d_out @ self.w2.T) * (1.0 - h * h)
        return (dh @ self.w1.T).reshape(cache["shape"])


def variance_stat_input(group_mean, group_var, mode: str = "variance"):
    """Assemble the modulation-network input and the relative-spread vector.

    Returns (stat_input, sigma_norm): sigma_norm is each verb's per-dimension
    std divided by its own mean std, zeros when a verb has no spread at all.
    """
    mean = ensure_matrix(group_mean, name="variance_stat_input: mean")
    var = ensure_matrix(group_var, rows=mean.shape[0], cols=mean.shape[1],
                        name="variance_stat_input: var")
    if np.any(var < 0.0):
        raise ParameterError("variance_stat_input: negative variance")
    if mode == "variance":
        stat = var.copy()
    elif mode == "mean_and_variance":
        stat = np.concatenate([mean, var], axis=1)
    else:
        raise ParameterError(f"unknown stat mode {mode!r}")
    sigma = np.sqrt(var)
    scale = sigma.mean(axis=1)
    flat = scale == 0.0
    if np.any(flat):
        warnings.warn(
            f"variance_stat_input: {int(flat.sum())} verbs have zero spread, perturbation disabled",
            DegenerateInputWarning,
        )
    safe = np.where(flat, 1.0, scale)
    sigma_norm = np.where(flat[:, None], 0.0, sigma / safe[:, None])
    return stat, sigma_norm


def init_vdp_params(rng: Rng, n_ctx: int, d_t: int, stat_dim: int,
                    hidden: int = 64, init_std: float = 0.02) -> dict:
    """Trainable prompt parameters: shared context plus the modulation net."""
    r = rng.spawn("vdp-init")
    return {
        "vdp.ctx": r.normal((n_ctx, d_t)) * init_std,
        "vdp.w1": r.normal((stat_dim, hidden)) / np.sqrt(stat_dim),
        "vdp.b1": np.zeros(hidden),
        "vdp.w2": r.normal((hidden, d_t)) / np.sqrt(hidden),
        "vdp.b2": np.zeros(d_t),
    }


def sample_noise(rng: Rng, n_verbs: int, d: int) -> np.ndarray:
    """Per-verb perturbation directions, drawn once and then held fixed."""
    return rng.spawn("vdp-noise").normal((n_verbs, d))


def build_prompts(params: dict, buffers: dict, encoder: SyntheticTextEncoder):
    """Forward pass producing one perturbed prompt embedding per verb.

    ``buffers`` carries the frozen inputs: ``class_tokens`` (V, d_t),
    ``stat_input`` (V, stat_dim), ``sigma_norm`` (V, d), ``noise`` (V, d),
    and scalars ``alpha`` and ``beta``.  Returns (prompts, cache).
    """
    ctx = params["vdp.ctx"]
    w1, b1, w2, b2 = params["vdp.w1"], params["vdp.b1"], params["vdp.w2"], params["vdp.b2"]
    class_tokens = ensure_matrix(buffers["class_tokens"], name="build_prompts: class_tokens")
    stat = ensure_matrix(buffers["stat_input"], name="build_prompts: stat_input")
    sigma_norm = ensure_matrix(buffers["sigma_norm"], name="build_prompts: sigma_norm")
    noise = ensure_matrix(buffers["noise"], name="build_prompts: noise")
    alpha = float(buffers["alpha"])
    beta = float(buffers["beta"])
    n_verbs = class_tokens.shape[0]
    if stat.shape[0] != n_verbs or noise.shape[0] != n_verbs:
        raise DimensionError("build_prompts: per-verb buffers disagree on verb count")
    if stat.shape[1] != w1.shape[0]:
        raise DimensionError(
            f"build_prompts: stat width {stat.shape[1]} != modulation input {w1.shape[0]}"
        )

    h1 = np.tanh(stat @ w1 + b1)
    delta = h1 @ w2 + b2
    ctx_block = ctx[None, :, :] + alpha * delta[:, None, :]
    tokens = np.concatenate([ctx_block, class_tokens[:, None, :]], axis=1)
    base, enc_cache = encoder.encode(tokens)

    centered = base - base.mean(axis=1, keepdims=True)
    std = np.sqrt((centered * centered).mean(axis=1))
    direction = noise * sigma_norm
    prompts = base + beta * direction * std[:, None]

    cache = {
        "h1": h1, "stat": stat, "alpha": alpha, "beta": beta,
        "enc_cache": enc_cache, "encoder": encoder, "n_ctx": ctx.shape[0],
        "centered": centered, "std": std, "direction": direction,
        "w2": w2,
    }
    return prompts, cache


def build_prompts_backward(cache, d_prompts: np.ndarray) -> dict:
    """Exact gradients of a scalar loss through ``build_prompts``."""
    g = np.asarray(d_prompts, dtype=np.float64)
    beta = cache["beta"]
    alpha = cache["alpha"]
    std = cache["std"]
    centered = cache["centered"]
    direction = cache["direction"]
    d = centered.shape[1]

    # prompts = base + beta*direction*std(base); std contributes a rank-one term
    coeff = beta * (g * direction).sum(axis=1)
    safe_std = np.where(std == 0.0, 1.0, std)
    dstd_dbase = centered / (d * safe_std[:, None])
    dstd_dbase[std == 0.0] = 0.0
    d_base = g + coeff[:, None] * dstd_dbase

    d_tokens = cache["encoder"].encode_backward(cache["enc_cache"], d_base)
    n_ctx = cache["n_ctx"]
    d_ctx = d_tokens[:, :n_ctx, :].sum(axis=0)
    d_delta = alpha * d_tokens[:, :n_ctx, :].sum(axis=1)

    h1 = cache["h1"]
    d_w2 = h1.T @ d_delta
    d_b2 = d_delta.sum(axis=0)
    d_h1 = d_delta @ cache["w2"].T
    d_pre = d_h1 * (1.0 - h1 * h1)
    d_w1 = cache["stat"].T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    return {
        "vdp.ctx": d_ctx,
        "vdp.w1": d_w1,
        "vdp.b1": d_b1,
        "vdp.w2": d_w2,
        "vdp.b2": d_b2,
    }
