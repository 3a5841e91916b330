"""Concept banks and region-conditioned prompt refinement.

Each verb carries a small bank of concept embeddings per region route (human,
object, union).  At classification time the bank is scored against the actual
region feature, the scores pass through a simplex weighting, and the weighted
concept centroid is added onto the verb's prompt.  Banks stay frozen; the
backward pass routes gradient into both the prompt and the region feature.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import atomic_write_text, ensure_matrix, ensure_vector
from .errors import DataError, DegenerateInputWarning, DimensionError
from .simplex import retrieve_weights, retrieve_weights_vjp

__all__ = [
    "ROUTES",
    "ConceptBank",
    "load_concepts",
    "save_concepts",
    "refine_prompts",
    "refine_prompts_backward",
]

ROUTES = ("human", "object", "union")


@dataclass
class ConceptBank:
    """Per-route concept arrays of shape (V, K, d) plus their texts."""

    embeddings: dict
    texts: dict

    @property
    def n_verbs(self) -> int:
        return self.embeddings[ROUTES[0]].shape[0]

    @property
    def k(self) -> int:
        return self.embeddings[ROUTES[0]].shape[1]

    @property
    def dim(self) -> int:
        return self.embeddings[ROUTES[0]].shape[2]

    def unit(self, route: str) -> np.ndarray:
        c = self.embeddings[route]
        return c / np.linalg.norm(c, axis=2, keepdims=True)


def save_concepts(path: str | Path, bank: ConceptBank) -> None:
    payload = {}
    for v in range(bank.n_verbs):
        entry = {}
        for route in ROUTES:
            entry[route] = [
                {"text": bank.texts[route][v][k], "embedding": bank.embeddings[route][v, k].tolist()}
                for k in range(bank.k)
            ]
        payload[str(v)] = entry
    atomic_write_text(path, json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def load_concepts(path: str | Path, n_verbs: int, dim: int) -> ConceptBank:
    """Load and validate a concept bank file.

    Requires every verb id, every route, a uniform bank size, and nonzero
    embeddings of the expected width.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot parse concept file: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError(f"{path}: top level must be an object keyed by verb id")
    k_ref = None
    embeddings = {route: [] for route in ROUTES}
    texts = {route: [] for route in ROUTES}
    for v in range(n_verbs):
        entry = raw.get(str(v))
        if entry is None:
            raise DataError(f"{path}: missing verb id {v}")
        for route in ROUTES:
            items = entry.get(route)
            if not isinstance(items, list) or not items:
                raise DataError(f"{path}: verb {v} route {route!r} must be a non-empty list")
            if k_ref is None:
                k_ref = len(items)
            elif len(items) != k_ref:
                raise DataError(f"{path}: verb {v} route {route!r} has {len(items)} concepts, expected {k_ref}")
            vecs, labels = [], []
            for item in items:
                try:
                    emb = ensure_vector(item.get("embedding"), dim=dim,
                                        name=f"{path}: concept embedding")
                except DimensionError as exc:
                    raise DataError(str(exc)) from exc
                if float(np.linalg.norm(emb)) == 0.0:
                    raise DataError(f"{path}: zero-norm concept embedding for verb {v} route {route!r}")
                vecs.append(emb)
                labels.append(str(item.get("text", "")))
            embeddings[route].append(np.stack(vecs))
            texts[route].append(labels)
    return ConceptBank(
        embeddings={r: np.stack(embeddings[r]) for r in ROUTES},
        texts=texts,
    )


def refine_prompts(prompts, x, concepts: np.ndarray, gamma: float,
                   mode: str = "sparsemax", tau: float = 0.0,
                   temperature: float = 1.0, k: int = 3):
    """Add each verb's retrieved concept centroid onto its prompt.

    ``concepts`` is the (V, K, d) bank for one route, ``x`` the region
    feature it is scored against.  A zero-norm region feature skips the
    refinement entirely.  Returns (refined, cache).
    """
    p = ensure_matrix(prompts, name="refine_prompts: prompts")
    xv = ensure_vector(x, dim=p.shape[1], name="refine_prompts: x")
    c = np.asarray(concepts, dtype=np.float64)
    if c.ndim != 3 or c.shape[0] != p.shape[0] or c.shape[2] != p.shape[1]:
        raise DimensionError(f"refine_prompts: concepts shape {c.shape} does not match prompts {p.shape}")
    if float(gamma) == 0.0:
        # exact no-op so the unrefined arm is reproduced bit for bit
        return p.copy(), {"skip": True, "shape": c.shape}
    xn = float(np.linalg.norm(xv))
    if xn == 0.0:
        warnings.warn("refine_prompts: zero-norm region feature, skipping augmentation",
                      DegenerateInputWarning)
        return p.copy(), {"skip": True, "shape": c.shape}
    unit_c = c / np.linalg.norm(c, axis=2, keepdims=True)
    xhat = xv / xn
    scores = unit_c @ xhat
    weights = np.stack([
        retrieve_weights(scores[v], mode, tau=tau, temperature=temperature, k=k)
        for v in range(c.shape[0])
    ])
    centroid = np.einsum("vk,vkd->vd", weights, c)
    cache = {
        "skip": False, "gamma": float(gamma), "mode": mode, "tau": tau,
        "temperature": temperature, "k": k, "scores": scores, "unit_c": unit_c,
        "concepts": c, "xhat": xhat, "xn": xn,
    }
    return p + float(gamma) * centroid, cache


def refine_prompts_backward(cache, d_refined):
    """Gradients (d_prompts, d_x) of a loss through ``refine_prompts``."""
    g = np.asarray(d_refined, dtype=np.float64)
    if cache["skip"]:
        return g.copy(), np.zeros(cache["shape"][2])
    gamma = cache["gamma"]
    c = cache["concepts"]
    scores = cache["scores"]
    d_centroid = gamma * g
    d_weights = np.einsum("vd,vkd->vk", d_centroid, c)
    d_scores = np.stack([
        retrieve_weights_vjp(scores[v], d_weights[v], cache["mode"], tau=cache["tau"],
                             temperature=cache["temperature"], k=cache["k"])
        for v in range(c.shape[0])
    ])
    unit_c = cache["unit_c"]
    xhat = cache["xhat"]
    xn = cache["xn"]
    # d cos(x, c)/dx = (c_unit - s * x_unit) / ||x||
    lead = np.einsum("vk,vkd->d", d_scores, unit_c)
    mixed = float((d_scores * scores).sum())
    d_x = (lead - mixed * xhat) / xn
    return g.copy(), d_x
