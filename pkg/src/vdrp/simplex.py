"""Retrieval weightings over similarity scores.

Four interchangeable score-to-weight maps: sparsemax (Euclidean projection
onto the probability simplex), thresholded sparsemax, tempered softmax, and
top-k restricted softmax.  Each has an exact vector-Jacobian product so
gradients can flow through retrieval.
"""

from __future__ import annotations

import numpy as np

from .core import as_f64, ensure_vector
from .errors import ParameterError

__all__ = [
    "sparsemax",
    "tau_sparsemax",
    "softmax",
    "top_k_softmax",
    "retrieve_weights",
    "retrieve_weights_vjp",
    "RETRIEVE_MODES",
]

RETRIEVE_MODES = ("sparsemax", "tau_sparsemax", "softmax", "top_k")


def sparsemax(scores) -> np.ndarray:
    """Project scores onto the probability simplex (sort-and-threshold form)."""
    z = ensure_vector(scores, name="sparsemax")
    if z.size == 0:
        raise ParameterError("sparsemax: empty score vector")
    z_sorted = np.sort(z)[::-1]
    cumsum = np.cumsum(z_sorted)
    ks = np.arange(1, z.size + 1, dtype=np.float64)
    support = 1.0 + ks * z_sorted > cumsum
    k = int(np.max(np.nonzero(support)[0])) + 1
    threshold = (cumsum[k - 1] - 1.0) / k
    return np.maximum(z - threshold, 0.0)


def tau_sparsemax(scores, tau: float) -> np.ndarray:
    """Sparsemax with small weights zeroed afterwards, without renormalizing."""
    if not 0.0 <= tau < 1.0:
        raise ParameterError(f"tau_sparsemax: tau must be in [0, 1), got {tau}")
    p = sparsemax(scores)
    out = p.copy()
    out[out < tau] = 0.0
    return out


def softmax(scores, temperature: float = 1.0) -> np.ndarray:
    z = ensure_vector(scores, name="softmax")
    if z.size == 0:
        raise ParameterError("softmax: empty score vector")
    if temperature <= 0.0:
        raise ParameterError(f"softmax: temperature must be positive, got {temperature}")
    shifted = (z - np.max(z)) / temperature
    e = np.exp(shifted)
    return e / np.sum(e)


def top_k_softmax(scores, k: int, temperature: float = 1.0) -> np.ndarray:
    """Softmax over the k largest scores, zero elsewhere; ties keep lower index.

    k larger than the score count falls back to a plain softmax.
    """
    z = ensure_vector(scores, name="top_k_softmax")
    if k < 1:
        raise ParameterError(f"top_k_softmax: k must be >= 1, got {k}")
    order = np.argsort(-z, kind="stable")
    keep = order[:min(k, z.size)]
    out = np.zeros_like(z)
    out[keep] = softmax(z[keep], temperature)
    return out


def retrieve_weights(scores, mode: str = "sparsemax", tau: float = 0.0,
                     temperature: float = 1.0, k: int = 3) -> np.ndarray:
    """Dispatch to one of the score-to-weight maps by name."""
    if mode == "sparsemax":
        return sparsemax(scores)
    if mode == "tau_sparsemax":
        return tau_sparsemax(scores, tau)
    if mode == "softmax":
        return softmax(scores, temperature)
    if mode == "top_k":
        return top_k_softmax(scores, k, temperature)
    raise ParameterError(f"unknown retrieval mode {mode!r}, expected one of {RETRIEVE_MODES}")


def _sparsemax_vjp(z: np.ndarray, grad: np.ndarray, tau: float) -> np.ndarray:
    # Support below means the projection support; thresholding only masks
    # which output entries feed gradient back, it does not move the offset.
    p = sparsemax(z)
    support = p > 0.0
    surviving = p >= tau if tau > 0.0 else support
    h = np.where(support & surviving, grad, 0.0)
    n_support = int(np.count_nonzero(support))
    out = h.copy()
    out[support] -= np.sum(h) / n_support
    return out


def _softmax_vjp(p: np.ndarray, grad: np.ndarray, temperature: float) -> np.ndarray:
    return p * (grad - float(p @ grad)) / temperature


def retrieve_weights_vjp(scores, grad_out, mode: str = "sparsemax", tau: float = 0.0,
                         temperature: float = 1.0, k: int = 3) -> np.ndarray:
    """Exact dL/dscores given dL/dweights, matching ``retrieve_weights``."""
    z = ensure_vector(scores, name="retrieve_weights_vjp")
    g = ensure_vector(grad_out, dim=z.shape[0], name="retrieve_weights_vjp: grad")
    if mode == "sparsemax":
        return _sparsemax_vjp(z, g, 0.0)
    if mode == "tau_sparsemax":
        if not 0.0 <= tau < 1.0:
            raise ParameterError(f"tau_sparsemax: tau must be in [0, 1), got {tau}")
        return _sparsemax_vjp(z, g, tau)
    if mode == "softmax":
        p = softmax(z, temperature)
        return _softmax_vjp(p, g, temperature)
    if mode == "top_k":
        if k < 1:
            raise ParameterError(f"top_k_softmax: k must be >= 1, got {k}")
        order = np.argsort(-z, kind="stable")
        keep = order[:min(int(k), z.size)]
        p_keep = softmax(z[keep], temperature)
        out = np.zeros_like(z)
        out[keep] = _softmax_vjp(p_keep, g[keep], temperature)
        return out
    raise ParameterError(f"unknown retrieval mode {mode!r}, expected one of {RETRIEVE_MODES}")
