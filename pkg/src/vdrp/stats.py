"""Per-verb feature statistics used to condition prompt construction.

Instance embeddings are grouped by verb id; each verb gets a per-dimension
mean and population variance, then both are averaged across a small semantic
group of similar verbs so rare verbs borrow statistics from neighbors.
Also holds the pairwise diversity measures used by the analysis command.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import ensure_matrix, ensure_vector, normalize_rows
from .errors import DataError, DegenerateInputWarning, DimensionError, ParameterError

__all__ = [
    "per_verb_moments",
    "semantic_groups",
    "group_average",
    "diversity_score",
    "interclass_divergence",
    "medoid_index",
]


def per_verb_moments(embeddings, verb_ids, n_verbs: int):
    """Per-verb mean and population variance of instance embeddings.

    Returns (means, variances, counts) with shapes (V, d), (V, d), (V,).
    Verbs with no instances get zero rows and a warning.
    """
    x = ensure_matrix(embeddings, name="per_verb_moments: embeddings")
    ids = np.asarray(verb_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != x.shape[0]:
        raise DimensionError("per_verb_moments: verb_ids must align with embedding rows")
    if n_verbs <= 0:
        raise ParameterError("per_verb_moments: n_verbs must be positive")
    if ids.size and (ids.min() < 0 or ids.max() >= n_verbs):
        raise DataError(f"per_verb_moments: verb id outside [0, {n_verbs})")
    d = x.shape[1]
    means = np.zeros((n_verbs, d))
    variances = np.zeros((n_verbs, d))
    counts = np.bincount(ids, minlength=n_verbs).astype(np.int64)
    for v in range(n_verbs):
        if counts[v] == 0:
            continue
        rows = x[ids == v]
        means[v] = rows.mean(axis=0)
        variances[v] = rows.var(axis=0)
    if np.any(counts == 0):
        missing = int(np.count_nonzero(counts == 0))
        warnings.warn(
            f"per_verb_moments: {missing} verbs have no instances, using zero statistics",
            DegenerateInputWarning,
        )
    return means, variances, counts


def semantic_groups(label_embeddings, group_size: int) -> np.ndarray:
    """Each verb's group: itself plus its most similar verbs by label cosine.

    Ties are broken toward the lower verb id.  Returns (V, group_size) ids.
    """
    labels = ensure_matrix(label_embeddings, name="semantic_groups: labels")
    v = labels.shape[0]
    if not 1 <= group_size <= v:
        raise ParameterError(f"semantic_groups: group_size must be in [1, {v}], got {group_size}")
    unit = normalize_rows(labels, name="semantic_groups")
    sims = unit @ unit.T
    groups = np.empty((v, group_size), dtype=np.int64)
    ids = np.arange(v)
    for i in range(v):
        others = ids[ids != i]
        # lexsort keys run last-to-first: similarity desc, then id asc
        order = others[np.lexsort((others, -sims[i, others]))]
        groups[i, 0] = i
        groups[i, 1:] = order[: group_size - 1]
    return groups


def group_average(values, groups, counts=None) -> np.ndarray:
    """Average rows of ``values`` over each group's members.

    Members with a zero instance count are skipped; a group with no counted
    member falls back to a zero row with a warning.
    """
    vals = ensure_matrix(values, name="group_average: values")
    gr = np.asarray(groups, dtype=np.int64)
    if gr.ndim != 2 or gr.shape[0] != vals.shape[0]:
        raise DimensionError("group_average: groups must be (V, group_size) aligned with values")
    if gr.size and (gr.min() < 0 or gr.max() >= vals.shape[0]):
        raise DataError("group_average: group member id out of range")
    if counts is None:
        counts = np.ones(vals.shape[0], dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    out = np.zeros_like(vals)
    empty = 0
    for i in range(vals.shape[0]):
        members = gr[i][counts[gr[i]] > 0]
        if members.size == 0:
            empty += 1
            continue
        out[i] = vals[members].mean(axis=0)
    if empty:
        warnings.warn(
            f"group_average: {empty} groups have no populated member, using zeros",
            DegenerateInputWarning,
        )
    return out


def diversity_score(embeddings) -> float:
    """Mean of (1 - cosine) over unordered pairs of rows."""
    x = ensure_matrix(embeddings, name="diversity_score")
    n = x.shape[0]
    if n < 2:
        warnings.warn("diversity_score: fewer than two rows, returning 0.0", DegenerateInputWarning)
        return 0.0
    unit = normalize_rows(x, name="diversity_score")
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    iu = np.triu_indices(n, k=1)
    return float(np.mean(1.0 - sims[iu]))


def interclass_divergence(prototypes) -> float:
    """Mean of (1 - cosine) over unordered pairs of class prototypes."""
    return diversity_score(prototypes)


def medoid_index(embeddings) -> int:
    """Row maximizing total cosine to all rows; ties keep the lowest index."""
    x = ensure_matrix(embeddings, name="medoid_index")
    if x.shape[0] == 0:
        raise DimensionError("medoid_index: empty input")
    unit = normalize_rows(x, name="medoid_index")
    totals = (unit @ unit.T).sum(axis=1)
    return int(np.argmax(totals))
