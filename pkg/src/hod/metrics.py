"""Zero-shot evaluation: retrieval mAP/nDCG, recall@k, multiple choice, classification."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError


def _ranking(scores: np.ndarray) -> np.ndarray:
    """Gallery indices sorted by descending score; ties keep the lower index."""
    return np.argsort(-scores, kind="stable")


def retrieval_metrics(
    sim: np.ndarray, rel: np.ndarray, binarize_threshold: float = 0.0
) -> dict[str, float]:
    """Mean average precision and nDCG over a query-by-gallery score matrix.

    AP uses relevance binarized at ``rel > binarize_threshold``; nDCG uses
    the graded relevance directly with a log2(rank+1) discount. Queries
    with no binary positive are excluded from mAP (counted and warned);
    queries with all-zero relevance are likewise excluded from nDCG.
    """
    sim = np.asarray(sim, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    if sim.shape != rel.shape or sim.ndim != 2:
        raise ShapeError(f"scores {sim.shape} and relevance {rel.shape} must match as [Q, G]")
    if (rel < 0).any():
        raise DataError("relevance grades must be non-negative")

    ap_values = []
    ndcg_values = []
    skipped = 0
    for q in range(sim.shape[0]):
        order = _ranking(sim[q])
        binary = rel[q] > binarize_threshold
        n_pos = int(binary.sum())
        if n_pos == 0:
            skipped += 1
        else:
            hits = binary[order]
            precision_at = np.cumsum(hits) / (np.arange(hits.size) + 1.0)
            ap_values.append(float(precision_at[hits].sum() / n_pos))
        if rel[q].sum() > 0:
            discounts = 1.0 / np.log2(np.arange(rel.shape[1]) + 2.0)
            dcg = float((rel[q][order] * discounts).sum())
            ideal = float((np.sort(rel[q])[::-1] * discounts).sum())
            ndcg_values.append(dcg / ideal)
    if skipped:
        warnings.warn(f"{skipped} queries had no positive and were excluded from mAP")
    if not ap_values:
        raise DataError("no query has a positive entry; retrieval metrics undefined")
    return {
        "map": float(np.mean(ap_values)),
        "ndcg": float(np.mean(ndcg_values)),
        "skipped_queries": skipped,
    }


def recall_at_k(sim: np.ndarray, k: int = 1) -> dict[str, float]:
    """Identity-paired recall@k in both directions over a square score matrix."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ShapeError(f"recall@k expects a square pairing matrix, got {sim.shape}")
    n = sim.shape[0]

    def direction(mat):
        hits = 0
        for i in range(n):
            top = _ranking(mat[i])[:k]
            hits += int(i in top)
        return hits / n

    return {f"v2t_r@{k}": direction(sim), f"t2v_r@{k}": direction(sim.T)}


def mcq_accuracy(groups: Sequence[tuple[np.ndarray, np.ndarray, int]]) -> float:
    """Accuracy of picking the right candidate out of five by dot product.

    Each group is (query embedding [D], candidate embeddings [5, D],
    answer index). Ties resolve to the lowest candidate index.
    """
    if not groups:
        raise DataError("no multiple-choice groups given")
    correct = 0
    for query, candidates, answer in groups:
        candidates = np.asarray(candidates, dtype=np.float64)
        if candidates.shape[0] != 5:
            raise ShapeError(f"expected 5 candidates per group, got {candidates.shape[0]}")
        if not 0 <= answer < 5:
            raise DataError(f"answer index {answer} out of range")
        predicted = int(np.argmax(candidates @ np.asarray(query, dtype=np.float64)))
        correct += int(predicted == answer)
    return correct / len(groups)


def zeroshot_classify(e_v: np.ndarray, class_embeddings: np.ndarray) -> int:
    """Index of the class text most similar to the clip embedding (ties to lowest)."""
    class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
    if class_embeddings.ndim != 2 or class_embeddings.shape[0] == 0:
        raise ConfigError("need at least one class embedding")
    return int(np.argmax(class_embeddings @ np.asarray(e_v, dtype=np.float64)))
