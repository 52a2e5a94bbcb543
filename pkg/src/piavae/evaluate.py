"""Ranking metrics over fold-in/holdout users and activity-stratified reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import InteractionMatrix, SplitDataset
from .errors import MetricError

logger = logging.getLogger(__name__)

DEFAULT_STRATA_EDGES = (5, 10, 50, 100)


def _top_k(scores: np.ndarray, fold_in, k: int) -> np.ndarray:
    """Indices of the k best scores, fold-in excluded, ties broken by
    ascending item index (stable sort on the negated scores)."""
    masked = np.array(scores, dtype=np.float64, copy=True)
    fold = np.fromiter(fold_in, dtype=np.int64) if len(fold_in) else np.zeros(0, np.int64)
    masked[fold] = -np.inf
    order = np.argsort(-masked, kind="stable")
    return order[:k]


def _check_sets(holdout, fold_in, k: int):
    if k < 1:
        raise ValueError("k must be >= 1")
    holdout = set(int(i) for i in holdout)
    fold_in = set(int(i) for i in fold_in)
    if not holdout:
        raise MetricError("holdout set is empty")
    if holdout & fold_in:
        raise MetricError("fold-in and holdout sets overlap")
    return holdout, fold_in


def recall_at_k(scores: np.ndarray, holdout, fold_in, k: int) -> float:
    """|top-k hits| / min(k, |holdout|)."""
    holdout, fold_in = _check_sets(holdout, fold_in, k)
    top = _top_k(scores, fold_in, k)
    hits = sum(1 for i in top if int(i) in holdout)
    return hits / min(k, len(holdout))


def ndcg_at_k(scores: np.ndarray, holdout, fold_in, k: int) -> float:
    """Binary-relevance DCG@k normalized by the ideal prefix its length."""
    holdout, fold_in = _check_sets(holdout, fold_in, k)
    top = _top_k(scores, fold_in, k)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = sum(discounts[r] for r, i in enumerate(top) if int(i) in holdout)
    ideal = min(k, len(holdout))
    idcg = float(np.sum(discounts[:ideal]))
    return float(dcg / idcg)


@dataclass
class MetricReport:
    """Per-K recall and NDCG means with optional activity strata."""

    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users: int
    strata: dict[str, "MetricReport"] | None = None

    def to_dict(self) -> dict:
        out = {
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "n_users": self.n_users,
        }
        if self.strata is not None:
            out["strata"] = {name: r.to_dict() for name, r in self.strata.items()}
        return out


def per_user_metrics(scores: np.ndarray, fold: InteractionMatrix,
                     hold: InteractionMatrix,
                     k_list: list[int]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """(recall, ndcg) arrays over users for each K."""
    out = {}
    for k in k_list:
        rec = np.zeros(fold.n_users)
        ndcg = np.zeros(fold.n_users)
        for u in range(fold.n_users):
            holdout = set(hold.row(u).tolist())
            fold_in = set(fold.row(u).tolist())
            rec[u] = recall_at_k(scores[u], holdout, fold_in, k)
            ndcg[u] = ndcg_at_k(scores[u], holdout, fold_in, k)
        out[k] = (rec, ndcg)
    return out


def _bucket_label(lo: int, hi: int | None) -> str:
    return f"[{lo}-{hi}]" if hi is not None else f"[{lo}+]"


def bucket_users(counts: np.ndarray, edges) -> dict[str, np.ndarray]:
    """Map bucket labels to user-index arrays.

    Edges (a, b, c, d) produce [a-b], [b+1-c], [c+1-d] and [d+] buckets,
    following the usual activity-group table layout. Users below the first
    edge fall in no bucket.
    """
    edges = sorted(int(e) for e in edges)
    if len(edges) < 2:
        raise ValueError("need at least two bucket edges")
    buckets: dict[str, np.ndarray] = {}
    lo = edges[0]
    for hi in edges[1:]:
        label = _bucket_label(lo, hi)
        buckets[label] = np.flatnonzero((counts >= lo) & (counts <= hi))
        lo = hi + 1
    buckets[_bucket_label(edges[-1], None)] = np.flatnonzero(counts > edges[-1])
    return buckets


def _aggregate(per_k: dict, users: np.ndarray) -> MetricReport:
    recall = {k: float(np.mean(rec[users])) for k, (rec, _) in per_k.items()}
    ndcg = {k: float(np.mean(nd[users])) for k, (_, nd) in per_k.items()}
    return MetricReport(recall=recall, ndcg=ndcg, n_users=int(users.size))


def stratified_report(params, split: SplitDataset, k_list: list[int],
                      bucket_edges=DEFAULT_STRATA_EDGES,
                      part: str = "test") -> MetricReport:
    """Overall and per-activity-bucket means over held-out users.

    Users are bucketed by their fold-in interaction count; empty buckets
    are omitted with a log note.
    """
    from .model import score_matrix

    fold = getattr(split, f"{part}_fold_in")
    hold = getattr(split, f"{part}_holdout")
    scores = score_matrix(params, fold)
    per_k = per_user_metrics(scores, fold, hold, list(k_list))
    all_users = np.arange(fold.n_users)
    report = _aggregate(per_k, all_users)
    counts = fold.row_lengths()
    strata = {}
    for label, users in bucket_users(counts, bucket_edges).items():
        if users.size == 0:
            logger.info("stratum %s is empty; omitted", label)
            continue
        strata[label] = _aggregate(per_k, users)
    report.strata = strata
    return report
