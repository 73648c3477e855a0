"""Quality measures: clustering structure scores and query result scores."""

from __future__ import annotations

import numpy as np
from sklearn.metrics import (calinski_harabasz_score, normalized_mutual_info_score,
                             silhouette_score)

from .query import ResultSet


def cluster_metrics(points: np.ndarray, labels: np.ndarray,
                    ref_labels: np.ndarray | None = None,
                    sample_cap: int = 20000, seed: int = 0) -> dict:
    """Silhouette (sc), Calinski-Harabasz (ch), and, when reference labels are
    given, normalized mutual information (nmi). Needs >= 2 distinct labels."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if len(points) != len(labels):
        raise ValueError("points and labels length mismatch")
    if len(np.unique(labels)) < 2:
        raise ValueError("cluster metrics need at least 2 clusters")
    if len(points) > sample_cap:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(points), size=sample_cap, replace=False)
        # keep sampling until both clusters survive; cap guards degenerate labelings
        for _ in range(8):
            if len(np.unique(labels[idx])) >= 2:
                break
            idx = rng.choice(len(points), size=sample_cap, replace=False)
        pts, lab = points[idx], labels[idx]
    else:
        pts, lab = points, labels
    out = {
        "sc": float(silhouette_score(pts, lab)),
        "ch": float(calinski_harabasz_score(pts, lab)),
    }
    if ref_labels is not None:
        out["nmi"] = float(normalized_mutual_info_score(ref_labels, labels))
    return out


def recall_at_k(result: ResultSet, oracle: ResultSet, k: int) -> float:
    """|top-k result ids that appear in the oracle top-k| / k."""
    got = set(result.top(k))
    want = set(oracle.top(k))
    if k <= 0:
        raise ValueError("k must be >= 1")
    return len(got & want) / k


def accuracy(result: ResultSet, oracle: ResultSet) -> float:
    """|result ∩ oracle| / |oracle|; 1.0 when both are empty, 0.0 when only
    the oracle is empty."""
    want = oracle.id_set()
    got = result.id_set()
    if not want:
        return 1.0 if not got else 0.0
    return len(got & want) / len(want)


def result_metrics(result: ResultSet, oracle: ResultSet, k: int | None = None) -> dict:
    out = {"query_accuracy": accuracy(result, oracle)}
    if k is not None and result.kind == "ranked" and oracle.kind == "ranked":
        out["recall_at_k"] = recall_at_k(result, oracle, k)
    return out
