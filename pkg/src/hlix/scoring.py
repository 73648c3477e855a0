"""Workload-aware scoring of candidate embedding matrices.

Each candidate is judged on three axes, min-max normalized across the
candidate set so the final score is comparable:
  s1  retrieval usefulness: mean(recall, accuracy) minus query time, measured
      by replaying a small top-k workload through an index built on the
      candidate's own features (budgeted approximate mode, exact ground truth)
  s2  cluster structure: silhouette of a k-means labelling of the features
  s3  distribution fidelity: 1 - normalized score of a user-supplied scalar
      where lower raw values mean closer to the reference distribution
Weights for absent axes are dropped and the rest renormalized to sum to 1."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .oracle import brute_force_query
from .query import APPROX, BasicQuery, EXACT, HybridQuery, VK
from .schema import Attribute, AttributeSchema, Dataset, VECTOR, assemble
from .transform import init_transform
from .tree import BuildConfig, build_index

log = logging.getLogger(__name__)


@dataclass
class CandidateScore:
    name: str
    s1: float | None
    s2: float
    s3: float | None
    score: float

    def row(self) -> list:
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        return [self.name, fmt(self.s1), f"{self.s2:.6f}", fmt(self.s3),
                f"{self.score:.6f}"]


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo < 1e-12:
        return np.full(len(values), 0.5)
    return (values - lo) / (hi - lo)


def _feature_dataset(feats: np.ndarray, name: str) -> Dataset:
    schema = AttributeSchema((Attribute("v0", VECTOR, feats.shape[1]),))
    return Dataset(schema, {"v0": np.ascontiguousarray(feats, dtype=np.float64)},
                   name=name)


def _workload_measures(feats: np.ndarray, pairs: list[tuple[int, int]],
                       seed: int) -> tuple[float, float, float]:
    """(mean recall, mean accuracy, mean seconds) for budgeted top-k replay."""
    ds = _feature_dataset(feats, "candidate")
    fm = assemble(ds)
    tf = init_transform(fm.matrix)
    base = tf.apply(fm.matrix)
    cfg = BuildConfig(min_leaf=64, move_per_level=False, move_iterations=0,
                      dpc_sample_cap=8192, seed=seed)
    tree = build_index(ds, tf, base, base, cfg)
    budget = max(1, int(np.ceil(0.25 * tree.total_leaves)))
    recalls, accs, times = [], [], []
    from .engine import exec_query
    for rid, k in pairs:
        op = BasicQuery(VK, "v0", q=tuple(feats[rid % len(feats)]), k=k)
        hq = HybridQuery((op,), "and", APPROX, budget)
        t0 = time.perf_counter()
        res, _ = exec_query(tree, hq)
        times.append(time.perf_counter() - t0)
        truth = brute_force_query(ds, HybridQuery((op,), "and", EXACT))
        hit = len(set(res.top(k)) & set(truth.top(k)))
        recalls.append(hit / max(1, min(k, len(truth.ids))))
        denom = max(1, len(truth.ids))
        accs.append(len(res.id_set() & truth.id_set()) / denom)
    return (float(np.mean(recalls)), float(np.mean(accs)), float(np.mean(times)))


def _structure_measure(feats: np.ndarray, kmeans_k: int, seed: int,
                       sample_cap: int = 20000) -> float:
    rng = np.random.default_rng(seed)
    X = feats
    if len(X) > sample_cap:
        X = X[np.sort(rng.choice(len(X), size=sample_cap, replace=False))]
    k = min(kmeans_k, max(2, len(X) - 1))
    labels = KMeans(n_clusters=k, n_init=4, random_state=seed).fit_predict(X)
    if len(np.unique(labels)) < 2:
        return -1.0
    return float(silhouette_score(X, labels))


def score_candidates(candidates: dict[str, np.ndarray],
                     weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
                     workload: list[tuple[int, int]] | None = None,
                     fidelity: dict[str, float] | None = None,
                     kmeans_k: int = 8, seed: int = 0) -> list[CandidateScore]:
    """Rank candidate feature matrices for a retrieval workload.

    candidates: name -> (m, d) float matrix (d may differ per candidate).
    workload:   optional (record index, k) pairs enabling the s1 axis.
    fidelity:   optional name -> raw scalar (lower is better) enabling s3;
                ignored unless supplied for every candidate.
    """
    if not candidates:
        raise ValueError("no candidates to score")
    names = sorted(candidates)
    for nm in names:
        f = np.asarray(candidates[nm], dtype=np.float64)
        if f.ndim != 2 or len(f) < 4:
            raise ValueError(f"candidate {nm!r} needs a (m>=4, d) matrix")
        candidates[nm] = f

    use_s1 = workload is not None and len(workload) > 0
    use_s3 = fidelity is not None and all(nm in fidelity for nm in names)
    if fidelity is not None and not use_s3:
        log.warning("fidelity scalars missing for some candidates; axis dropped")

    s2_raw = np.array([_structure_measure(candidates[nm], kmeans_k, seed)
                       for nm in names])
    s2 = _minmax(s2_raw) if len(names) > 1 else np.ones(1)

    s1 = None
    if use_s1:
        rec, acc, tm = [], [], []
        for nm in names:
            r, a, t = _workload_measures(candidates[nm], workload, seed)
            rec.append(r), acc.append(a), tm.append(t)
        s1 = (_minmax(np.array(rec)) + _minmax(np.array(acc))) / 2 \
            - _minmax(np.array(tm))

    s3 = None
    if use_s3:
        s3 = 1.0 - _minmax(np.array([fidelity[nm] for nm in names]))

    w1, w2, w3 = weights
    terms, ws = [], []
    if s1 is not None and w1 > 0:
        terms.append(s1), ws.append(w1)
    if w2 > 0:
        terms.append(s2), ws.append(w2)
    if s3 is not None and w3 > 0:
        terms.append(s3), ws.append(w3)
    if not terms:
        terms, ws = [s2], [1.0]
    wsum = sum(ws)
    total = sum(w / wsum * t for w, t in zip(ws, terms))

    out = []
    for i, nm in enumerate(names):
        out.append(CandidateScore(
            nm,
            float(s1[i]) if s1 is not None else None,
            float(s2[i]),
            float(s3[i]) if s3 is not None else None,
            float(total[i])))
    out.sort(key=lambda cs: (-cs.score, cs.name))
    return out
