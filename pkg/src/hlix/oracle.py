"""Full-scan reference executor. Ground truth for every query the engine runs.

Deliberately simple: every operand scans all m records with vectorized numpy.
The indexed engine is correct iff it reproduces these results exactly.
"""

from __future__ import annotations

import numpy as np

from .query import APPROX, BasicQuery, HybridQuery, NE, NR, QueryError, ResultSet, VK, VR
from .schema import Dataset, NUMERIC, VECTOR


def validate_query(dataset: Dataset, hq: HybridQuery) -> None:
    for op in hq.ops:
        if op.attr not in dataset.schema:
            raise QueryError(f"unknown attribute {op.attr!r}")
        a = dataset.schema[op.attr]
        if op.kind in (NE, NR) and a.kind != NUMERIC:
            raise QueryError(f"{op.kind} needs a numeric attribute, {op.attr!r} is {a.kind}")
        if op.kind in (VK, VR):
            if a.kind != VECTOR:
                raise QueryError(f"{op.kind} needs a vector attribute, {op.attr!r} is {a.kind}")
            if len(op.q) != a.dim:
                raise QueryError(
                    f"query vector dim {len(op.q)} != attribute dim {a.dim} for {op.attr!r}")


def op_distances(dataset: Dataset, op: BasicQuery) -> np.ndarray:
    """Euclidean distance from op.q to every record's op.attr vector."""
    col = dataset.columns[op.attr]
    diff = col - op.qvec()[None, :]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def op_mask(dataset: Dataset, op: BasicQuery) -> np.ndarray:
    """Boolean qualification mask for a set-semantics operand (ne/nr/vr)."""
    if op.kind == NE:
        return dataset.columns[op.attr] == op.value
    if op.kind == NR:
        col = dataset.columns[op.attr]
        return (col >= op.lo) & (col <= op.hi)
    if op.kind == VR:
        return op_distances(dataset, op) <= op.r
    raise QueryError("vk has no qualification mask")


def top_k(dataset: Dataset, op: BasicQuery,
          candidates: np.ndarray | None = None) -> list[tuple[int, float]]:
    """k nearest records by (distance, id); optionally restricted to candidates."""
    d = op_distances(dataset, op)
    ids = np.arange(dataset.m, dtype=np.int64)
    if candidates is not None:
        ids = ids[candidates]
        d = d[candidates]
    if len(ids) == 0:
        return []
    k = min(op.k, len(ids))
    if k < len(ids):
        # keep every distance tie at the k boundary so the id tiebreak decides
        thresh = np.partition(d, k - 1)[k - 1]
        keep = np.flatnonzero(d <= thresh)
        ids, d = ids[keep], d[keep]
    order = np.lexsort((ids, d))[:k]
    return [(int(ids[i]), float(d[i])) for i in order]


def brute_force_query(dataset: Dataset, hq: HybridQuery) -> ResultSet:
    """Exact full-scan evaluation; approx mode is answered exactly here too."""
    validate_query(dataset, hq)
    if dataset.m == 0:
        if hq.is_ranked:
            return ResultSet.from_ranked([], provenance="oracle")
        return ResultSet.from_ids([], provenance="oracle")

    if hq.combine == "and":
        vk = hq.vk_op()
        mask = np.ones(dataset.m, dtype=bool)
        for op in hq.ops:
            if op.kind != VK:
                mask &= op_mask(dataset, op)
        if vk is None:
            return ResultSet.from_ids(np.flatnonzero(mask), provenance="oracle")
        pairs = top_k(dataset, vk, candidates=mask)
        return ResultSet.from_ranked(pairs, provenance="oracle")

    ids: set[int] = set()
    for op in hq.ops:
        if op.kind == VK:
            ids.update(rid for rid, _ in top_k(dataset, op))
        else:
            ids.update(int(i) for i in np.flatnonzero(op_mask(dataset, op)))
    return ResultSet.from_ids(ids, provenance="oracle")
