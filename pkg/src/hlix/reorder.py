"""Workload-driven sibling reordering.

Sibling order only influences ranked (k-NN) traversals: they descend children
in stored order and every early find tightens the pruning bound, so siblings
whose subtrees hold the answers should come first. Set-style filters read a
node set that is a pure function of the predicate and cost the same under any
order. Each child is therefore scored by result credit: how many ranked
results of a training workload its subtree contained. Children are re-sorted
by descending credit (stable, so uncredited children keep their relative
order), then runs of equal credit small enough to enumerate are refined by
trying permutations on a stride sample of the workload; a candidate
permutation is kept only when a full-workload recount strictly reduces
scanned nodes. The final order is whichever of baseline, sorted, or refined
scanned the fewest nodes over the full workload, so the pass is deterministic
and never worse on the workload it was trained on. Exact results are
unaffected by sibling order; only traversal cost moves.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .engine import exec_query
from .tree import ClusterTree

log = logging.getLogger(__name__)


@dataclass
class ReorderReport:
    queries: int = 0
    pre_nodes: int = 0
    post_nodes: int = 0
    pre_seconds: float = 0.0
    post_seconds: float = 0.0
    permutations_evaluated: int = 0
    groups_refined: int = 0
    reverted: bool = False


def _run_workload(tree: ClusterTree, queries,
                  credit: np.ndarray | None = None) -> tuple[int, float]:
    """Total scanned nodes and wall seconds over the workload; optionally
    credits each node whose subtree held a ranked result."""
    inv = None
    if credit is not None:
        inv = np.full(tree.dataset.m, -1, dtype=np.int64)
        for nd in tree.nodes:
            if nd.is_leaf:
                inv[nd.members] = nd.nid
    tree.visit_counts[:] = 0
    total = 0
    t0 = time.perf_counter()
    for hq in queries:
        res, trace = exec_query(tree, hq)
        total += trace.nodes_scanned
        if credit is not None and res.kind == "ranked":
            for rid in res.ids:
                nid = int(inv[rid])
                while nid >= 0:
                    credit[nid] += 1
                    nid = tree.nodes[nid].parent
    return total, time.perf_counter() - t0


def _snapshot(tree: ClusterTree) -> dict[int, list[int]]:
    return {nd.nid: list(nd.children) for nd in tree.nodes if not nd.is_leaf}


def _apply(tree: ClusterTree, orders: dict[int, list[int]]) -> None:
    for nd in tree.nodes:
        if not nd.is_leaf:
            nd.children = list(orders[nd.nid])
    tree.invalidate_cache()


def reorder_nodes(tree: ClusterTree, queries, perm_cap: int = 5,
                  perm_budget: int = 200, sample_cap: int = 40) -> ReorderReport:
    """Mutates the child order of `tree` in place; returns what changed."""
    report = ReorderReport(queries=len(queries))
    baseline = _snapshot(tree)

    credit = np.zeros(len(tree.nodes), dtype=np.int64)
    pre_nodes, pre_secs = _run_workload(tree, queries, credit)
    report.pre_nodes, report.pre_seconds = pre_nodes, pre_secs

    if len(queries) > sample_cap:
        step = len(queries) / sample_cap
        sample = [queries[int(i * step)] for i in range(sample_cap)]
    else:
        sample = list(queries)

    for nd in tree.nodes:
        if not nd.is_leaf and len(nd.children) > 1:
            nd.children.sort(key=lambda c: -credit[c])
    tree.invalidate_cache()
    best_nodes, best_secs = _run_workload(tree, queries)
    best_orders, best_stage = _snapshot(tree), 1
    if pre_nodes <= best_nodes:
        best_nodes, best_secs, best_orders, best_stage = (pre_nodes, pre_secs,
                                                          baseline, 0)

    # enumerate permutations inside equal-credit runs, deepest nodes first;
    # explore on the sample, accept only on a full-workload recount
    evals = 0
    sample_nodes, _ = _run_workload(tree, sample)
    for nd in sorted((n for n in tree.nodes if not n.is_leaf and len(n.children) > 1),
                     key=lambda n: -n.depth):
        kids = nd.children
        i = 0
        while i < len(kids):
            j = i
            while j + 1 < len(kids) and credit[kids[j + 1]] == credit[kids[i]]:
                j += 1
            g = j - i + 1
            if 2 <= g <= perm_cap and credit[kids[i]] > 0:
                if evals + math.factorial(g) - 1 > perm_budget:
                    i = j + 1
                    continue
                report.groups_refined += 1
                group = list(kids[i:j + 1])
                best_order, group_nodes = group, sample_nodes
                for perm in itertools.permutations(group):
                    perm = list(perm)
                    if perm == group:
                        continue
                    kids[i:j + 1] = perm
                    tree.invalidate_cache()
                    evals += 1
                    cost, _ = _run_workload(tree, sample)
                    if cost < group_nodes:
                        best_order, group_nodes = perm, cost
                kids[i:j + 1] = best_order
                tree.invalidate_cache()
                if best_order != group:
                    full, secs = _run_workload(tree, queries)
                    if full < best_nodes:
                        best_nodes, best_secs = full, secs
                        best_orders, best_stage = _snapshot(tree), 2
                        sample_nodes = group_nodes
                    else:
                        kids[i:j + 1] = group
                        tree.invalidate_cache()
            i = j + 1
    report.permutations_evaluated = evals

    _apply(tree, best_orders)
    report.post_nodes, report.post_seconds = best_nodes, best_secs
    report.reverted = best_stage == 0
    log.info("reorder: scanned %d -> %d nodes over %d queries (%d permutations%s)",
             pre_nodes, best_nodes, len(queries), evals,
             ", reverted" if report.reverted else "")
    return report
