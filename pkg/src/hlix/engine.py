"""Indexed query execution over the cluster tree.

Soundness model: vector predicates are anchored in the original space. For an
operand on vector attribute A, the set of original rows matching it maps under
the transform T into a slab around the affine subspace {(y - center) T :
y_A = q}. The subspace distance of an enhanced point is a linear image of the
original attribute offset, so it is Lipschitz in that offset with constant
sig_sub = |P T_A|_2 (the attribute block of T projected off the complementary
coordinates), never larger than sigma_max(T). Adding each node's recorded
movement drift, the engine can prune a node whenever every point its ball
could hold is provably outside the slab, and can restrict leaf scans to a band
of the key-sorted members. Every
surviving candidate is verified against the original record values, so leaf
model error and pruning slack can cost time but never correctness.

Node tests are evaluated once per query over the whole node arena (stacked
geometry arrays). Set-semantics traversal needs no stack at all: a node is
reached exactly when it and every ancestor pass their tests, so reachability
is the node mask and-folded down the depth levels, and the reached leaves'
members are verified in one vectorized pass. k-NN queries walk the tree
depth-first and verify leaf by leaf because the running kth-best distance
(tau) must tighten as candidates accumulate.

k-NN runs as depth-first branch and bound in child-list order: children the
current bound cannot exclude are popped in stored sibling order, which is what
makes the workload-driven reordering pass matter. Approx mode runs the same
traversal and stops after `budget` leaves, so the visited-leaf sequence for a
smaller budget is a prefix of a larger one and the full budget recovers the
exact answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracle import validate_query
from .query import (APPROX, BasicQuery, HybridQuery, NE, NR, QueryError,
                    ResultSet, VK, VR)
from .tree import ClusterTree, TreeNode


@dataclass
class ExecutionTrace:
    """Visited ids are collected as raw chunks during execution and folded
    into the public sets once by seal(), keeping the hot path allocation-free."""

    nodes_scanned: int = 0
    leaves_scanned: int = 0
    candidates_verified: int = 0
    cbr: float = 0.0
    visited_nodes: set = field(default_factory=set)
    visited_leaves: set = field(default_factory=set)
    _node_chunks: list = field(default_factory=list, repr=False)
    _leaf_chunks: list = field(default_factory=list, repr=False)

    def add_visits(self, node_ids, leaf_ids) -> None:
        self._node_chunks.append(np.asarray(node_ids, dtype=np.int64))
        self._leaf_chunks.append(np.asarray(leaf_ids, dtype=np.int64))

    def absorb(self, other: "ExecutionTrace") -> None:
        self._node_chunks.extend(other._node_chunks)
        self._leaf_chunks.extend(other._leaf_chunks)
        self.candidates_verified += other.candidates_verified

    def seal(self, total_leaves: int) -> None:
        if self._node_chunks:
            self.visited_nodes = set(np.concatenate(self._node_chunks).tolist())
            self.visited_leaves = set(np.concatenate(self._leaf_chunks).tolist())
        self.nodes_scanned = len(self.visited_nodes)
        self.leaves_scanned = len(self.visited_leaves)
        self.cbr = self.leaves_scanned / total_leaves if total_leaves else 0.0


class _OpCtx:
    """Per-operand precomputation against one tree. Cached on the tree by
    operand value, so hot queries skip all per-node geometry on re-execution
    (node geometry is immutable after the build)."""

    def __init__(self, tree: ClusterTree, op: BasicQuery):
        self.op = op
        self.sl = tree.attr_slice(op.attr)
        self.col = tree.dataset.columns[op.attr]
        self.node_sub = None    # per-node subspace distance, lazily computed
        self._tests = None      # per-node (mask, lb) contribution, lazily computed
        if op.kind in (VK, VR):
            self.q = op.qvec()
            T = tree.transform.T
            center = tree.transform.center
            idx = np.arange(self.sl.start, self.sl.stop)
            other = np.setdiff1d(np.arange(tree.n), idx)
            self.z0 = (self.q - center[idx]) @ T[idx, :]
            self.full_dim = other.size == 0
            M = T[idx, :]
            if self.full_dim:
                self.basis = None
            else:
                qmat, _ = np.linalg.qr(T[other, :].T)
                self.basis = qmat      # (n, n-d) orthonormal columns
                M = M - (M @ qmat) @ qmat.T
            # Lipschitz constant of attr offset -> subspace distance: the
            # projected attr block of T, never larger than sigma_max(T)
            self.sig_sub = max(float(np.linalg.norm(M, 2)), 1e-300)
        else:
            self.q = None

    def node_tests(self, tree: ClusterTree) -> tuple:
        """This operand's qualification mask and (vk only) distance lower
        bound over the whole node arena; either entry may be None."""
        if self._tests is None:
            g = tree.node_table()
            op = self.op
            drift = g["drift"]
            if op.kind == NE:
                j = self.sl.start
                mask = (g["lo"][:, j] <= op.value) & (op.value <= g["hi"][:, j])
                self._tests = (mask, None)
            elif op.kind == NR:
                j = self.sl.start
                mask = (g["lo"][:, j] <= op.hi) & (op.lo <= g["hi"][:, j])
                self._tests = (mask, None)
            elif op.kind == VR:
                self.node_sub = self.sub_dist(g["cent"])
                mask = self.box_dist(g["lo"], g["hi"]) <= op.r
                mask &= (self.node_sub - g["r_ball"]) <= self.sig_sub * op.r + drift
                vc = g.get("vcent:" + op.attr)
                if vc is not None:
                    dv = vc - self.q[None, :]
                    ball = np.sqrt(np.einsum("ij,ij->i", dv, dv)) \
                        - g["vrad:" + op.attr]
                    mask &= ball <= op.r
                self._tests = (mask, None)
            else:   # vk: a bound for ordering and tau pruning, never a mask
                self.node_sub = self.sub_dist(g["cent"])
                lb = np.maximum(self.box_dist(g["lo"], g["hi"]),
                                (self.node_sub - g["r_ball"] - drift) / self.sig_sub)
                vc = g.get("vcent:" + op.attr)
                if vc is not None:
                    dv = vc - self.q[None, :]
                    ball = np.sqrt(np.einsum("ij,ij->i", dv, dv)) \
                        - g["vrad:" + op.attr]
                    lb = np.maximum(lb, ball)
                self._tests = (None, np.maximum(lb, 0.0))
        return self._tests

    def sub_dist(self, Z: np.ndarray) -> np.ndarray:
        """Distance from enhanced points Z (k, n) to the operand subspace."""
        r = Z - self.z0[None, :]
        d2 = np.einsum("ij,ij->i", r, r)
        if self.basis is not None:
            proj = r @ self.basis
            d2 = d2 - np.einsum("ij,ij->i", proj, proj)
        return np.sqrt(np.maximum(d2, 0.0))

    def box_dist(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Distance from q to each node's box restricted to this attribute."""
        l, h = lo[:, self.sl], hi[:, self.sl]
        dd = np.maximum(np.maximum(l - self.q[None, :], self.q[None, :] - h), 0.0)
        return np.sqrt(np.einsum("ij,ij->i", dd, dd))

    def verify(self, ids: np.ndarray) -> np.ndarray:
        """Original-space qualification mask for candidate record ids."""
        op = self.op
        if op.kind == NE:
            return self.col[ids] == op.value
        if op.kind == NR:
            v = self.col[ids]
            return (v >= op.lo) & (v <= op.hi)
        diff = self.col[ids] - self.q[None, :]
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return d <= op.r

    def distances(self, ids: np.ndarray) -> np.ndarray:
        diff = self.col[ids] - self.q[None, :]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _op_ctx(tree: ClusterTree, op: BasicQuery) -> _OpCtx:
    cache = tree.op_cache
    ctx = cache.get(op)
    if ctx is None:
        if len(cache) > 4096:
            cache.clear()
        ctx = cache[op] = _OpCtx(tree, op)
    return ctx


def _node_tests(tree: ClusterTree, ctxs: list[_OpCtx]
                ) -> tuple[np.ndarray, np.ndarray]:
    """Qualification mask and ranked-op distance lower bound for every node
    in the arena (lower bounds are zeros when no top-k operand is present)."""
    mask = np.ones(len(tree.nodes), dtype=bool)
    lb = np.zeros(len(tree.nodes))
    for ctx in ctxs:
        m, l = ctx.node_tests(tree)
        if m is not None:
            mask &= m
        if l is not None:   # at most one ranked operand per group
            lb = l
    return mask, lb


def _locate_ge(leaf: TreeNode, value: float) -> int:
    """First index whose key >= value; model-predicted start, verified search."""
    keys = leaf.keys
    n = len(keys)
    if n == 0 or value <= keys[0]:
        return 0
    if value > keys[-1]:
        return n
    i = leaf.model.predict_rank(value)
    step = max(1, leaf.model.eps_pos)
    lo, hi = i, i
    while lo > 0 and keys[lo] >= value:
        lo = max(0, lo - step)
        step *= 2
    step = max(1, leaf.model.eps_pos)
    while hi < n and keys[hi] < value:
        hi = min(n, hi + step)
        step *= 2
    end = min(n, hi + 1)
    return lo + int(np.searchsorted(keys[lo:end], value, side="left"))


def _leaf_band(leaf: TreeNode, ctxs: list[_OpCtx],
               tau: float | None) -> tuple[int, int]:
    """Key band [i0, i1) that can contain qualifying members."""
    keys = leaf.keys
    n = len(keys)
    i0, i1 = 0, n
    drift = leaf.drift
    for ctx in ctxs:
        op = ctx.op
        if op.kind not in (VR, VK):
            continue
        centd = float(ctx.node_sub[leaf.nid])
        if op.kind == VR:
            slack = ctx.sig_sub * op.r + drift
        else:
            if tau is None:
                continue
            slack = ctx.sig_sub * tau + drift
        i0 = max(i0, _locate_ge(leaf, centd - slack))
        if ctx.full_dim:
            i1 = min(i1, _locate_ge(leaf, np.nextafter(centd + slack, np.inf)))
    return i0, max(i0, i1)


class _Walk:
    """One traversal (one operand group) over the tree."""

    def __init__(self, tree: ClusterTree, ctxs: list[_OpCtx], mode_approx: bool,
                 budget: int | None, trace: ExecutionTrace, prune: bool = True):
        self.tree = tree
        self.ctxs = ctxs
        self.vk = next((c for c in ctxs if c.op.kind == VK), None)
        self.set_ctxs = [c for c in ctxs if c.op.kind != VK]
        self.budget = budget if mode_approx else None
        self.trace = trace
        self.prune = prune
        if prune:
            self.node_mask, self.node_lb = _node_tests(tree, ctxs)
        else:
            self.node_mask = self.node_lb = None
        # ranked accumulator: parallel (distance, id) arrays, lexsorted, <=k
        self.heap_d = np.zeros(0)
        self.heap_i = np.zeros(0, dtype=np.int64)
        self.pend: list[np.ndarray] = []     # set semantics: deferred verify
        self.vis_nodes: list[int] | np.ndarray = []
        self.vis_leaves: list[int] | np.ndarray = []
        self.ids_out: list[np.ndarray] = []
        self.leaf_quota_hit = False

    def tau(self) -> float | None:
        if self.vk is None or len(self.heap_d) < self.vk.op.k:
            return None
        return float(self.heap_d[-1])

    def ranked_pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.heap_i.tolist(), self.heap_d.tolist()))

    def push_candidates(self, ids: np.ndarray, dists: np.ndarray) -> None:
        k = self.vk.op.k
        tau = self.tau()
        if tau is not None:
            keep = dists <= tau    # boundary ties can still win on smaller id
            ids, dists = ids[keep], dists[keep]
            if not len(ids):
                return
        d = np.concatenate([self.heap_d, dists])
        i = np.concatenate([self.heap_i, ids])
        order = np.lexsort((i, d))[:k]
        self.heap_d = d[order]
        self.heap_i = i[order]

    def scan_leaf(self, leaf: TreeNode) -> None:
        if len(leaf.members) == 0:
            return
        if self.prune:
            i0, i1 = _leaf_band(leaf, self.ctxs, self.tau())
        else:
            i0, i1 = 0, len(leaf.members)
        if i1 <= i0:
            return
        cand = leaf.members[i0:i1]
        self.trace.candidates_verified += len(cand)
        if self.vk is None:
            self.pend.append(cand)
            return
        mask = np.ones(len(cand), dtype=bool)
        for ctx in self.set_ctxs:
            mask &= ctx.verify(cand)
            if not mask.any():
                return
        keep = cand[mask]
        if len(keep):
            self.push_candidates(keep, self.vk.distances(keep))

    def finish(self) -> None:
        """Flush deferred work: visit counters, trace ids, set verification."""
        if len(self.vis_nodes):
            np.add.at(self.tree.visit_counts, self.vis_nodes, 1)
            self.trace.add_visits(self.vis_nodes, self.vis_leaves)
            self.vis_nodes, self.vis_leaves = [], []
        if self.vk is None and self.pend:
            cand = np.concatenate(self.pend)
            self.pend = []
            mask = np.ones(len(cand), dtype=bool)
            for ctx in self.set_ctxs:
                mask &= ctx.verify(cand)
                if not mask.any():
                    return
            self.ids_out.append(cand[mask])

    def run_set(self) -> None:
        """Stackless variant for unbudgeted set semantics: reachability is the
        node mask and-folded down the depth levels (a node is visited exactly
        when it and every ancestor qualify), then reached leaves are read
        whole. Identical visit set to the stack walk, in one vectorized pass."""
        g = self.tree.node_table()
        if self.prune:
            reach = self.node_mask.copy()
            reach[0] = True
            parent = g["parent"]
            for lvl in g["levels"][1:]:
                reach[lvl] &= reach[parent[lvl]]
            vis = np.flatnonzero(reach)
        else:
            vis = np.arange(len(self.tree.nodes), dtype=np.int64)
        self.vis_nodes = vis
        self.vis_leaves = vis[g["is_leaf"][vis]]
        nodes = self.tree.nodes
        for nid in self.vis_leaves:
            members = nodes[nid].members
            if len(members):
                self.trace.candidates_verified += len(members)
                self.pend.append(members)

    def run(self, root: int = 0) -> None:
        if self.vk is None and self.budget is None:
            self.run_set()
            return
        tree = self.tree
        nodes = tree.nodes
        stack: list[tuple[int, float]] = [(root, 0.0)]
        ranked = self.vk is not None and self.prune
        nmask, nlb = self.node_mask, self.node_lb
        while stack:
            nid, lb = stack.pop()
            if ranked and lb > 0.0:
                tau = self.tau()
                if tau is not None and lb > tau:   # bound tightened since push
                    continue
            node = nodes[nid]
            if node.is_leaf:
                if self.budget is not None and \
                        len(self.vis_leaves) >= self.budget:
                    self.leaf_quota_hit = True
                    return
                self.vis_nodes.append(nid)
                self.vis_leaves.append(nid)
                self.scan_leaf(node)
                continue
            self.vis_nodes.append(nid)
            cids = tree.child_ids(nid)
            if self.prune:
                keep = nmask[cids]
                lbs = nlb[cids]
                if ranked:
                    tau = self.tau()
                    if tau is not None:
                        keep = keep & (lbs <= tau)
                ids = cids[keep]
                lbs = lbs[keep]
            else:
                ids = cids
                lbs = np.zeros(len(ids))
            # pops follow sibling-list order, children the ranked bound cannot
            # reach yet deferred behind those it can (order within each group
            # is the stored order, so workload-driven reordering matters)
            if ranked and len(ids) > 1:
                far = lbs > 0.0
                for cid, clb in zip(ids[far][::-1], lbs[far][::-1]):
                    stack.append((int(cid), float(clb)))
                for cid, clb in zip(ids[~far][::-1], lbs[~far][::-1]):
                    stack.append((int(cid), float(clb)))
            else:
                for cid, clb in zip(ids[::-1], lbs[::-1]):
                    stack.append((int(cid), float(clb)))


def _run_group(tree: ClusterTree, ctxs: list[_OpCtx], approx: bool,
               budget: int | None, trace: ExecutionTrace, prune: bool) -> _Walk:
    walk = _Walk(tree, ctxs, approx, budget, trace, prune=prune)
    walk.run()
    walk.finish()
    return walk


def _execute(tree: ClusterTree, hq: HybridQuery, prune: bool,
             provenance: str) -> tuple[ResultSet, ExecutionTrace]:
    validate_query(tree.dataset, hq)
    approx = prune and hq.mode == APPROX
    trace = ExecutionTrace()

    if hq.combine == "and":
        ctxs = [_op_ctx(tree, op) for op in hq.ops]
        walk = _run_group(tree, ctxs, approx, hq.budget, trace, prune)
        trace.seal(tree.total_leaves)
        if walk.vk is not None:
            result = ResultSet.from_ranked(walk.ranked_pairs(), provenance)
        else:
            ids = (np.concatenate(walk.ids_out) if walk.ids_out
                   else np.zeros(0, dtype=np.int64))
            result = ResultSet.from_ids(ids, provenance)
        return result, trace

    all_ids: list[np.ndarray] = []
    for op in hq.ops:
        sub = ExecutionTrace()
        walk = _run_group(tree, [_op_ctx(tree, op)], approx, hq.budget, sub, prune)
        trace.absorb(sub)
        if op.kind == VK:
            all_ids.append(walk.heap_i.copy())
        elif walk.ids_out:
            all_ids.append(np.concatenate(walk.ids_out))
    trace.seal(tree.total_leaves)
    ids = np.concatenate(all_ids) if all_ids else np.zeros(0, dtype=np.int64)
    return ResultSet.from_ids(ids, provenance), trace


def exec_query(tree: ClusterTree, hq: HybridQuery) -> tuple[ResultSet, ExecutionTrace]:
    """Execute a hybrid query against the index; exact mode matches the
    full-scan oracle, approx mode trades leaf visits for recall."""
    provenance = "index-approx" if hq.mode == APPROX else "index-exact"
    return _execute(tree, hq, prune=True, provenance=provenance)


def exec_full_scan(tree: ClusterTree, hq: HybridQuery
                   ) -> tuple[ResultSet, ExecutionTrace]:
    """Execute through the tree with pruning disabled: every bucket is read
    and every member verified, so the cross-bucket rate is exactly 1. Serves
    as the scan baseline the indexed walk is measured against."""
    return _execute(tree, hq, prune=False, provenance="full-scan")
