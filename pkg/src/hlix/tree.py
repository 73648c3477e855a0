"""Cluster tree with learned per-leaf rank models.

The index is built by divisive clustering over the enhanced point cloud: a
queue of pending sets is split with density-peaks clustering, children are
ordered by distance to the parent centroid (size-weighted mean of the child
centroids), and each child is accepted as a leaf once a linear model of its
key CDF places at least `delta` of its members within the scan band. A leaf's
key is the enhanced-space distance of a member to the leaf centroid; members
are stored key-sorted so query-time ring pruning is a boundary search.

Every node also carries sound search metadata computed from final positions:
an enclosing ball (centroid + radius), the original-space bounding box of its
members, and the maximum displacement (drift) its members accumulated through
movement sweeps. Those three are what the query engine prunes with; the
learned models only steer where scans start.
"""

from __future__ import annotations

import logging
import struct
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dpc import SingleClusterError, dpc_cluster
from .gravity import gravity_move
from .query import QueryError
from .schema import AttributeSchema, Dataset, FeatureMatrix, VECTOR, assemble
from .transform import Transform

log = logging.getLogger(__name__)

MAGIC = b"HLIX1"

REASONS = ("fit", "min_leaf", "indivisible", "depth_cap")


class IndexFormatError(ValueError):
    pass


@dataclass
class LeafModel:
    """Linear CDF model: predicted rank of key k is round((a*k + b) * size)."""

    a: float
    b: float
    size: int
    eps_pos: int
    hit_ratio: float

    def predict_rank(self, key: float) -> int:
        v = int(round((self.a * key + self.b) * self.size))
        return min(max(v, 0), self.size - 1) if self.size else 0


def fit_leaf_model(sorted_keys: np.ndarray) -> LeafModel:
    """Least-squares fit of the empirical CDF rank/size against the key,
    then measure the fraction of members landing within eps_pos of their
    predicted rank. Constant keys degenerate to predicting rank 0."""
    size = len(sorted_keys)
    eps_pos = max(1, int(np.ceil(0.01 * size)))
    if size == 0:
        return LeafModel(0.0, 0.0, 0, 1, 1.0)
    ranks = np.arange(size, dtype=np.float64)
    y = ranks / size
    kvar = float(np.var(sorted_keys))
    if kvar <= 0.0:
        a, b = 0.0, 0.0
    else:
        kbar, ybar = float(np.mean(sorted_keys)), float(np.mean(y))
        a = float(np.mean((sorted_keys - kbar) * (y - ybar)) / kvar)
        b = ybar - a * kbar
    pred = np.rint((a * sorted_keys + b) * size)
    np.clip(pred, 0, size - 1, out=pred)
    hits = np.abs(pred - ranks) <= eps_pos
    return LeafModel(a, b, size, eps_pos, float(np.mean(hits)))


@dataclass
class TreeNode:
    nid: int
    parent: int
    depth: int
    centroid: np.ndarray = None
    r_ball: float = 0.0
    drift: float = 0.0
    bbox_lo: np.ndarray = None
    bbox_hi: np.ndarray = None
    children: list[int] = field(default_factory=list)
    members: np.ndarray | None = None      # leaf: record ids, key-ascending
    keys: np.ndarray | None = None         # leaf: sorted keys
    model: LeafModel | None = None
    reason: str | None = None
    # per vector attribute: (center, radius) over members in original space
    vballs: dict[str, tuple[np.ndarray, float]] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.members is not None


@dataclass
class BuildConfig:
    delta: float = 0.951
    min_leaf: int = 32
    fallback_branch: int = 16     # width floor for forced divisions
    split_factor: float = 6.0     # no child may exceed max(min_leaf, |S|/this)
    dpc_sample_cap: int = 20000
    max_depth: int = 16
    move_per_level: bool = True
    move_iterations: int = 3
    r_factor: float = 7.5
    c: float = 1.1
    eta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")
        if self.min_leaf < 1 or self.fallback_branch < 2 or self.max_depth < 0:
            raise ValueError("bad build config")


@dataclass
class BuildReport:
    m: int = 0
    depth: int = 0
    node_count: int = 0
    leaf_count: int = 0
    mean_leaf_size: float = 0.0
    level_sizes: list[int] = field(default_factory=list)    # nodes per depth
    accepted_fit: int = 0
    accepted_min_leaf: int = 0
    accepted_other: int = 0
    divisions: int = 0
    build_seconds: float = 0.0
    stage_seconds: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        out = [("m", self.m), ("depth", self.depth), ("nodes", self.node_count),
               ("leaves", self.leaf_count), ("mean_leaf_size", round(self.mean_leaf_size, 2)),
               ("leaves_fit", self.accepted_fit), ("leaves_min_leaf", self.accepted_min_leaf),
               ("leaves_other", self.accepted_other), ("divisions", self.divisions),
               ("build_seconds", round(self.build_seconds, 3))]
        for d, c in enumerate(self.level_sizes):
            out.append((f"level_{d}_nodes", c))
        for k, v in self.stage_seconds.items():
            out.append((f"seconds_{k}", round(v, 3)))
        return out


class ClusterTree:
    """Built index: node arena + transform + attachment to the source dataset."""

    def __init__(self, nodes: list[TreeNode], transform: Transform,
                 dataset: Dataset, selection: list[str], delta: float,
                 report: BuildReport | None = None):
        self.nodes = nodes
        self.transform = transform
        self.dataset = dataset
        self.selection = list(selection)
        self.delta = delta
        self.report = report
        self.fm = assemble(dataset, self.selection)
        self.visit_counts = np.zeros(len(nodes), dtype=np.int64)
        self.op_cache: dict = {}     # query operand -> engine precomputation
        self._child_ids: dict[int, np.ndarray] = {}
        self._node_table: dict | None = None
        self._total_leaves = sum(1 for nd in nodes if nd.is_leaf)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def n(self) -> int:
        return self.transform.n

    def leaves(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if nd.is_leaf]

    @property
    def total_leaves(self) -> int:
        return self._total_leaves

    def depth(self) -> int:
        return max((nd.depth for nd in self.nodes), default=0)

    def attr_slice(self, name: str) -> slice:
        try:
            return self.fm.attr_slices[name]
        except KeyError:
            raise QueryError(f"attribute {name!r} is not indexed") from None

    def invalidate_cache(self) -> None:
        self._child_ids.clear()

    def child_ids(self, nid: int) -> np.ndarray:
        cached = self._child_ids.get(nid)
        if cached is None:
            cached = np.asarray(self.nodes[nid].children, dtype=np.int64)
            self._child_ids[nid] = cached
        return cached

    def node_table(self) -> dict:
        """Whole-arena node geometry stacked into flat arrays, indexed by nid,
        for one-shot vectorized query tests. Node geometry is immutable after
        the build, so sibling reordering never invalidates this."""
        if self._node_table is None:
            nds = self.nodes
            table = {
                "cent": np.stack([nd.centroid for nd in nds]),
                "r_ball": np.asarray([nd.r_ball for nd in nds]),
                "drift": np.asarray([nd.drift for nd in nds]),
                "lo": np.stack([nd.bbox_lo for nd in nds]),
                "hi": np.stack([nd.bbox_hi for nd in nds]),
            }
            for aname in nds[0].vballs:
                table[f"vcent:{aname}"] = np.stack(
                    [nd.vballs[aname][0] for nd in nds])
                table[f"vrad:{aname}"] = np.asarray(
                    [nd.vballs[aname][1] for nd in nds])
            table["parent"] = np.asarray(
                [max(nd.parent, 0) for nd in nds], dtype=np.int64)
            table["is_leaf"] = np.asarray([nd.is_leaf for nd in nds])
            depths = np.asarray([nd.depth for nd in nds])
            table["levels"] = [np.flatnonzero(depths == d)
                               for d in range(int(depths.max()) + 1)]
            self._node_table = table
        return self._node_table

    def stats(self) -> dict:
        leaves = self.leaves()
        sizes = [len(l.members) for l in leaves]
        return {
            "m": self.fm.matrix.shape[0],
            "n": self.n,
            "depth": self.depth(),
            "node_count": len(self.nodes),
            "leaf_count": len(leaves),
            "mean_leaf_size": float(np.mean(sizes)) if sizes else 0.0,
            "max_leaf_size": int(np.max(sizes)) if sizes else 0,
            "accepted_fit": sum(1 for l in leaves if l.reason == "fit"),
        }

    # ---- persistence ----

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<B", 1)]
        schema_line = self.dataset.schema.header_line().encode()
        name = self.dataset.name.encode()
        sel = ",".join(self.selection).encode()
        tblob = self.transform.to_bytes()
        out.append(struct.pack("<QId", self.dataset.m, self.n, self.delta))
        for blob in (name, schema_line, sel, tblob):
            out.append(struct.pack("<I", len(blob)))
            out.append(blob)
        out.append(struct.pack("<I", len(self.nodes)))
        n = self.n
        vec_attrs = [a.name for a in self.dataset.schema.attributes
                     if a.name in self.selection and a.kind == VECTOR]
        for nd in self.nodes:
            reason = REASONS.index(nd.reason) if nd.reason in REASONS else 255
            out.append(struct.pack("<IiIBB", nd.nid, nd.parent, nd.depth,
                                   1 if nd.is_leaf else 0, reason))
            out.append(np.asarray(nd.centroid, "<f8").tobytes())
            out.append(struct.pack("<dd", nd.r_ball, nd.drift))
            out.append(np.asarray(nd.bbox_lo, "<f8").tobytes())
            out.append(np.asarray(nd.bbox_hi, "<f8").tobytes())
            for aname in vec_attrs:
                cent, rad = nd.vballs[aname]
                out.append(np.asarray(cent, "<f8").tobytes())
                out.append(struct.pack("<d", rad))
            if nd.is_leaf:
                mm = nd.model
                out.append(struct.pack("<ddIdQ", mm.a, mm.b, mm.eps_pos,
                                       mm.hit_ratio, len(nd.members)))
                out.append(np.asarray(nd.members, "<i8").tobytes())
                out.append(np.asarray(nd.keys, "<f8").tobytes())
            else:
                out.append(struct.pack("<I", len(nd.children)))
                out.append(np.asarray(nd.children, "<u4").tobytes())
        return b"".join(out)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @staticmethod
    def from_bytes(blob: bytes, dataset: Dataset) -> "ClusterTree":
        if blob[:5] != MAGIC:
            raise IndexFormatError("bad index magic")
        (ver,) = struct.unpack_from("<B", blob, 5)
        if ver != 1:
            raise IndexFormatError(f"unsupported index version {ver}")
        off = 6
        m, n, delta = struct.unpack_from("<QId", blob, off)
        off += struct.calcsize("<QId")
        strs = []
        for _ in range(4):
            (ln,) = struct.unpack_from("<I", blob, off)
            off += 4
            strs.append(blob[off:off + ln])
            off += ln
        name, schema_line, sel, tblob = strs
        if dataset.m != m:
            raise IndexFormatError(f"index built over m={m}, dataset has m={dataset.m}")
        if dataset.schema.header_line() != schema_line.decode():
            raise IndexFormatError("index schema does not match dataset schema")
        transform = Transform.from_bytes(tblob)
        selection = sel.decode().split(",") if sel else []
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        vec_attrs = [(a.name, a.dim) for a in dataset.schema.attributes
                     if a.name in selection and a.kind == VECTOR]
        nodes = []
        for _ in range(count):
            nid, parent, depth, is_leaf, reason = struct.unpack_from("<IiIBB", blob, off)
            off += struct.calcsize("<IiIBB")
            cent = np.frombuffer(blob, "<f8", n, off).copy(); off += 8 * n
            r_ball, drift = struct.unpack_from("<dd", blob, off)
            off += 16
            lo = np.frombuffer(blob, "<f8", n, off).copy(); off += 8 * n
            hi = np.frombuffer(blob, "<f8", n, off).copy(); off += 8 * n
            nd = TreeNode(nid, parent, depth, cent, r_ball, drift, lo, hi)
            for aname, dim in vec_attrs:
                vc = np.frombuffer(blob, "<f8", dim, off).copy(); off += 8 * dim
                (vr,) = struct.unpack_from("<d", blob, off); off += 8
                nd.vballs[aname] = (vc, vr)
            nd.reason = REASONS[reason] if reason < len(REASONS) else None
            if is_leaf:
                a, b, eps_pos, hit, size = struct.unpack_from("<ddIdQ", blob, off)
                off += struct.calcsize("<ddIdQ")
                nd.members = np.frombuffer(blob, "<i8", size, off).copy(); off += 8 * size
                nd.keys = np.frombuffer(blob, "<f8", size, off).copy(); off += 8 * size
                nd.model = LeafModel(a, b, int(size), eps_pos, hit)
            else:
                (nc,) = struct.unpack_from("<I", blob, off)
                off += 4
                nd.children = [int(c) for c in np.frombuffer(blob, "<u4", nc, off)]
                off += 4 * nc
            nodes.append(nd)
        return ClusterTree(nodes, transform, dataset, selection, delta)

    @staticmethod
    def load(path, dataset: Dataset) -> "ClusterTree":
        with open(path, "rb") as f:
            return ClusterTree.from_bytes(f.read(), dataset)


def _divide_capped(positions: np.ndarray, ids: np.ndarray, cap: int,
                   cfg: BuildConfig, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """One tree level as (member ids, peak position) parts.

    Density-peak assignment funnels most of a unimodal set into one dominant
    cluster, which would stack into long single-child chains; oversized parts
    are therefore re-divided in place so every sibling ends up at or under
    `cap` (indivisible parts and budget overruns are kept as-is)."""
    width_floor = min(cfg.fallback_branch,
                      max(2, int(np.ceil(len(ids) / cfg.min_leaf))))
    div = dpc_cluster(positions[ids], min_centers=width_floor,
                      sample_cap=cfg.dpc_sample_cap, seed=seed)
    parts = [(ids[div.labels == c], positions[ids[div.centers[c]]])
             for c in range(div.k)]
    out: list[tuple[np.ndarray, np.ndarray]] = []
    budget = 4 * cfg.fallback_branch
    salt = 0
    while parts:
        pids, peak = parts.pop()
        if len(pids) <= cap or len(out) + len(parts) >= budget:
            out.append((pids, peak))
            continue
        salt += 1
        floor = min(cfg.fallback_branch, max(2, int(np.ceil(len(pids) / cap))))
        try:
            sub = dpc_cluster(positions[pids], min_centers=floor,
                              sample_cap=cfg.dpc_sample_cap, seed=seed + salt)
        except SingleClusterError:
            out.append((pids, peak))
            continue
        parts.extend((pids[sub.labels == c], positions[pids[sub.centers[c]]])
                     for c in range(sub.k))
    return out


def build_index(dataset: Dataset, transform: Transform, positions: np.ndarray,
                base: np.ndarray, config: BuildConfig | None = None,
                selection: list[str] | None = None) -> ClusterTree:
    """Divide the enhanced cloud into the cluster tree.

    `positions` are the current enhanced coordinates (after any global
    movement); `base` are the plain transformed coordinates. Their difference
    is each point's accumulated drift, which per-level movement extends.
    Both arrays are copied; the dataset is never modified.
    """
    cfg = config or BuildConfig()
    selection = list(selection) if selection is not None else dataset.schema.names
    fm = assemble(dataset, selection)
    m = dataset.m
    positions = np.array(positions, dtype=np.float64, copy=True)
    base = np.asarray(base, dtype=np.float64)
    if positions.shape != (m, transform.n) or base.shape != (m, transform.n):
        raise ValueError("positions/base shape mismatch with dataset and transform")

    t0 = time.perf_counter()
    report = BuildReport(m=m)
    stage = {"move": 0.0, "divide": 0.0, "fit": 0.0, "finalize": 0.0}

    nodes: list[TreeNode] = []
    pending: dict[int, np.ndarray] = {}

    def new_node(parent: int, depth: int) -> TreeNode:
        nd = TreeNode(len(nodes), parent, depth)
        nodes.append(nd)
        return nd

    def finalize_leaf(nd: TreeNode, ids: np.ndarray, centroid: np.ndarray,
                      reason: str) -> None:
        ts = time.perf_counter()
        if len(ids):
            diff = positions[ids] - centroid[None, :]
            keys = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        else:
            keys = np.zeros(0)
        order = np.lexsort((ids, keys))
        nd.members = ids[order]
        nd.keys = keys[order]
        nd.centroid = centroid
        nd.model = fit_leaf_model(nd.keys)
        nd.reason = reason
        stage["fit"] += time.perf_counter() - ts
        if reason == "fit":
            report.accepted_fit += 1
        elif reason == "min_leaf":
            report.accepted_min_leaf += 1
        else:
            report.accepted_other += 1

    root = new_node(-1, 0)
    pending[root.nid] = np.arange(m, dtype=np.int64)
    queue: deque[int] = deque([root.nid])

    while queue:
        nid = queue.popleft()
        nd = nodes[nid]
        ids = pending.pop(nid)

        if len(ids) < max(2, cfg.min_leaf):
            centroid = (positions[ids].mean(axis=0) if len(ids)
                        else np.zeros(transform.n))
            finalize_leaf(nd, ids, centroid, "min_leaf")
            continue
        if nd.depth >= cfg.max_depth:
            finalize_leaf(nd, ids, positions[ids].mean(axis=0), "depth_cap")
            continue

        if cfg.move_per_level and nd.depth > 0 and cfg.move_iterations > 0:
            ts = time.perf_counter()
            mv = gravity_move(positions[ids], cfg.r_factor, cfg.c, cfg.eta,
                              cfg.move_iterations)
            positions[ids] = mv.moved
            stage["move"] += time.perf_counter() - ts

        ts = time.perf_counter()
        cap = max(cfg.min_leaf, int(np.ceil(len(ids) / cfg.split_factor)))
        try:
            parts = _divide_capped(positions, ids, cap, cfg, cfg.seed + nid)
        except SingleClusterError:
            stage["divide"] += time.perf_counter() - ts
            finalize_leaf(nd, ids, positions[ids].mean(axis=0), "indivisible")
            continue
        stage["divide"] += time.perf_counter() - ts
        report.divisions += 1

        k = len(parts)
        child_ids = [p[0] for p in parts]
        child_cent = np.stack([p[1] for p in parts])
        sizes = np.asarray([len(ci) for ci in child_ids], dtype=np.float64)
        parent_centroid = (child_cent * sizes[:, None]).sum(axis=0) / sizes.sum()
        nd.centroid = parent_centroid

        diff = child_cent - parent_centroid[None, :]
        cdist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = np.lexsort((np.arange(k), cdist))

        for c in order:
            child = new_node(nd.nid, nd.depth + 1)
            nd.children.append(child.nid)
            cids = child_ids[c]
            cc = child_cent[c]
            if len(cids) < cfg.min_leaf:
                finalize_leaf(child, cids, cc, "min_leaf")
                continue
            ts = time.perf_counter()
            d = positions[cids] - cc[None, :]
            keys = np.sqrt(np.einsum("ij,ij->i", d, d))
            model = fit_leaf_model(np.sort(keys))
            stage["fit"] += time.perf_counter() - ts
            if model.hit_ratio >= cfg.delta:
                finalize_leaf(child, cids, cc, "fit")
            else:
                pending[child.nid] = cids
                queue.append(child.nid)

    # bottom-up finalize: balls, drift, boxes from final positions
    ts = time.perf_counter()
    vec_attrs = [(a.name, fm.attr_slices[a.name])
                 for a in dataset.schema.attributes
                 if a.name in selection and a.kind == VECTOR]
    drift_norm = np.sqrt(np.einsum("ij,ij->i", positions - base, positions - base))
    member_of: dict[int, np.ndarray] = {}
    for nd in reversed(nodes):
        if nd.is_leaf:
            ids = nd.members
        else:
            ids = np.concatenate([member_of.pop(c) for c in nd.children]) \
                if nd.children else np.zeros(0, dtype=np.int64)
        member_of[nd.nid] = ids
        if len(ids):
            diff = positions[ids] - nd.centroid[None, :]
            nd.r_ball = float(np.sqrt(np.max(np.einsum("ij,ij->i", diff, diff))))
            nd.drift = float(np.max(drift_norm[ids]))
            rows = fm.matrix[ids]
            nd.bbox_lo = rows.min(axis=0)
            nd.bbox_hi = rows.max(axis=0)
            for aname, sl in vec_attrs:
                sub = rows[:, sl]
                c = sub.mean(axis=0)
                d = sub - c[None, :]
                rad = float(np.sqrt(np.max(np.einsum("ij,ij->i", d, d))))
                nd.vballs[aname] = (c, rad)
        else:
            nd.r_ball = 0.0
            nd.drift = 0.0
            nd.bbox_lo = np.zeros(fm.n)
            nd.bbox_hi = np.zeros(fm.n)
            for aname, sl in vec_attrs:
                nd.vballs[aname] = (np.zeros(sl.stop - sl.start), 0.0)
    stage["finalize"] = time.perf_counter() - ts

    report.build_seconds = time.perf_counter() - t0
    report.stage_seconds = stage
    report.node_count = len(nodes)
    leaves = [nd for nd in nodes if nd.is_leaf]
    report.leaf_count = len(leaves)
    report.mean_leaf_size = float(np.mean([len(l.members) for l in leaves])) if leaves else 0.0
    report.depth = max(nd.depth for nd in nodes)
    levels = np.zeros(report.depth + 1, dtype=int)
    for nd in nodes:
        levels[nd.depth] += 1
    report.level_sizes = [int(x) for x in levels]
    log.info("built index: m=%d depth=%d nodes=%d leaves=%d in %.2fs",
             m, report.depth, report.node_count, report.leaf_count,
             report.build_seconds)
    return ClusterTree(nodes, transform, dataset, selection, cfg.delta, report)


def keys_for_cdf(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Diagnostic key per point: distance to its cluster centroid plus that
    centroid's distance to the barycenter of all centroids."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    cents = np.stack([points[labels == u].mean(axis=0) for u in uniq])
    c0 = cents.mean(axis=0)
    hop = np.sqrt(np.einsum("ij,ij->i", cents - c0, cents - c0))
    lab_pos = {int(u): i for i, u in enumerate(uniq)}
    idx = np.asarray([lab_pos[int(l)] for l in labels])
    diff = points - cents[idx]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff)) + hop[idx]
