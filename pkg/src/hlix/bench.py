"""Pipeline plumbing: end-to-end builds, workload generation, timed runs,
and the four-stage ablation (full scan, initialized index, tuned transform,
reordered index)."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .engine import exec_full_scan, exec_query
from .gravity import gravity_move
from .metrics import accuracy, recall_at_k
from .oracle import brute_force_query
from .query import APPROX, BasicQuery, EXACT, HybridQuery, NE, NR, VK, VR
from .querylog import QueryLog, make_row
from .reorder import reorder_nodes
from .schema import Dataset, NUMERIC, VECTOR, assemble
from .transform import Transform, init_transform
from .tree import BuildConfig, ClusterTree, build_index
from .tuning import ObjectiveTriple, TuneConfig, TuneResult, optimize_transform

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    # enhancement
    enhance: bool = True
    move: bool = True
    move_iterations: int = 3
    r_factor: float = 7.5
    c: float = 1.1
    eta: float = 0.5
    partitions: int = 1
    # build
    delta: float = 0.951
    min_leaf: int = 32
    fallback_branch: int = 16
    dpc_sample_cap: int = 20000
    max_depth: int = 16
    move_per_level: bool = True
    # query protocol
    repeats: int = 5
    sampling: float = 0.1
    # transform tuning
    budget: int = 16
    n_regions: int = 4
    l_init: float = 0.8
    l_min: float = 0.01
    batch: int = 4
    w_time: float = 0.25
    w_cbr: float = 0.25
    w_acc: float = 0.5
    tune_rows: int = 20000
    tune_queries: int = 48
    # reordering
    perm_cap: int = 5
    perm_budget: int = 200
    seed: int = 0

    def build_config(self) -> BuildConfig:
        return BuildConfig(
            delta=self.delta, min_leaf=self.min_leaf,
            fallback_branch=self.fallback_branch,
            dpc_sample_cap=self.dpc_sample_cap, max_depth=self.max_depth,
            move_per_level=self.move_per_level and self.move,
            move_iterations=self.move_iterations if self.move else 0,
            r_factor=self.r_factor, c=self.c, eta=self.eta, seed=self.seed)

    def tune_config(self) -> TuneConfig:
        return TuneConfig(n_regions=self.n_regions, l_init=self.l_init,
                          l_min=self.l_min, batch=self.batch,
                          weights=(self.w_time, self.w_cbr, self.w_acc),
                          seed=self.seed)

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def build_pipeline(dataset: Dataset, cfg: PipelineConfig,
                   transform: Transform | None = None) -> ClusterTree:
    """assemble -> transform -> optional movement -> divide."""
    fm = assemble(dataset)
    if transform is None:
        transform = (init_transform(fm.matrix) if cfg.enhance
                     else Transform.identity(fm.n))
    base = transform.apply(fm.matrix)
    if cfg.move and cfg.move_iterations > 0 and dataset.m >= 2:
        t0 = time.perf_counter()
        mv = gravity_move(base, cfg.r_factor, cfg.c, cfg.eta,
                          cfg.move_iterations, cfg.partitions)
        positions = mv.moved
        log.info("global movement: %d sweeps in %.2fs", len(mv.g_per_sweep),
                 time.perf_counter() - t0)
    else:
        positions = base
    return build_index(dataset, transform, positions, base, cfg.build_config())


# ---- workload generation ----

QUERY_TYPES = ("ne", "nr", "vk", "vr", "vr_nr", "nr_vk", "vr_vk", "vr_x")


class WorkloadGen:
    """Randomized queries calibrated against the dataset's empirical
    distributions so selectivity targets actually hold."""

    def __init__(self, dataset: Dataset, rng: np.random.Generator,
                 k: int = 10, nr_selectivity: float = 0.10,
                 vr_selectivity: float = 0.04):
        self.ds = dataset
        self.rng = rng
        self.k = k
        self.nr_sel = nr_selectivity
        self.vr_sel = vr_selectivity
        self.numeric = [a.name for a in dataset.schema.attributes if a.kind == NUMERIC]
        self.vector = [a.name for a in dataset.schema.attributes if a.kind == VECTOR]
        self._sorted = {a: np.sort(dataset.columns[a]) for a in self.numeric}

    def _nr(self, selectivity: float | None = None) -> BasicQuery:
        attr = str(self.rng.choice(self.numeric))
        s = selectivity if selectivity is not None else self.nr_sel
        col = self._sorted[attr]
        m = len(col)
        width = max(1, int(round(s * m)))
        start = int(self.rng.integers(0, max(1, m - width + 1)))
        return BasicQuery(NR, attr, lo=float(col[start]),
                          hi=float(col[min(m - 1, start + width - 1)]))

    def _ne(self) -> BasicQuery:
        attr = str(self.rng.choice(self.numeric))
        rid = int(self.rng.integers(0, self.ds.m))
        return BasicQuery(NE, attr, value=float(self.ds.columns[attr][rid]))

    def _radius_for(self, attr: str, center: np.ndarray, selectivity: float) -> float:
        col = self.ds.columns[attr]
        probe = self.rng.choice(len(col), size=min(len(col), 512), replace=False)
        d = np.sqrt(np.einsum("ij,ij->i", col[probe] - center, col[probe] - center))
        return float(np.quantile(d, min(1.0, selectivity)))

    def _vr(self, selectivity: float | None = None,
            attr: str | None = None, center: np.ndarray | None = None) -> BasicQuery:
        attr = attr or str(self.rng.choice(self.vector))
        if center is None:
            center = self.ds.columns[attr][int(self.rng.integers(0, self.ds.m))]
        s = selectivity if selectivity is not None else self.vr_sel
        r = self._radius_for(attr, center, s)
        return BasicQuery(VR, attr, q=tuple(center), r=r)

    def _vk(self, k: int | None = None) -> BasicQuery:
        attr = str(self.rng.choice(self.vector))
        rid = int(self.rng.integers(0, self.ds.m))
        return BasicQuery(VK, attr, q=tuple(self.ds.columns[attr][rid]),
                          k=k or self.k)

    def make(self, qtype: str, mode: str = EXACT,
             budget: int | None = None) -> HybridQuery:
        r = self.rng
        if qtype == "ne":
            ops, combine = (self._ne(),), "and"
        elif qtype == "nr":
            ops, combine = (self._nr(),), "and"
        elif qtype == "vk":
            ops, combine = (self._vk(),), "and"
        elif qtype == "vr":
            ops, combine = (self._vr(),), "and"
        elif qtype == "vr_nr":
            combine = "and" if r.random() < 0.7 else "or"
            ops = (self._vr(), self._nr())
        elif qtype == "nr_vk":
            combine = "and" if r.random() < 0.7 else "or"
            ops = (self._nr(selectivity=0.2), self._vk())
        elif qtype == "vr_vk":
            combine = "and" if r.random() < 0.7 else "or"
            ops = (self._vr(selectivity=0.15), self._vk())
        elif qtype == "vr_x":
            n_ops = int(r.integers(2, 6))
            attr = str(r.choice(self.vector))
            anchor = self.ds.columns[attr][int(r.integers(0, self.ds.m))]
            ops = []
            for _ in range(n_ops):
                jitter = r.normal(0.0, 0.01, size=anchor.shape)
                ops.append(self._vr(selectivity=0.2, attr=attr,
                                    center=anchor + jitter))
            ops, combine = tuple(ops), "and"
        else:
            raise ValueError(f"unknown workload query type {qtype!r}")
        return HybridQuery(tuple(ops), combine, mode, budget)

    def batch(self, qtype: str, count: int) -> list[HybridQuery]:
        return [self.make(qtype) for _ in range(count)]


def skewed_workload(pool: list[HybridQuery], rng: np.random.Generator,
                    total: int, hot_frac: float = 0.2,
                    hot_mass: float = 0.8) -> list[HybridQuery]:
    """80/20 style repetition: hot_frac of the pool serves hot_mass of the
    executions, the rest is drawn from the cold remainder."""
    n_hot = max(1, int(round(hot_frac * len(pool))))
    hot, cold = pool[:n_hot], pool[n_hot:] or pool[:n_hot]
    out = []
    for _ in range(total):
        src = hot if rng.random() < hot_mass else cold
        out.append(src[int(rng.integers(0, len(src)))])
    return out


# ---- timed runs ----

@dataclass
class RunRecord:
    query: HybridQuery
    result: object
    seconds: float            # mean over repeats
    trace: object


@dataclass
class RunSummary:
    records: list[RunRecord] = field(default_factory=list)
    qlog: QueryLog = field(default_factory=QueryLog)

    @property
    def mean_seconds(self) -> float:
        ts = [r.seconds for r in self.records]
        return float(np.mean(ts)) if ts else 0.0

    @property
    def median_seconds(self) -> float:
        ts = [r.seconds for r in self.records]
        return float(np.median(ts)) if ts else 0.0

    @property
    def mean_cbr(self) -> float:
        cs = [r.trace.cbr for r in self.records]
        return float(np.mean(cs)) if cs else 0.0

    def mean_accuracy(self) -> float:
        accs = [r.query_accuracy for r in self.qlog.rows
                if r.query_accuracy is not None]
        return float(np.mean(accs)) if accs else float("nan")


def run_workload(tree: ClusterTree, queries: list[HybridQuery],
                 repeats: int = 5, sampling: float = 0.1,
                 seed: int = 0) -> RunSummary:
    """Execute each query `repeats` times (mean time kept); a `sampling`
    fraction additionally gets a ground-truth scan for recall/accuracy."""
    rng = np.random.default_rng(seed)
    out = RunSummary()
    for hq in queries:
        times = []
        result = trace = None
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            result, trace = exec_query(tree, hq)
            times.append(time.perf_counter() - t0)
        secs = float(np.mean(times))
        rec = RunRecord(hq, result, secs, trace)
        out.records.append(rec)
        rec_recall = rec_acc = None
        if rng.random() < sampling:
            oracle = brute_force_query(tree.dataset, hq)
            rec_acc = accuracy(result, oracle)
            vk = hq.vk_op()
            if vk is not None and hq.combine == "and":
                rec_recall = recall_at_k(result, oracle, vk.k)
        out.qlog.append(make_row(tree.dataset.name, hq, trace, secs,
                                 recall=rec_recall, accuracy=rec_acc))
    return out


def full_scan_run(tree: ClusterTree, queries: list[HybridQuery],
                  repeats: int = 5) -> RunSummary:
    """Scan baseline: same verify path, pruning off, every bucket read."""
    out = RunSummary()
    for hq in queries:
        times = []
        result = trace = None
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            result, trace = exec_full_scan(tree, hq)
            times.append(time.perf_counter() - t0)
        secs = float(np.mean(times))
        out.records.append(RunRecord(hq, result, secs, trace))
        out.qlog.append(make_row(tree.dataset.name, hq, trace, secs,
                                 recall=None, accuracy=1.0))
    return out


# ---- transform tuning against a sampled pipeline ----

def make_evaluator(dataset: Dataset, workload: list[HybridQuery],
                   cfg: PipelineConfig):
    """Trial protocol: candidate transform -> small index over sampled rows ->
    replay a workload sample -> (mean time, mean cbr, accuracy=1 exact)."""
    rng = np.random.default_rng(cfg.seed)
    m = dataset.m
    if m > cfg.tune_rows:
        keep = np.sort(rng.choice(m, size=cfg.tune_rows, replace=False))
        cols = {a.name: dataset.columns[a.name][keep]
                for a in dataset.schema.attributes}
        sub = Dataset(dataset.schema, cols, name=dataset.name + "-tune")
    else:
        sub = dataset
    qs = list(workload)
    if len(qs) > cfg.tune_queries:
        idx = rng.choice(len(qs), size=cfg.tune_queries, replace=False)
        qs = [qs[int(i)] for i in sorted(idx)]
    fm = assemble(sub)
    trial_cfg = BuildConfig(
        delta=cfg.delta, min_leaf=cfg.min_leaf,
        fallback_branch=cfg.fallback_branch,
        dpc_sample_cap=min(cfg.dpc_sample_cap, 8192),
        max_depth=cfg.max_depth, move_per_level=False, move_iterations=0,
        seed=cfg.seed)

    def evaluate(transform: Transform) -> ObjectiveTriple:
        base = transform.apply(fm.matrix)
        tree = build_index(sub, transform, base, base, trial_cfg)
        t0 = time.perf_counter()
        cbrs = []
        for hq in qs:
            _, trace = exec_query(tree, hq)
            cbrs.append(trace.cbr)
        secs = (time.perf_counter() - t0) / max(1, len(qs))
        return ObjectiveTriple(secs, float(np.mean(cbrs)) if cbrs else 0.0, 1.0)

    return evaluate


def tune_transform(dataset: Dataset, workload: list[HybridQuery],
                   cfg: PipelineConfig,
                   init: Transform | None = None) -> TuneResult:
    fm = assemble(dataset)
    if init is None:
        init = init_transform(fm.matrix)
    evaluator = make_evaluator(dataset, workload, cfg)
    return optimize_transform(init, evaluator, cfg.budget, cfg.tune_config())


# ---- ablation ----

STAGES = ("full_scan", "initialized", "optimized_transform", "optimized_index")


@dataclass
class StageRow:
    stage: str
    mean_seconds: float
    median_seconds: float
    mean_cbr: float
    mean_accuracy: float
    inherited: bool = False


@dataclass
class AblationReport:
    rows: list[StageRow] = field(default_factory=list)
    ratio: float = 0.0        # full_scan mean time / final stage mean time

    def check(self, min_ratio: float = 5.0) -> tuple[bool, list[str]]:
        t = {r.stage: r.mean_seconds for r in self.rows}
        problems = []
        if not (t["full_scan"] > t["initialized"]):
            problems.append("full_scan must be slower than initialized")
        if not (t["initialized"] >= t["optimized_transform"]):
            problems.append("optimized_transform regressed over initialized")
        if not (t["optimized_transform"] >= t["optimized_index"]):
            problems.append("optimized_index regressed over optimized_transform")
        if not (self.ratio >= min_ratio):
            problems.append(f"speedup {self.ratio:.2f}x below {min_ratio:.2f}x")
        return (not problems), problems


def ablate(dataset: Dataset, workload: list[HybridQuery],
           cfg: PipelineConfig) -> tuple[AblationReport, ClusterTree]:
    """Measure the same workload across the four pipeline stages."""
    report = AblationReport()

    def stage_row(name: str, summary: RunSummary, inherited=False) -> StageRow:
        acc = summary.mean_accuracy()
        row = StageRow(name, summary.mean_seconds, summary.median_seconds,
                       summary.mean_cbr, acc if np.isfinite(acc) else 1.0,
                       inherited)
        report.rows.append(row)
        log.info("ablation %s: mean %.3f ms, cbr %.3f%s", name,
                 row.mean_seconds * 1e3, row.mean_cbr,
                 " (inherited)" if inherited else "")
        return row

    tree = build_pipeline(dataset, cfg)
    fs = full_scan_run(tree, workload, repeats=cfg.repeats)
    stage_row("full_scan", fs)

    init_summary = run_workload(tree, workload, repeats=cfg.repeats,
                                sampling=cfg.sampling, seed=cfg.seed)
    init_row = stage_row("initialized", init_summary)

    tuned = tune_transform(dataset, workload, cfg, init=tree.transform)
    if tuned.improved:
        tree_t = build_pipeline(dataset, cfg, transform=tuned.transform)
        t_summary = run_workload(tree_t, workload, repeats=cfg.repeats,
                                 sampling=cfg.sampling, seed=cfg.seed)
        if t_summary.mean_seconds <= init_summary.mean_seconds:
            t_row = stage_row("optimized_transform", t_summary)
        else:   # tuned transform lost on the full build: keep the initialized one
            tree_t, t_summary = tree, init_summary
            t_row = StageRow("optimized_transform", init_row.mean_seconds,
                             init_row.median_seconds, init_row.mean_cbr,
                             init_row.mean_accuracy, inherited=True)
            report.rows.append(t_row)
    else:
        tree_t, t_summary = tree, init_summary
        t_row = StageRow("optimized_transform", init_row.mean_seconds,
                         init_row.median_seconds, init_row.mean_cbr,
                         init_row.mean_accuracy, inherited=True)
        report.rows.append(t_row)

    snapshot = {nd.nid: list(nd.children) for nd in tree_t.nodes if not nd.is_leaf}
    rr = reorder_nodes(tree_t, workload, perm_cap=cfg.perm_cap,
                       perm_budget=cfg.perm_budget)
    if rr.reverted:
        i_row = StageRow("optimized_index", t_row.mean_seconds,
                         t_row.median_seconds, t_row.mean_cbr,
                         t_row.mean_accuracy, inherited=True)
        report.rows.append(i_row)
    else:
        i_summary = run_workload(tree_t, workload, repeats=cfg.repeats,
                                 sampling=cfg.sampling, seed=cfg.seed)
        if i_summary.mean_seconds <= t_row.mean_seconds:
            stage_row("optimized_index", i_summary)
        else:   # scanned fewer nodes but timing noise won: keep previous order
            for nd in tree_t.nodes:
                if not nd.is_leaf:
                    nd.children = list(snapshot[nd.nid])
            tree_t.invalidate_cache()
            i_row = StageRow("optimized_index", t_row.mean_seconds,
                             t_row.median_seconds, t_row.mean_cbr,
                             t_row.mean_accuracy, inherited=True)
            report.rows.append(i_row)

    report.ratio = report.rows[0].mean_seconds / max(report.rows[-1].mean_seconds,
                                                     1e-12)
    return report, tree_t


def write_results_csv(path, records: list[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["query_id", "rank", "record_id", "distance"])
        for qid, rec in enumerate(records):
            for row in rec.result.csv_rows(qid):
                wr.writerow(row)
