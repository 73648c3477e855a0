"""Command line front end.

Exit codes: 0 success, 2 invalid input or configuration, 3 failed ablation
assertion."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields
from datetime import datetime
from pathlib import Path

import numpy as np

from .bench import (AblationReport, PipelineConfig, RunSummary, WorkloadGen,
                    QUERY_TYPES, ablate, build_pipeline, full_scan_run,
                    run_workload, skewed_workload, tune_transform,
                    write_results_csv)
from .query import QueryError, parse_workload, write_workload
from .querylog import QueryLog
from .reorder import reorder_nodes
from .schema import (Dataset, DatasetFormatError, load_dataset, read_vec_file,
                     save_dataset, write_vec_file)
from .scoring import score_candidates
from .synth import KINDS, SyntheticSpec, generate_synthetic
from .transform import TransformError
from .tree import ClusterTree, IndexFormatError

log = logging.getLogger(__name__)

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}
_CASTS = {"bool": lambda s: _BOOL_WORDS[s.strip().lower()],
          "int": int, "float": float, "str": str}


def _read_config(path: str) -> dict[str, str]:
    """Flat key=value file; blank lines and # comments skipped."""
    out = {}
    known = {f.name for f in fields(PipelineConfig)}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
        out[key] = val.strip()
    return out


def _pipeline_config(args) -> PipelineConfig:
    """Builtin defaults < config file < command line flags."""
    file_vals = _read_config(args.config) if getattr(args, "config", None) else {}
    kwargs = {}
    for f in fields(PipelineConfig):
        val = getattr(args, f.name, None)
        if val is None and f.name in file_vals:
            try:
                val = _CASTS[f.type](file_vals[f.name])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"config key {f.name}: {exc}") from exc
        if val is not None:
            kwargs[f.name] = val
    return PipelineConfig(**kwargs)


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags win")
    p.add_argument("--no-enhance", dest="enhance", action="store_false",
                   default=None, help="index raw features (identity transform)")
    p.add_argument("--no-move", dest="move", action="store_false", default=None,
                   help="skip attraction-based point movement")
    p.add_argument("--move-iterations", type=int, default=None)
    p.add_argument("--r-factor", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--partitions", type=int, default=None)
    p.add_argument("--delta", type=float, default=None,
                   help="leaf acceptance threshold on model hit ratio")
    p.add_argument("--min-leaf", type=int, default=None)
    p.add_argument("--fallback-branch", type=int, default=None)
    p.add_argument("--dpc-sample-cap", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--no-move-per-level", dest="move_per_level",
                   action="store_false", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--sampling", type=float, default=None,
                   help="fraction of queries double-checked with a full scan")
    p.add_argument("--budget", type=int, default=None,
                   help="transform tuning evaluation budget")
    p.add_argument("--n-regions", type=int, default=None)
    p.add_argument("--l-init", type=float, default=None)
    p.add_argument("--l-min", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--w-time", type=float, default=None)
    p.add_argument("--w-cbr", type=float, default=None)
    p.add_argument("--w-acc", type=float, default=None)
    p.add_argument("--tune-rows", type=int, default=None)
    p.add_argument("--tune-queries", type=int, default=None)
    p.add_argument("--perm-cap", type=int, default=None)
    p.add_argument("--perm-budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)


def _out_dir(args) -> Path:
    out = getattr(args, "out_dir", None)
    if not out:
        out = Path("run") / datetime.now().strftime("%Y%m%d-%H%M%S")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, cfg: PipelineConfig, extra: dict) -> None:
    with open(out / "config.echo", "w", encoding="utf-8") as f:
        for key, val in list(extra.items()) + cfg.items():
            f.write(f"{key}={val}\n")


def _load_pair(args) -> tuple[Dataset, ClusterTree]:
    dataset = load_dataset(args.dataset)
    tree = ClusterTree.load(args.index, dataset)
    return dataset, tree


def _write_report(out: Path, title: str, lines: list[str]) -> None:
    with open(out / "report.md", "w", encoding="utf-8") as f:
        f.write(f"# {title}\n\n")
        f.write("\n".join(lines) + "\n")


def _summary_lines(summary: RunSummary, tree: ClusterTree | None) -> list[str]:
    lines = []
    if tree is not None:
        st = tree.stats()
        lines.append("| index | value |")
        lines.append("|---|---|")
        for key in ("m", "n", "node_count", "leaf_count", "depth"):
            lines.append(f"| {key} | {st[key]} |")
        lines.append("")
    per_type: dict[str, list] = {}
    for rec, row in zip(summary.records, summary.qlog.rows):
        per_type.setdefault(row.query_type, []).append((rec, row))
    lines.append("| query type | count | mean ms | median ms | mean cbr |"
                 " accuracy | recall@k |")
    lines.append("|---|---|---|---|---|---|---|")
    for qt in sorted(per_type):
        pairs = per_type[qt]
        ts = np.array([rec.seconds for rec, _ in pairs])
        cbrs = np.array([rec.trace.cbr for rec, _ in pairs])
        accs = [row.query_accuracy for _, row in pairs
                if row.query_accuracy is not None]
        recs = [row.recall_at_k for _, row in pairs
                if row.recall_at_k is not None]
        fmt = lambda xs: f"{float(np.mean(xs)):.4f}" if xs else "-"
        lines.append(f"| {qt} | {len(pairs)} | {1e3 * ts.mean():.3f} |"
                     f" {1e3 * np.median(ts):.3f} | {cbrs.mean():.4f} |"
                     f" {fmt(accs)} | {fmt(recs)} |")
    lines.append("")
    lines.append(f"overall: {len(summary.records)} queries, mean"
                 f" {1e3 * summary.mean_seconds:.3f} ms, median"
                 f" {1e3 * summary.median_seconds:.3f} ms, mean cbr"
                 f" {summary.mean_cbr:.4f}")
    return lines


# ---- subcommands ----

def cmd_gen(args) -> int:
    spec = SyntheticSpec(kind=args.kind, m=args.m, n=args.n, seed=args.seed,
                         components=args.components, spread=args.spread,
                         exponent=args.exponent)
    dataset = generate_synthetic(spec)
    save_dataset(args.out, dataset)
    print(f"wrote {dataset.m} records ({dataset.name}) to {args.out}")
    if args.vec_out:
        attr = args.vec_attr
        if attr not in dataset.schema:
            raise ValueError(f"no attribute {attr!r} in generated schema")
        write_vec_file(args.vec_out, dataset.columns[attr])
        print(f"wrote raw vectors for {attr} to {args.vec_out}")
    return 0


def cmd_build(args) -> int:
    cfg = _pipeline_config(args)
    dataset = load_dataset(args.dataset)
    t0 = time.perf_counter()
    tree = build_pipeline(dataset, cfg)
    secs = time.perf_counter() - t0
    tree.save(args.index_out)
    st = tree.stats()
    print(f"built index over {st['m']} records in {secs:.2f}s:"
          f" {st['node_count']} nodes, {st['leaf_count']} leaves,"
          f" depth {st['depth']}")
    for line in tree.report.rows():
        print("  " + line)
    print(f"wrote {args.index_out}")
    return 0


def cmd_query(args) -> int:
    cfg = _pipeline_config(args)
    dataset, tree = _load_pair(args)
    queries = parse_workload(args.workload)
    if not queries:
        raise ValueError(f"workload {args.workload} is empty")
    out = _out_dir(args)
    summary = run_workload(tree, queries, repeats=cfg.repeats,
                           sampling=cfg.sampling, seed=cfg.seed)
    write_results_csv(out / "results.csv", summary.records)
    summary.qlog.save(out / "qbs.jsonl")
    (out / "dataset.ref").write_text(str(Path(args.dataset).resolve()) + "\n",
                                     encoding="utf-8")
    _echo_config(out, cfg, {"command": "query", "dataset": args.dataset,
                            "index": args.index, "workload": args.workload})
    _write_report(out, f"workload run: {dataset.name}",
                  _summary_lines(summary, tree))
    print(f"ran {len(queries)} queries: mean {1e3 * summary.mean_seconds:.3f} ms,"
          f" median {1e3 * summary.median_seconds:.3f} ms,"
          f" mean cbr {summary.mean_cbr:.4f}")
    print(f"wrote {out}/results.csv, qbs.jsonl, report.md")
    return 0


def cmd_make_workload(args) -> int:
    dataset = load_dataset(args.dataset)
    rng = np.random.default_rng(args.seed)
    gen = WorkloadGen(dataset, rng, k=args.k, nr_selectivity=args.nr_selectivity,
                      vr_selectivity=args.vr_selectivity)
    types = args.types.split(",") if args.types else list(QUERY_TYPES)
    for qt in types:
        if qt not in QUERY_TYPES:
            raise ValueError(f"unknown query type {qt!r};"
                             f" expected one of {', '.join(QUERY_TYPES)}")
    pool = []
    for qt in types:
        pool.extend(gen.batch(qt, args.per_type))
    if args.skew:
        rng2 = np.random.default_rng(args.seed + 1)
        pool = skewed_workload(pool, rng2, len(pool))
    write_workload(args.out, pool)
    print(f"wrote {len(pool)} queries ({', '.join(types)}) to {args.out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _pipeline_config(args)
    dataset = load_dataset(args.dataset)
    queries = parse_workload(args.workload)
    if not queries:
        raise ValueError(f"workload {args.workload} is empty")
    out = _out_dir(args)
    lines = []

    if args.target in ("transform", "both"):
        result = tune_transform(dataset, queries, cfg)
        lines.append(f"- transform tuning: {result.evaluations} evaluations,"
                     f" improved={result.improved},"
                     f" best score {result.best_score:.4f}")
        lines.append(f"- objectives (time, cbr, accuracy):"
                     f" init {result.init_objectives.as_tuple()}"
                     f" -> chosen {result.objectives.as_tuple()}")
        tree = build_pipeline(dataset, cfg, transform=result.transform)
    elif args.index:
        dataset, tree = _load_pair(args)
    else:
        tree = build_pipeline(dataset, cfg)

    if args.target in ("index", "both"):
        rr = reorder_nodes(tree, queries, perm_cap=cfg.perm_cap,
                           perm_budget=cfg.perm_budget)
        lines.append(f"- node reordering: scanned nodes {rr.pre_nodes} ->"
                     f" {rr.post_nodes} over {rr.queries} queries,"
                     f" {rr.permutations_evaluated} permutations tried,"
                     f" reverted={rr.reverted}")

    tree.save(args.index_out)
    lines.append(f"- wrote {args.index_out}")
    _echo_config(out, cfg, {"command": "optimize", "target": args.target,
                            "dataset": args.dataset, "workload": args.workload})
    _write_report(out, f"optimization: {dataset.name}", lines)
    for line in lines:
        print(line)
    return 0


def cmd_ablate(args) -> int:
    cfg = _pipeline_config(args)
    dataset = load_dataset(args.dataset)
    if args.workload:
        queries = parse_workload(args.workload)
    else:
        rng = np.random.default_rng(cfg.seed)
        gen = WorkloadGen(dataset, rng)
        pool = gen.batch("vk", args.gen_queries // 2)
        for qt in ("nr_vk", "vr", "nr"):
            pool.extend(gen.batch(qt, args.gen_queries // 6))
        queries = skewed_workload(pool, rng, args.gen_queries)
    if not queries:
        raise ValueError("ablation workload is empty")
    out = _out_dir(args)
    report, tree = ablate(dataset, queries, cfg)

    lines = ["| stage | mean ms | median ms | mean cbr | accuracy | inherited |",
             "|---|---|---|---|---|---|"]
    for row in report.rows:
        lines.append(f"| {row.stage} | {1e3 * row.mean_seconds:.3f} |"
                     f" {1e3 * row.median_seconds:.3f} | {row.mean_cbr:.4f} |"
                     f" {row.mean_accuracy:.4f} |"
                     f" {'yes' if row.inherited else 'no'} |")
    lines.append("")
    lines.append(f"speedup over full scan: {report.ratio:.2f}x")
    ok, problems = report.check(args.min_ratio)
    lines.extend(f"- FAILED: {p}" for p in problems)
    with open(out / "stages.csv", "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["stage", "mean_seconds", "median_seconds", "mean_cbr",
                     "mean_accuracy", "inherited"])
        for row in report.rows:
            wr.writerow([row.stage, f"{row.mean_seconds:.9f}",
                         f"{row.median_seconds:.9f}", f"{row.mean_cbr:.6f}",
                         f"{row.mean_accuracy:.6f}", int(row.inherited)])
    _echo_config(out, cfg, {"command": "ablate", "dataset": args.dataset})
    _write_report(out, f"ablation: {dataset.name}", lines)
    if args.index_out:
        tree.save(args.index_out)
    for line in lines:
        print(line)
    if getattr(args, "assert_order", False) and not ok:
        print("ablation assertion failed:", "; ".join(problems), file=sys.stderr)
        return 3
    return 0


def cmd_score_embeddings(args) -> int:
    candidates = {}
    for spec in args.features:
        name, _, path = spec.partition("=")
        if not name or not path:
            raise ValueError(f"--features expects name=path, got {spec!r}")
        candidates[name] = read_vec_file(path)
    fidelity = None
    if args.fid:
        fidelity = {}
        for spec in args.fid:
            name, _, val = spec.partition("=")
            if not name or not val:
                raise ValueError(f"--fid expects name=value, got {spec!r}")
            fidelity[name] = float(val)
    workload = None
    if args.workload:
        workload = []
        with open(args.workload, encoding="utf-8") as f:
            for ln, raw in enumerate(f, 1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                    workload.append((int(obj["record"]), int(obj["k"])))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(
                        f"{args.workload}:{ln}: bad top-k pair: {exc}") from exc
    weights = tuple(float(w) for w in args.weights.split(","))
    if len(weights) != 3:
        raise ValueError("--weights expects three comma-separated numbers")
    scores = score_candidates(candidates, weights=weights, workload=workload,
                              fidelity=fidelity, kmeans_k=args.kmeans_k,
                              seed=args.seed)
    rows = [["name", "s1", "s2", "s3", "score"]] + [cs.row() for cs in scores]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            csv.writer(f).writerows(rows)
        print(f"wrote {args.out}")
    for row in rows:
        print(",".join(str(c) for c in row))
    return 0


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    qbs = run / "qbs.jsonl"
    if not qbs.exists():
        raise ValueError(f"{qbs} not found")
    qlog = QueryLog.load(qbs)
    summ = qlog.summary()
    lines = ["| metric | value |", "|---|---|"]
    for key, val in summ.items():
        shown = f"{val:.6f}" if isinstance(val, float) else val
        lines.append(f"| {key} | {shown} |")
    _write_report(run, f"run summary: {run}", lines)
    for line in lines:
        print(line)
    print(f"wrote {run}/report.md")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hlix",
        description="learned cluster-tree index for hybrid numeric + vector"
                    " retrieval")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--m", type=int, required=True, help="record count")
    p.add_argument("--n", type=int, required=True, help="total feature dims")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--components", type=int, default=5)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--exponent", type=float, default=4.0)
    p.add_argument("--out", required=True, help="dataset text file")
    p.add_argument("--vec-out", help="also dump one attribute as a raw"
                                     " vector file")
    p.add_argument("--vec-attr", default="v0")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build an index from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index-out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="run a stored workload against an index")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--workload", required=True, help="query file, one JSON"
                                                     " object per line")
    p.add_argument("--out-dir")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("make-workload", help="sample a random workload from"
                                             " a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--types", help=f"comma list from:"
                                   f" {','.join(QUERY_TYPES)} (default all)")
    p.add_argument("--per-type", type=int, default=50)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--nr-selectivity", type=float, default=0.10)
    p.add_argument("--vr-selectivity", type=float, default=0.04)
    p.add_argument("--skew", action="store_true",
                   help="resample with 80/20 repetition")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_workload)

    p = sub.add_parser("optimize", help="tune the transform and/or reorder"
                                        " tree nodes for a workload")
    p.add_argument("--dataset", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--target", choices=("transform", "index", "both"),
                   default="both")
    p.add_argument("--index", help="existing index (target=index)")
    p.add_argument("--index-out", required=True)
    p.add_argument("--out-dir")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("ablate", help="compare full scan, initialized, tuned"
                                      " and reordered stages")
    p.add_argument("--dataset", required=True)
    p.add_argument("--workload")
    p.add_argument("--gen-queries", type=int, default=120,
                   help="workload size when --workload is omitted")
    p.add_argument("--out-dir")
    p.add_argument("--index-out", help="save the final stage index")
    p.add_argument("--assert", dest="assert_order", action="store_true",
                   help="exit 3 unless stage times improve monotonically")
    p.add_argument("--min-ratio", type=float, default=5.0)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("score-embeddings", help="rank candidate embedding"
                                                " files for a workload")
    p.add_argument("--features", action="append", required=True,
                   metavar="NAME=VEC_FILE")
    p.add_argument("--fid", action="append", metavar="NAME=SCALAR",
                   help="distribution-fidelity scalar, lower is better")
    p.add_argument("--workload", help="JSON lines {\"record\": i, \"k\": k}")
    p.add_argument("--weights", default="0.333,0.334,0.333")
    p.add_argument("--kmeans-k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write scores as csv")
    p.set_defaults(func=cmd_score_embeddings)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetFormatError, IndexFormatError, QueryError, TransformError,
            ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
