import numpy as np
import pytest

from hlix.cli import main
from hlix.query import parse_workload
from hlix.schema import load_dataset, read_vec_file, write_vec_file
from hlix.tree import ClusterTree


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared workspace: generated dataset, built index, sampled workload."""
    root = tmp_path_factory.mktemp("cli")
    ds_path = root / "demo.tbl"
    idx_path = root / "demo.idx"
    wl_path = root / "wl.jsonl"
    assert main(["gen", "--kind", "gaussmix", "--m", "1500", "--n", "5",
                 "--seed", "3", "--out", str(ds_path)]) == 0
    assert main(["build", "--dataset", str(ds_path), "--index-out",
                 str(idx_path), "--min-leaf", "64", "--no-move"]) == 0
    assert main(["make-workload", "--dataset", str(ds_path), "--out",
                 str(wl_path), "--types", "nr,vk,vr_nr", "--per-type", "4",
                 "--k", "5", "--seed", "1"]) == 0
    return root, ds_path, idx_path, wl_path


def test_gen_writes_loadable_dataset(ws, tmp_path):
    _, ds_path, _, _ = ws
    ds = load_dataset(ds_path)
    assert ds.m == 1500 and ds.schema.flat_dim == 5
    vec_path = tmp_path / "v0.vec"
    out2 = tmp_path / "two.tbl"
    assert main(["gen", "--kind", "uniform", "--m", "40", "--n", "5",
                 "--out", str(out2), "--vec-out", str(vec_path)]) == 0
    vecs = read_vec_file(vec_path)
    assert vecs.shape == (40, 3)


def test_gen_rejects_unknown_kind(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--kind", "fractal", "--m", "10", "--n", "4",
              "--out", str(tmp_path / "x.tbl")])
    assert exc.value.code == 2


def test_build_output_loads(ws):
    _, ds_path, idx_path, _ = ws
    tree = ClusterTree.load(idx_path, load_dataset(ds_path))
    assert tree.stats()["leaf_count"] >= 1


def test_make_workload_parses(ws):
    _, _, _, wl_path = ws
    queries = parse_workload(wl_path)
    assert len(queries) == 12
    types = {q.type_label() for q in queries}
    assert "VK" in types and "NR" in types


def test_query_run_dir_contents(ws, tmp_path):
    _, ds_path, idx_path, wl_path = ws
    out = tmp_path / "run"
    assert main(["query", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(wl_path), "--out-dir", str(out),
                 "--repeats", "1", "--sampling", "1.0"]) == 0
    for name in ("results.csv", "qbs.jsonl", "report.md", "config.echo",
                 "dataset.ref"):
        assert (out / name).exists(), name
    echo = dict(line.split("=", 1)
                for line in (out / "config.echo").read_text().splitlines())
    assert echo["repeats"] == "1" and echo["sampling"] == "1.0"


def test_config_file_applies_and_flags_win(ws, tmp_path):
    _, ds_path, idx_path, wl_path = ws
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nrepeats = 3\nmin-leaf = 96\n", encoding="utf-8")
    out1 = tmp_path / "r1"
    assert main(["query", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(wl_path), "--out-dir", str(out1),
                 "--config", str(cfg)]) == 0
    echo = dict(line.split("=", 1)
                for line in (out1 / "config.echo").read_text().splitlines())
    assert echo["repeats"] == "3" and echo["min_leaf"] == "96"
    out2 = tmp_path / "r2"
    assert main(["query", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(wl_path), "--out-dir", str(out2),
                 "--config", str(cfg), "--repeats", "1"]) == 0
    echo = dict(line.split("=", 1)
                for line in (out2 / "config.echo").read_text().splitlines())
    assert echo["repeats"] == "1"


def test_unknown_config_key_exits_2(ws, tmp_path):
    _, ds_path, idx_path, wl_path = ws
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp_speed=9\n", encoding="utf-8")
    assert main(["query", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(wl_path), "--out-dir", str(tmp_path / "r"),
                 "--config", str(cfg)]) == 2


def test_bad_workload_exits_2(ws, tmp_path):
    _, ds_path, idx_path, _ = ws
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json at all\n", encoding="utf-8")
    assert main(["query", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(bad), "--out-dir", str(tmp_path / "r")]) == 2


def test_missing_dataset_exits_2(tmp_path):
    assert main(["build", "--dataset", str(tmp_path / "nope.tbl"),
                 "--index-out", str(tmp_path / "x.idx")]) == 2


def test_optimize_index_target(ws, tmp_path):
    _, ds_path, idx_path, wl_path = ws
    out_idx = tmp_path / "opt.idx"
    assert main(["optimize", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(wl_path), "--target", "index",
                 "--index-out", str(out_idx), "--out-dir", str(tmp_path / "o"),
                 "--perm-budget", "10"]) == 0
    tree = ClusterTree.load(out_idx, load_dataset(ds_path))
    assert tree.stats()["leaf_count"] >= 1
    assert (tmp_path / "o" / "report.md").exists()


def test_optimize_transform_target(ws, tmp_path):
    _, ds_path, _, wl_path = ws
    out_idx = tmp_path / "t.idx"
    assert main(["optimize", "--dataset", str(ds_path), "--workload",
                 str(wl_path), "--target", "transform", "--index-out",
                 str(out_idx), "--out-dir", str(tmp_path / "ot"),
                 "--budget", "2", "--tune-rows", "800", "--tune-queries", "6",
                 "--min-leaf", "64", "--no-move"]) == 0
    assert out_idx.exists()


def test_ablate_assert_exit_3(ws, tmp_path):
    _, ds_path, _, wl_path = ws
    args = ["ablate", "--dataset", str(ds_path), "--workload", str(wl_path),
            "--out-dir", str(tmp_path / "ab"), "--min-leaf", "64", "--no-move",
            "--repeats", "1", "--sampling", "0.2", "--budget", "2",
            "--tune-rows", "800", "--tune-queries", "6", "--perm-budget", "10",
            "--min-ratio", "1e9"]
    assert main(args) == 0
    assert (tmp_path / "ab" / "stages.csv").exists()
    assert main(args + ["--assert"]) == 3


def test_score_embeddings_cli(tmp_path):
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(4, 6))
    good = np.repeat(centers, 30, axis=0) + 0.02 * rng.normal(size=(120, 6))
    bad = rng.normal(size=(120, 6))
    good_p, bad_p = tmp_path / "good.vec", tmp_path / "bad.vec"
    write_vec_file(good_p, good)
    write_vec_file(bad_p, bad)
    out = tmp_path / "scores.csv"
    assert main(["score-embeddings", "--features", f"good={good_p}",
                 "--features", f"bad={bad_p}", "--fid", "good=0.1",
                 "--fid", "bad=0.9", "--kmeans-k", "4", "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("name,") and len(rows) == 3
    assert rows[1].split(",")[0] == "good"
    assert main(["score-embeddings", "--features", "noequals"]) == 2


def test_report_command(ws, tmp_path):
    _, ds_path, idx_path, wl_path = ws
    out = tmp_path / "rr"
    assert main(["query", "--dataset", str(ds_path), "--index", str(idx_path),
                 "--workload", str(wl_path), "--out-dir", str(out),
                 "--repeats", "1"]) == 0
    assert main(["report", "--run-dir", str(out)]) == 0
    assert "mean" in (out / "report.md").read_text()
    assert main(["report", "--run-dir", str(tmp_path / "empty")]) == 2
