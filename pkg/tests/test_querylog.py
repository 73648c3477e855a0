import json

import numpy as np

from hlix.engine import ExecutionTrace
from hlix.query import BasicQuery, HybridQuery
from hlix.querylog import COLUMNS, QueryLog, QueryLogRow, make_row


def sample_row(recall=0.9, acc=0.95, t=0.002):
    hq = HybridQuery((BasicQuery("nr", "a0", lo=0.1, hi=0.4),
                      BasicQuery("vk", "v0", q=(0.1, 0.2), k=5)), "and")
    trace = ExecutionTrace(cbr=0.25)
    return make_row("demo", hq, trace, t, recall=recall, accuracy=acc)


def test_row_carries_query_descriptors():
    row = sample_row()
    assert row.query_multimodal_object_set == "demo"
    assert row.query_attributes == ["a0", "v0"]
    assert row.query_type == "NR&VK"
    assert "nr(" in row.query_statement and "vk(" in row.query_statement
    assert row.cbr == 0.25


def test_json_objects_use_exactly_the_declared_columns(tmp_path):
    log = QueryLog()
    log.append(sample_row())
    log.append(sample_row(recall=None, acc=None))
    path = tmp_path / "qlog.jsonl"
    log.save(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 2
    for line in lines:
        assert list(json.loads(line).keys()) == COLUMNS


def test_round_trip(tmp_path):
    log = QueryLog()
    log.append(sample_row())
    log.append(sample_row(recall=None, acc=None, t=0.004))
    path = tmp_path / "qlog.jsonl"
    log.save(path)
    back = QueryLog.load(path)
    assert [r.to_json() for r in back.rows] == [r.to_json() for r in log.rows]


def test_append_mode_extends_file(tmp_path):
    path = tmp_path / "qlog.jsonl"
    first = QueryLog()
    first.append(sample_row())
    first.save(path)
    second = QueryLog()
    second.append(sample_row(t=0.01))
    second.save(path, append=True)
    assert len(QueryLog.load(path).rows) == 2


def test_summary_filters_unsampled_rows():
    log = QueryLog()
    log.append(sample_row(recall=1.0, acc=1.0, t=0.002))
    log.append(sample_row(recall=None, acc=None, t=0.006))
    log.append(sample_row(recall=0.5, acc=0.8, t=0.004))
    s = log.summary()
    assert s["rows"] == 3
    assert s["sampled_rows"] == 2
    assert np.isclose(s["mean_query_time"], 0.004)
    assert np.isclose(s["mean_recall_at_k"], 0.75)
    assert np.isclose(s["mean_query_accuracy"], 0.9)


def test_empty_summary():
    assert QueryLog().summary() == {"rows": 0}


def test_load_skips_blank_lines(tmp_path):
    path = tmp_path / "qlog.jsonl"
    row = sample_row()
    path.write_text(json.dumps(row.to_json()) + "\n\n" +
                    json.dumps(row.to_json()) + "\n")
    assert len(QueryLog.load(path).rows) == 2
