"""Per-query telemetry log: one JSON object per line, append-only.

Recall and accuracy are only present on sampled rows where a ground-truth
scan was run alongside the indexed execution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

COLUMNS = ["query_statement", "query_multimodal_object_set", "query_attributes",
           "query_type", "recall_at_k", "cbr", "query_time", "query_accuracy"]


@dataclass
class QueryLogRow:
    query_statement: str
    query_multimodal_object_set: str       # dataset name
    query_attributes: list[str]
    query_type: str
    recall_at_k: float | None
    cbr: float
    query_time: float                      # seconds
    query_accuracy: float | None

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in COLUMNS}


class QueryLog:
    def __init__(self):
        self.rows: list[QueryLogRow] = []

    def append(self, row: QueryLogRow) -> None:
        self.rows.append(row)

    def save(self, path, append: bool = False) -> None:
        mode = "a" if append else "w"
        with open(path, mode, encoding="utf-8", newline="\n") as f:
            for row in self.rows:
                f.write(json.dumps(row.to_json()) + "\n")

    @staticmethod
    def load(path) -> "QueryLog":
        log = QueryLog()
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                log.append(QueryLogRow(**{k: d.get(k) for k in COLUMNS}))
        return log

    def summary(self) -> dict:
        """Aggregate means; recall/accuracy over sampled rows only."""
        n = len(self.rows)
        if n == 0:
            return {"rows": 0}
        times = [r.query_time for r in self.rows]
        cbrs = [r.cbr for r in self.rows]
        recalls = [r.recall_at_k for r in self.rows if r.recall_at_k is not None]
        accs = [r.query_accuracy for r in self.rows if r.query_accuracy is not None]
        out = {
            "rows": n,
            "mean_query_time": sum(times) / n,
            "median_query_time": sorted(times)[n // 2],
            "mean_cbr": sum(cbrs) / n,
            "sampled_rows": len(accs),
        }
        if recalls:
            out["mean_recall_at_k"] = sum(recalls) / len(recalls)
        if accs:
            out["mean_query_accuracy"] = sum(accs) / len(accs)
        return out


def make_row(dataset_name: str, hq, trace, seconds: float,
             recall: float | None = None, accuracy: float | None = None) -> QueryLogRow:
    return QueryLogRow(
        query_statement=hq.statement(),
        query_multimodal_object_set=dataset_name,
        query_attributes=hq.attributes(),
        query_type=hq.type_label(),
        recall_at_k=recall,
        cbr=trace.cbr,
        query_time=seconds,
        query_accuracy=accuracy,
    )
