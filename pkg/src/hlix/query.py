"""Query model: four basic predicates, fold-combined hybrids, result sets.

Basic predicates: numeric equality (ne), numeric range (nr), vector k nearest
neighbors (vk), vector radius (vr). A hybrid query folds its operand list with
a single combiner, intersection ("and") or union ("or"). All vector distances
are Euclidean; vk ties break toward the smaller record id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

NE, NR, VK, VR = "ne", "nr", "vk", "vr"
BASIC_KINDS = (NE, NR, VK, VR)

EXACT = "exact"
APPROX = "approx"


class QueryError(ValueError):
    """Ill-formed query (unknown attribute, bad parameters, bad combination)."""


@dataclass(frozen=True)
class BasicQuery:
    kind: str
    attr: str
    value: float | None = None          # ne
    lo: float | None = None             # nr
    hi: float | None = None             # nr
    q: tuple[float, ...] | None = None  # vk / vr center
    k: int | None = None                # vk
    r: float | None = None              # vr

    def __post_init__(self):
        if self.kind not in BASIC_KINDS:
            raise QueryError(f"unknown query kind {self.kind!r}")
        if self.kind == NE and self.value is None:
            raise QueryError("ne needs value")
        if self.kind == NR:
            if self.lo is None or self.hi is None:
                raise QueryError("nr needs lo and hi")
            if self.lo > self.hi:
                raise QueryError("nr needs lo <= hi")
        if self.kind in (VK, VR):
            if self.q is None or len(self.q) == 0:
                raise QueryError(f"{self.kind} needs a query vector")
            object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        if self.kind == VK and (self.k is None or self.k < 1):
            raise QueryError("vk needs k >= 1")
        if self.kind == VR and (self.r is None or self.r < 0):
            raise QueryError("vr needs r >= 0")

    def qvec(self) -> np.ndarray:
        return np.asarray(self.q, dtype=np.float64)

    def statement(self) -> str:
        if self.kind == NE:
            return f"ne({self.attr},{self.value:.6g})"
        if self.kind == NR:
            return f"nr({self.attr},{self.lo:.6g},{self.hi:.6g})"
        digest = hashlib.sha1(np.asarray(self.q).tobytes()).hexdigest()[:8]
        if self.kind == VK:
            return f"vk({self.attr},k={self.k},q={digest})"
        return f"vr({self.attr},r={self.r:.6g},q={digest})"

    def to_json(self) -> dict:
        d: dict = {"kind": self.kind, "attr": self.attr}
        if self.kind == NE:
            d["value"] = self.value
        elif self.kind == NR:
            d["lo"], d["hi"] = self.lo, self.hi
        elif self.kind == VK:
            d["q"], d["k"] = list(self.q), self.k
        else:
            d["q"], d["r"] = list(self.q), self.r
        return d

    @staticmethod
    def from_json(d: dict) -> "BasicQuery":
        kind = d.get("kind")
        if kind == NE:
            return BasicQuery(NE, d["attr"], value=float(d["value"]))
        if kind == NR:
            return BasicQuery(NR, d["attr"], lo=float(d["lo"]), hi=float(d["hi"]))
        if kind == VK:
            return BasicQuery(VK, d["attr"], q=tuple(d["q"]), k=int(d["k"]))
        if kind == VR:
            return BasicQuery(VR, d["attr"], q=tuple(d["q"]), r=float(d["r"]))
        raise QueryError(f"unknown query kind {kind!r}")


@dataclass(frozen=True)
class HybridQuery:
    ops: tuple[BasicQuery, ...]
    combine: str = "and"
    mode: str = EXACT
    budget: int | None = None   # approx: max leaves visited

    def __post_init__(self):
        if not self.ops:
            raise QueryError("query needs at least one operand")
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.combine not in ("and", "or"):
            raise QueryError(f"combine must be 'and' or 'or', got {self.combine!r}")
        if self.mode not in (EXACT, APPROX):
            raise QueryError(f"mode must be 'exact' or 'approx', got {self.mode!r}")
        if self.mode == APPROX and (self.budget is None or self.budget < 1):
            raise QueryError("approx mode needs budget >= 1")
        if self.combine == "and" and sum(op.kind == VK for op in self.ops) > 1:
            raise QueryError("at most one vk operand under 'and'")

    @staticmethod
    def single(op: BasicQuery, mode: str = EXACT, budget: int | None = None) -> "HybridQuery":
        return HybridQuery((op,), "and", mode, budget)

    @property
    def is_ranked(self) -> bool:
        """Ranked semantics: a lone vk, or vk-driven intersection."""
        return self.combine == "and" and any(op.kind == VK for op in self.ops)

    def vk_op(self) -> BasicQuery | None:
        for op in self.ops:
            if op.kind == VK:
                return op
        return None

    def type_label(self) -> str:
        kinds = [op.kind for op in self.ops]
        if len(kinds) == 1:
            return kinds[0].upper()
        sep = "&" if self.combine == "and" else "|"
        return sep.join(k.upper() for k in kinds)

    def attributes(self) -> list[str]:
        seen: list[str] = []
        for op in self.ops:
            if op.attr not in seen:
                seen.append(op.attr)
        return seen

    def statement(self) -> str:
        inner = ",".join(op.statement() for op in self.ops)
        head = "and" if self.combine == "and" else "or"
        if self.mode == APPROX:
            return f"{head}[approx:{self.budget}]({inner})"
        return f"{head}({inner})"

    def to_json(self) -> dict:
        d: dict = {"ops": [op.to_json() for op in self.ops], "combine": self.combine,
                   "mode": self.mode}
        if self.budget is not None:
            d["budget"] = self.budget
        return d

    @staticmethod
    def from_json(d: dict) -> "HybridQuery":
        ops = tuple(BasicQuery.from_json(o) for o in d.get("ops", []))
        budget = d.get("budget")
        return HybridQuery(ops, d.get("combine", "and"), d.get("mode", EXACT),
                           None if budget is None else int(budget))


@dataclass
class ResultSet:
    """Either a ranked list (vk semantics) or a plain id set."""

    kind: str                                   # "ranked" | "set"
    ids: np.ndarray                             # set: sorted ids; ranked: rank order
    distances: np.ndarray | None = None         # ranked only, aligned with ids
    provenance: str = ""

    @staticmethod
    def from_ids(ids, provenance: str = "") -> "ResultSet":
        arr = np.unique(np.asarray(list(ids) if isinstance(ids, (set, frozenset)) else ids,
                                   dtype=np.int64))
        return ResultSet("set", arr, None, provenance)

    @staticmethod
    def from_ranked(pairs: list[tuple[int, float]], provenance: str = "") -> "ResultSet":
        ids = np.asarray([p[0] for p in pairs], dtype=np.int64)
        dists = np.asarray([p[1] for p in pairs], dtype=np.float64)
        return ResultSet("ranked", ids, dists, provenance)

    def id_set(self) -> frozenset:
        return frozenset(int(i) for i in self.ids)

    def top(self, k: int) -> list[int]:
        return [int(i) for i in self.ids[:k]]

    def __len__(self) -> int:
        return len(self.ids)

    def csv_rows(self, query_id) -> list[tuple]:
        """Rows for the result export: query_id, rank, record_id, distance.
        Set results are listed id-ascending with empty rank/distance slots."""
        rows = []
        if self.kind == "ranked":
            for rank, rid in enumerate(self.ids):
                rows.append((query_id, rank, int(rid), float(self.distances[rank])))
        else:
            for rid in self.ids:
                rows.append((query_id, "", int(rid), ""))
        return rows


def write_workload(path, queries: list[HybridQuery]) -> None:
    """One query object per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for q in queries:
            f.write(json.dumps(q.to_json()) + "\n")


def parse_workload(path) -> list[HybridQuery]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(HybridQuery.from_json(json.loads(line)))
            except (json.JSONDecodeError, QueryError, KeyError, TypeError) as e:
                raise QueryError(f"workload line {i}: {e}") from e
    return out
