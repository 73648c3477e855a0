"""Dataset model: typed attribute schemas, columnar storage, text/binary IO.

Records are rows over a fixed schema of numeric and fixed-width vector
attributes. Storage is columnar (one ndarray per attribute) so scans and
predicate checks stay vectorized; record ids are dense 0..m-1 row indices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

NUMERIC = "numeric"
VECTOR = "vector"


class DatasetFormatError(ValueError):
    """Malformed dataset file (message carries the offending row index)."""


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    dim: int = 1

    def __post_init__(self):
        if self.kind not in (NUMERIC, VECTOR):
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if self.kind == NUMERIC and self.dim != 1:
            raise ValueError("numeric attributes have dim 1")
        if self.dim < 1:
            raise ValueError("attribute dim must be >= 1")

    def header_token(self) -> str:
        if self.kind == NUMERIC:
            return f"{self.name}:numeric"
        return f"{self.name}:vector:{self.dim}"


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate attribute names")

    @staticmethod
    def of(*specs: tuple) -> "AttributeSchema":
        """Build from (name, kind[, dim]) tuples."""
        attrs = []
        for s in specs:
            if len(s) == 2:
                attrs.append(Attribute(s[0], s[1]))
            else:
                attrs.append(Attribute(s[0], s[1], s[2]))
        return AttributeSchema(tuple(attrs))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def flat_dim(self) -> int:
        return sum(a.dim for a in self.attributes)

    def __getitem__(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def header_line(self) -> str:
        return "#schema " + ",".join(a.header_token() for a in self.attributes)

    @staticmethod
    def parse_header(line: str) -> "AttributeSchema":
        body = line[len("#schema"):].strip()
        attrs = []
        for tok in body.split(","):
            parts = tok.strip().split(":")
            if len(parts) == 2 and parts[1] == NUMERIC:
                attrs.append(Attribute(parts[0], NUMERIC))
            elif len(parts) == 3 and parts[1] == VECTOR:
                attrs.append(Attribute(parts[0], VECTOR, int(parts[2])))
            else:
                raise DatasetFormatError(f"bad schema token {tok!r}")
        return AttributeSchema(tuple(attrs))


@dataclass
class Dataset:
    """Columnar record store. columns[name] is (m,) for numeric, (m,d) for vector."""

    schema: AttributeSchema
    columns: dict[str, np.ndarray]
    name: str = "dataset"

    def __post_init__(self):
        m = self.m
        for a in self.schema.attributes:
            col = np.asarray(self.columns[a.name], dtype=np.float64)
            if a.kind == NUMERIC:
                col = col.reshape(m)
            else:
                col = col.reshape(m, a.dim)
            self.columns[a.name] = col

    @property
    def m(self) -> int:
        if not self.schema.attributes:
            return 0
        first = self.schema.attributes[0].name
        return len(self.columns[first])

    def record(self, rid: int) -> dict:
        out = {}
        for a in self.schema.attributes:
            v = self.columns[a.name][rid]
            out[a.name] = float(v) if a.kind == NUMERIC else np.array(v)
        return out

    @staticmethod
    def empty(schema: AttributeSchema, name: str = "dataset") -> "Dataset":
        cols = {}
        for a in schema.attributes:
            shape = (0,) if a.kind == NUMERIC else (0, a.dim)
            cols[a.name] = np.zeros(shape)
        return Dataset(schema, cols, name=name)


@dataclass
class FeatureMatrix:
    """Flattened float64 view of selected attributes, column order = schema order."""

    matrix: np.ndarray                       # (m, n)
    column_map: list[tuple[str, int]]        # per matrix column: (attribute, component)
    attr_slices: dict[str, slice] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


def assemble(dataset: Dataset, attrs: list[str] | None = None) -> FeatureMatrix:
    """Stack the selected attributes (default: all) into one (m, n) matrix."""
    if attrs is None:
        attrs = dataset.schema.names
    blocks = []
    column_map: list[tuple[str, int]] = []
    attr_slices: dict[str, slice] = {}
    col = 0
    for name in attrs:
        a = dataset.schema[name]
        if a.kind == NUMERIC:
            blocks.append(dataset.columns[name].reshape(-1, 1))
        else:
            blocks.append(dataset.columns[name])
        attr_slices[name] = slice(col, col + a.dim)
        for c in range(a.dim):
            column_map.append((name, c))
        col += a.dim
    if blocks:
        matrix = np.ascontiguousarray(np.hstack(blocks), dtype=np.float64)
    else:
        matrix = np.zeros((dataset.m, 0))
    return FeatureMatrix(matrix, column_map, attr_slices)


def save_dataset(path, dataset: Dataset) -> None:
    """Text format: header line `#schema ...`, then one comma-separated row per
    record; vector components are space-separated inside their field."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dataset.schema.header_line() + "\n")
        m = dataset.m
        cols = [dataset.columns[a.name] for a in dataset.schema.attributes]
        kinds = [a.kind for a in dataset.schema.attributes]
        for i in range(m):
            fields = []
            for col, kind in zip(cols, kinds):
                if kind == NUMERIC:
                    fields.append(repr(float(col[i])))
                else:
                    fields.append(" ".join(repr(float(x)) for x in col[i]))
            f.write(",".join(fields) + "\n")


def load_dataset(path, schema: AttributeSchema | None = None,
                 name: str | None = None) -> Dataset:
    """Read the text format. A `#schema` header, when present, must agree with
    the `schema` argument if both are given; an empty file with an explicit
    schema loads as an empty dataset."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    row_start = 0
    if lines and lines[0].startswith("#schema"):
        header = AttributeSchema.parse_header(lines[0])
        row_start = 1
        if schema is not None and header != schema:
            raise DatasetFormatError("schema header does not match expected schema")
        schema = header
    if schema is None:
        raise DatasetFormatError("no schema header and no schema argument")

    rows = [ln for ln in lines[row_start:] if ln.strip()]
    m = len(rows)
    cols: dict[str, np.ndarray] = {}
    for a in schema.attributes:
        shape = (m,) if a.kind == NUMERIC else (m, a.dim)
        cols[a.name] = np.zeros(shape)
    for i, ln in enumerate(rows):
        fields = ln.split(",")
        if len(fields) != len(schema.attributes):
            raise DatasetFormatError(
                f"row {i}: expected {len(schema.attributes)} fields, got {len(fields)}")
        for a, fv in zip(schema.attributes, fields):
            try:
                if a.kind == NUMERIC:
                    cols[a.name][i] = float(fv)
                else:
                    parts = fv.split()
                    if len(parts) != a.dim:
                        raise ValueError(f"expected {a.dim} components")
                    cols[a.name][i] = [float(x) for x in parts]
            except ValueError as e:
                raise DatasetFormatError(f"row {i}: attribute {a.name!r}: {e}") from e
    return Dataset(schema, cols, name=name or str(path))


def write_vec_file(path, matrix: np.ndarray) -> None:
    """Raw vector file: per record an int32 dimension then that many float32
    components, all little-endian."""
    matrix = np.asarray(matrix, dtype=np.float32)
    m, d = matrix.shape
    with open(path, "wb") as f:
        dim = struct.pack("<i", d)
        for i in range(m):
            f.write(dim)
            f.write(matrix[i].astype("<f4").tobytes())


def read_vec_file(path) -> np.ndarray:
    """Read the raw vector format back into an (m, d) float64 matrix."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob:
        return np.zeros((0, 0))
    (d,) = struct.unpack_from("<i", blob, 0)
    if d <= 0:
        raise DatasetFormatError("record 0: nonpositive dimension")
    rec = 4 + 4 * d
    if len(blob) % rec != 0:
        raise DatasetFormatError("truncated vector file")
    m = len(blob) // rec
    out = np.zeros((m, d))
    for i in range(m):
        (di,) = struct.unpack_from("<i", blob, i * rec)
        if di != d:
            raise DatasetFormatError(f"record {i}: dimension {di} != {d}")
        out[i] = np.frombuffer(blob, dtype="<f4", count=d, offset=i * rec + 4)
    return out


def vec_file_dataset(path, attr_name: str = "vec", name: str | None = None) -> Dataset:
    mat = read_vec_file(path)
    schema = AttributeSchema.of((attr_name, VECTOR, mat.shape[1] if mat.size else 1))
    return Dataset(schema, {attr_name: mat}, name=name or str(path))
