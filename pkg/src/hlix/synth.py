"""Deterministic synthetic dataset generators: uniform, Gaussian mixture, skewed.

All three draw an (m, n) point cloud in [0, 1]^n from a seeded generator and
then slice the columns into a numeric/vector attribute layout, so the same
seed always reproduces the same records and the same ground-truth structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schema import Attribute, AttributeSchema, Dataset, NUMERIC, VECTOR

UNIFORM = "uniform"
GAUSSMIX = "gaussmix"
SKEWED = "skewed"

KINDS = (UNIFORM, GAUSSMIX, SKEWED)


def default_layout(n: int) -> tuple[tuple, ...]:
    """Split n flat dimensions into attributes: two numerics and up to two
    vector attributes when room allows, so every query type has a target."""
    if n <= 0:
        raise ValueError("n must be >= 1")
    if n == 1:
        return (("a0", NUMERIC),)
    if n == 2:
        return (("a0", NUMERIC), ("a1", NUMERIC))
    if n == 3:
        return (("a0", NUMERIC), ("v0", VECTOR, 2))
    if n <= 5:
        return (("a0", NUMERIC), ("a1", NUMERIC), ("v0", VECTOR, n - 2))
    rest = n - 2
    d0 = (rest + 1) // 2
    return (("a0", NUMERIC), ("a1", NUMERIC),
            ("v0", VECTOR, d0), ("v1", VECTOR, rest - d0))


@dataclass
class SyntheticSpec:
    kind: str
    m: int
    n: int
    seed: int = 0
    components: int = 5          # gaussmix mixture size
    spread: float = 0.05         # gaussmix per-component std
    exponent: float = 4.0        # skewed power-law exponent
    layout: tuple | None = None  # (name, kind[, dim]) tuples; default split of n

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.m < 0 or self.n < 1:
            raise ValueError("need m >= 0 and n >= 1")
        if self.kind == GAUSSMIX and self.components < 1:
            raise ValueError("components must be >= 1")
        if self.kind == SKEWED and self.exponent <= 0:
            raise ValueError("exponent must be > 0")

    def schema(self) -> AttributeSchema:
        layout = self.layout or default_layout(self.n)
        attrs = tuple(Attribute(*t) for t in layout)
        schema = AttributeSchema(attrs)
        if schema.flat_dim != self.n:
            raise ValueError(f"layout covers {schema.flat_dim} dims, expected {self.n}")
        return schema


def sample_points(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw the raw (m, n) cloud. Returns (points, labels); labels are the
    mixture component per record for gaussmix, zeros otherwise."""
    rng = np.random.default_rng(spec.seed)
    m, n = spec.m, spec.n
    if spec.kind == UNIFORM:
        return rng.random((m, n)), np.zeros(m, dtype=np.int64)
    if spec.kind == SKEWED:
        return rng.random((m, n)) ** spec.exponent, np.zeros(m, dtype=np.int64)
    k = spec.components
    centers = rng.random((k, n))
    labels = rng.integers(0, k, size=m)
    pts = centers[labels] + rng.normal(0.0, spec.spread, size=(m, n))
    return pts, labels


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    pts, _ = sample_points(spec)
    schema = spec.schema()
    cols: dict[str, np.ndarray] = {}
    c = 0
    for a in schema.attributes:
        if a.kind == NUMERIC:
            cols[a.name] = pts[:, c].copy()
        else:
            cols[a.name] = pts[:, c:c + a.dim].copy()
        c += a.dim
    return Dataset(schema, cols, name=f"{spec.kind}-m{spec.m}-n{spec.n}-s{spec.seed}")
