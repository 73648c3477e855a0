"""Invertible linear layout transform: rotate to principal axes, then scale.

The transform T = R diag(S) is built from the eigendecomposition of the data
covariance: R holds orthonormal eigenvectors (descending eigenvalue order) and
S the square roots of the eigenvalues. Rows are mean-centered before mapping,
so enhanced  = (x - center) T.  Because R is orthonormal and S diagonal, for
any two rows sigma_min * |x - y| <= |(x - y) T| <= sigma_max * |x - y|, which
is what the index later leans on for sound pruning.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"HLTR1"

ORTHO_TOL = 1e-8        # max |R^T R - I|
ROUNDTRIP_TOL = 1e-6    # relative round-trip error
SYM_TOL = 1e-10         # covariance symmetry tolerance


class TransformError(ValueError):
    pass


@dataclass
class Transform:
    R: np.ndarray        # (n, n), orthonormal columns
    S: np.ndarray        # (n,), strictly positive diagonal
    center: np.ndarray   # (n,)

    def __post_init__(self):
        self.R = np.ascontiguousarray(self.R, dtype=np.float64)
        self.S = np.ascontiguousarray(self.S, dtype=np.float64)
        self.center = np.ascontiguousarray(self.center, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def T(self) -> np.ndarray:
        return self.R * self.S[None, :]

    @property
    def T_inv(self) -> np.ndarray:
        return (1.0 / self.S)[:, None] * self.R.T

    @property
    def sigma_max(self) -> float:
        return float(np.max(self.S))

    @property
    def sigma_min(self) -> float:
        return float(np.min(self.S))

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.center) @ self.T

    def invert(self, Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        return Y @ self.T_inv + self.center

    def validate(self, X: np.ndarray | None = None) -> None:
        """Check orthonormality, positive scaling, and (optionally) that the
        round trip of X keeps relative error within tolerance."""
        n = self.n
        gram = self.R.T @ self.R
        if np.max(np.abs(gram - np.eye(n))) > ORTHO_TOL:
            raise TransformError("rotation is not orthonormal within tolerance")
        if np.any(self.S <= 0):
            raise TransformError("scaling diagonal must be strictly positive")
        if X is not None and len(X):
            back = self.invert(self.apply(X))
            scale = max(1.0, float(np.max(np.abs(X))))
            err = float(np.max(np.abs(back - X))) / scale
            if err > ROUNDTRIP_TOL:
                raise TransformError(f"round-trip error {err:.3e} above tolerance")

    @staticmethod
    def identity(n: int) -> "Transform":
        return Transform(np.eye(n), np.ones(n), np.zeros(n))

    def to_bytes(self) -> bytes:
        n = self.n
        head = MAGIC + struct.pack("<BI", 1, n)
        return (head + self.R.astype("<f8").tobytes()
                + self.S.astype("<f8").tobytes()
                + self.center.astype("<f8").tobytes())

    @staticmethod
    def from_bytes(blob: bytes) -> "Transform":
        if blob[:5] != MAGIC:
            raise TransformError("bad transform magic")
        ver, n = struct.unpack_from("<BI", blob, 5)
        if ver != 1:
            raise TransformError(f"unsupported transform version {ver}")
        off = 5 + 5
        need = off + 8 * (n * n + 2 * n)
        if len(blob) < need:
            raise TransformError("truncated transform blob")
        R = np.frombuffer(blob, dtype="<f8", count=n * n, offset=off).reshape(n, n)
        off += 8 * n * n
        S = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        off += 8 * n
        center = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        return Transform(R.copy(), S.copy(), center.copy())

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @staticmethod
    def load(path) -> "Transform":
        with open(path, "rb") as f:
            return Transform.from_bytes(f.read())


def covariance(X: np.ndarray) -> np.ndarray:
    """Sample covariance (rows are observations, 1/(m-1) normalization)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        return np.zeros((X.shape[1], X.shape[1]))
    mu = X.mean(axis=0)
    D = X - mu
    return (D.T @ D) / (X.shape[0] - 1)


def eigen_sym(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.
    Returns (values, vectors); vectors are columns aligned with values."""
    C = np.asarray(C, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(C))) if C.size else 1.0)
    if np.max(np.abs(C - C.T)) > SYM_TOL * scale:
        raise TransformError("matrix is not symmetric within tolerance")
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def init_transform(X: np.ndarray) -> Transform:
    """Principal-axis transform of the data: R from the covariance eigenbasis,
    S = sqrt(eigenvalues) floored away from zero, center = column means."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise TransformError("expected an (m, n) matrix")
    n = X.shape[1]
    if X.shape[0] < 2:
        return Transform.identity(n)
    center = X.mean(axis=0)
    vals, vecs = eigen_sym(covariance(X))
    floor = max(1e-12, float(vals[0]) * 1e-12) if vals.size else 1e-12
    S = np.sqrt(np.maximum(vals, floor))
    t = Transform(vecs, S, center)
    t.validate()
    return t
