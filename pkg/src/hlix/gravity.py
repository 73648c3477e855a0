"""Gravitational point movement: pull each point toward its local mass.

Every sweep recomputes the field scale G (mean nearest-neighbor distance) and
applies, to each point, the sum of pairwise forces from all neighbors within
radius r_factor * G. The signed force weight w(d) = d - G/c is attractive for
d >= G/c and repulsive below, so clusters condense without collapsing onto a
single point. Updates are synchronous per sweep and each step is clipped to
magnitude G.

The sweep is computed in fixed-size row chunks; `partitions` only distributes
those chunks over worker threads, so the output is bit-identical for any
partition count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

CHUNK = 512


@dataclass
class MoveResult:
    moved: np.ndarray            # final positions
    M: np.ndarray                # displacement matrix, final - initial
    g_per_sweep: list[float] = field(default_factory=list)
    radius_per_sweep: list[float] = field(default_factory=list)


def mean_nn_distance(points: np.ndarray) -> float:
    """Mean distance from each point to its nearest other point (exact)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("mean_nn_distance needs at least 2 points")
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return float(np.mean(d[:, 1]))


def _force_chunk(P: np.ndarray, norms2: np.ndarray, a: int, b: int,
                 radius: float, threshold: float, out: np.ndarray) -> None:
    Q = P[a:b]
    d2 = norms2[a:b, None] + norms2[None, :] - 2.0 * (Q @ P.T)
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        wn = 1.0 - threshold / d
    wn[~np.isfinite(wn)] = 0.0          # self / coincident pairs contribute nothing
    wn[d > radius] = 0.0
    wn[d == 0.0] = 0.0
    out[a:b] = wn @ P - wn.sum(axis=1)[:, None] * Q


def gravity_move(points: np.ndarray, r_factor: float = 7.5, c: float = 1.1,
                 eta: float = 0.5, iterations: int = 3,
                 partitions: int = 1) -> MoveResult:
    """Run `iterations` synchronous force sweeps and return moved positions
    plus the exact displacement matrix."""
    if not (5.0 <= r_factor <= 10.0):
        raise ValueError("r_factor must lie in [5, 10]")
    if c <= 1.0:
        raise ValueError("c must be > 1")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if iterations < 0 or partitions < 1:
        raise ValueError("iterations >= 0 and partitions >= 1 required")

    initial = np.asarray(points, dtype=np.float64).copy()
    P = initial.copy()
    res = MoveResult(P, np.zeros_like(P))
    if P.shape[0] < 2 or iterations == 0:
        return res

    m = P.shape[0]
    for _ in range(iterations):
        g = mean_nn_distance(P)
        if g == 0.0:
            break
        radius = r_factor * g
        threshold = g / c
        res.g_per_sweep.append(g)
        res.radius_per_sweep.append(radius)

        norms2 = np.einsum("ij,ij->i", P, P)
        F = np.empty_like(P)
        spans = [(a, min(a + CHUNK, m)) for a in range(0, m, CHUNK)]
        if partitions == 1 or len(spans) == 1:
            for a, b in spans:
                _force_chunk(P, norms2, a, b, radius, threshold, F)
        else:
            with ThreadPoolExecutor(max_workers=partitions) as pool:
                list(pool.map(
                    lambda s: _force_chunk(P, norms2, s[0], s[1], radius, threshold, F),
                    spans))

        step = eta * F
        norm = np.sqrt(np.einsum("ij,ij->i", step, step))
        big = norm > g
        if np.any(big):
            step[big] *= (g / norm[big])[:, None]
        P = P + step

    res.moved = P
    res.M = P - initial
    return res
