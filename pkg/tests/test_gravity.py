import numpy as np
import pytest

from hlix import MoveResult, gravity_move, mean_nn_distance


def cloud(seed=0, m=400, n=4):
    rng = np.random.default_rng(seed)
    centers = rng.random((4, n))
    lab = rng.integers(0, 4, size=m)
    return centers[lab] + rng.normal(0, 0.03, size=(m, n))


def test_mean_nn_distance_against_quadratic_oracle():
    rng = np.random.default_rng(1)
    pts = rng.random((150, 3))
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    want = float(np.mean(np.sqrt(d2.min(axis=1))))
    assert mean_nn_distance(pts) == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        mean_nn_distance(pts[:1])


def test_movement_tightens_clusters():
    pts = cloud(seed=2)
    res = gravity_move(pts, iterations=3)
    assert res.moved.shape == pts.shape
    assert np.array_equal(res.M, res.moved - pts)
    # mean nn distance shrinks as mass condenses
    assert mean_nn_distance(res.moved) < mean_nn_distance(pts)
    assert len(res.g_per_sweep) == 3
    assert all(r == pytest.approx(7.5 * g) for g, r in
               zip(res.g_per_sweep, res.radius_per_sweep))


def test_steps_clipped_to_field_scale():
    pts = cloud(seed=3, m=300)
    g0 = mean_nn_distance(pts)
    res = gravity_move(pts, iterations=1)
    norms = np.linalg.norm(res.M, axis=1)
    assert norms.max() <= g0 + 1e-12


def test_partition_counts_are_bit_identical():
    pts = cloud(seed=4, m=1500, n=3)
    base = gravity_move(pts, iterations=2, partitions=1).moved
    for p in (4, 8):
        other = gravity_move(pts, iterations=2, partitions=p).moved
        assert np.array_equal(base, other)


def test_degenerate_inputs():
    one = np.zeros((1, 3))
    res = gravity_move(one, iterations=2)
    assert np.array_equal(res.moved, one)
    assert res.g_per_sweep == []
    same = np.zeros((5, 2))
    res = gravity_move(same, iterations=2)
    assert np.array_equal(res.moved, same)
    res = gravity_move(cloud(m=50), iterations=0)
    assert np.all(res.M == 0)


def test_parameter_validation():
    pts = cloud(m=20)
    for kwargs in ({"r_factor": 4.0}, {"r_factor": 11.0}, {"c": 1.0},
                   {"eta": 0.0}, {"iterations": -1}, {"partitions": 0}):
        with pytest.raises(ValueError):
            gravity_move(pts, **kwargs)


def test_repulsion_below_threshold():
    # two points closer than G/c are pushed apart, not merged
    pts = np.array([[0.0, 0.0], [0.05, 0.0], [10.0, 0.0], [10.4, 0.0]])
    g = mean_nn_distance(pts)
    assert 0.05 < g / 1.1
    res = gravity_move(pts, iterations=1, eta=1.0)
    moved_gap = abs(res.moved[1, 0] - res.moved[0, 0])
    assert moved_gap > 0.05
