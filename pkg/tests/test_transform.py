import numpy as np
import pytest

from hlix import Transform, TransformError, init_transform
from hlix.transform import covariance, eigen_sym


def random_data(rng, m, n):
    # anisotropic cloud so the eigenbasis is informative
    mix = rng.normal(size=(n, n))
    return rng.normal(size=(m, n)) @ mix + rng.normal(size=n) * 3.0


def test_invariants_over_many_datasets():
    rng = np.random.default_rng(0)
    for trial in range(30):
        m = int(rng.integers(2, 400))
        n = int(rng.integers(1, 17))
        X = random_data(rng, m, n)
        t = init_transform(X)
        assert np.max(np.abs(t.R.T @ t.R - np.eye(n))) <= 1e-8
        assert np.all(t.S > 0)
        back = t.invert(t.apply(X))
        scale = max(1.0, np.max(np.abs(X)))
        assert np.max(np.abs(back - X)) / scale <= 1e-6
        t.validate(X)


def test_distance_bounds_hold():
    rng = np.random.default_rng(4)
    X = random_data(rng, 300, 7)
    t = init_transform(X)
    Y = t.apply(X)
    i, j = rng.integers(0, 300, size=(2, 200))
    orig = np.linalg.norm(X[i] - X[j], axis=1)
    enh = np.linalg.norm(Y[i] - Y[j], axis=1)
    assert np.all(enh <= t.sigma_max * orig + 1e-9)
    assert np.all(enh >= t.sigma_min * orig - 1e-9)


def test_principal_axis_decorrelates():
    rng = np.random.default_rng(5)
    X = random_data(rng, 3000, 5)
    Y = init_transform(X).apply(X)
    C = covariance(Y)
    off = C - np.diag(np.diag(C))
    assert np.max(np.abs(off)) < np.max(np.diag(C)) * 1e-6
    # descending variance along the new axes
    v = np.diag(C)
    assert np.all(np.diff(v) <= v[0] * 1e-9)


def test_eigen_sym_contract():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(6, 6))
    C = A @ A.T
    vals, vecs = eigen_sym(C)
    assert np.all(np.diff(vals) <= 1e-9)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, C, atol=1e-8)
    with pytest.raises(TransformError):
        eigen_sym(rng.normal(size=(4, 4)))


def test_degenerate_inputs():
    t = init_transform(np.zeros((500, 3)))
    assert np.all(t.S > 0)
    t.validate(np.zeros((500, 3)))
    t1 = init_transform(np.zeros((1, 4)))
    assert np.allclose(t1.T, np.eye(4))
    with pytest.raises(TransformError):
        init_transform(np.zeros(5))


def test_identity_and_validation_errors():
    t = Transform.identity(3)
    assert t.sigma_max == t.sigma_min == 1.0
    bad = Transform(np.eye(3) * 2.0, np.ones(3), np.zeros(3))
    with pytest.raises(TransformError):
        bad.validate()
    neg = Transform(np.eye(3), np.array([1.0, -1.0, 1.0]), np.zeros(3))
    with pytest.raises(TransformError):
        neg.validate()


def test_blob_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    t = init_transform(random_data(rng, 120, 9))
    blob = t.to_bytes()
    assert blob[:5] == b"HLTR1"
    back = Transform.from_bytes(blob)
    assert np.array_equal(back.R, t.R)
    assert np.array_equal(back.S, t.S)
    assert np.array_equal(back.center, t.center)
    path = tmp_path / "t.hltr"
    t.save(path)
    assert np.array_equal(Transform.load(path).T, t.T)
    with pytest.raises(TransformError):
        Transform.from_bytes(b"NOPE!" + blob[5:])
    with pytest.raises(TransformError):
        Transform.from_bytes(blob[:20])
