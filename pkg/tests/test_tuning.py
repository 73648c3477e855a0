import numpy as np
import pytest

from hlix.transform import Transform, init_transform
from hlix.tuning import (ObjectiveTriple, TuneConfig, _ParamSpace,
                         optimize_transform)


def base_transform(n=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(500, n)) * (1.0 + np.arange(n))
    return init_transform(X)


def quadratic_evaluator(init):
    """Time improves as log-scales approach 0.3; cbr and accuracy fixed."""
    def ev(t: Transform) -> ObjectiveTriple:
        z = np.log(t.S / init.S)
        return ObjectiveTriple(float(np.sum((z - 0.3) ** 2)), 0.5, 1.0)
    return ev


def test_budget_zero_returns_init_unchanged():
    init = base_transform()
    res = optimize_transform(init, quadratic_evaluator(init), budget=0)
    assert res.transform is init
    assert res.evaluations == 0
    assert not res.improved
    assert res.best_score == 0.0
    assert res.objectives == res.init_objectives


def test_never_worse_than_start():
    init = base_transform()
    cfg = TuneConfig(n_regions=2, batch=2, seed=1)
    res = optimize_transform(init, quadratic_evaluator(init), budget=12, config=cfg)
    assert res.evaluations == 12
    assert res.best_score >= 0.0
    if res.improved:
        assert res.objectives.time < res.init_objectives.time
        res.transform.validate()


def test_improves_on_smooth_objective():
    init = base_transform(seed=2)
    cfg = TuneConfig(n_regions=2, batch=4, seed=2)
    res = optimize_transform(init, quadratic_evaluator(init), budget=24, config=cfg)
    assert res.improved
    assert res.objectives.time < res.init_objectives.time


def test_candidates_stay_feasible():
    init = base_transform(n=5, seed=3)
    seen = []

    def ev(t: Transform) -> ObjectiveTriple:
        t.validate()
        seen.append(t)
        return ObjectiveTriple(1.0, 0.5, 1.0)

    optimize_transform(init, ev, budget=8,
                       config=TuneConfig(n_regions=2, batch=2, seed=3))
    assert len(seen) == 9   # init + 8 candidates


def test_evaluator_failures_are_tolerated():
    init = base_transform(seed=4)
    calls = {"n": 0}

    def flaky(t: Transform) -> ObjectiveTriple:
        calls["n"] += 1
        if calls["n"] % 2 == 0:
            raise RuntimeError("trial build failed")
        return ObjectiveTriple(1.0 / calls["n"], 0.5, 1.0)

    res = optimize_transform(init, flaky, budget=10,
                             config=TuneConfig(n_regions=2, batch=2, seed=4))
    assert res.evaluations == 10
    assert len(res.history) < 11


def test_param_space_zero_is_identity():
    init = base_transform(n=4, seed=5)
    space = _ParamSpace(init, givens_cap=32)
    t = space.transform(np.zeros(space.dim))
    assert np.allclose(t.R, init.R, atol=1e-12)
    assert np.allclose(t.S, init.S, atol=1e-12)


def test_param_space_wide_input_uses_reduced_rotation():
    init = base_transform(n=40, seed=6)
    space = _ParamSpace(init, givens_cap=32)
    assert space.mode == "givens"
    assert space.dim == 40 + 8 * 7 // 2
    t = space.transform(np.full(space.dim, 0.05))
    t.validate()


def test_objective_triple_rejects_non_finite():
    with pytest.raises(ValueError):
        ObjectiveTriple(float("nan"), 0.0, 1.0)
    with pytest.raises(ValueError):
        ObjectiveTriple(0.1, float("inf"), 1.0)
