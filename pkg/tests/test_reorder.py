import numpy as np

from hlix.bench import PipelineConfig, WorkloadGen, build_pipeline, skewed_workload
from hlix.engine import exec_query
from hlix.reorder import reorder_nodes
from hlix.synth import SyntheticSpec, generate_synthetic


def setup_case(seed=0, m=4000):
    ds = generate_synthetic(SyntheticSpec(kind="gaussmix", m=m, n=6, seed=seed))
    tree = build_pipeline(ds, PipelineConfig(min_leaf=64, move=False, seed=seed))
    gen = WorkloadGen(ds, np.random.default_rng(seed + 1), k=10,
                      vr_selectivity=0.02)
    pool = gen.batch("vk", 10) + gen.batch("vr", 6) + gen.batch("vr_nr", 4)
    workload = skewed_workload(pool, np.random.default_rng(seed + 2), total=80)
    return ds, tree, workload


def run_all(tree, queries):
    return [(q, frozenset(exec_query(tree, q)[0].ids.tolist())) for q in queries]


def test_never_worse_and_results_identical():
    ds, tree, workload = setup_case()
    before = run_all(tree, workload)
    report = reorder_nodes(tree, workload)
    after = run_all(tree, workload)
    assert report.post_nodes <= report.pre_nodes
    assert report.queries == len(workload)
    for (q, pre), (_, post) in zip(before, after):
        assert pre == post, q.statement()


def test_children_are_permuted_not_replaced():
    ds, tree, workload = setup_case(seed=3)
    sets_before = {nd.nid: set(nd.children) for nd in tree.nodes if not nd.is_leaf}
    reorder_nodes(tree, workload)
    for nd in tree.nodes:
        if not nd.is_leaf:
            assert set(nd.children) == sets_before[nd.nid]
            assert len(nd.children) == len(sets_before[nd.nid])


def test_deterministic_given_same_workload():
    orders = []
    for _ in range(2):
        ds, tree, workload = setup_case(seed=5)
        reorder_nodes(tree, workload)
        orders.append([tuple(nd.children) for nd in tree.nodes if not nd.is_leaf])
    assert orders[0] == orders[1]


def test_answer_holding_children_move_forward():
    # sort key is result credit: how many ranked answers a subtree held
    ds, tree, workload = setup_case(seed=7)
    inv = np.full(ds.m, -1, dtype=np.int64)
    for nd in tree.nodes:
        if nd.is_leaf:
            inv[nd.members] = nd.nid
    credit = np.zeros(len(tree.nodes), dtype=np.int64)
    for q in workload:
        res, _ = exec_query(tree, q)
        if res.kind == "ranked":
            for rid in res.ids:
                nid = int(inv[rid])
                while nid >= 0:
                    credit[nid] += 1
                    nid = tree.nodes[nid].parent
    assert credit.sum() > 0
    report = reorder_nodes(tree, workload, perm_budget=0)
    if report.reverted:
        return
    for nd in tree.nodes:
        if nd.is_leaf or len(nd.children) < 2:
            continue
        kid_credit = [credit[c] for c in nd.children]
        assert kid_credit == sorted(kid_credit, reverse=True)


def test_permutation_budget_zero_still_sorts():
    ds, tree, workload = setup_case(seed=9)
    report = reorder_nodes(tree, workload, perm_budget=0)
    assert report.permutations_evaluated == 0
    assert report.post_nodes <= report.pre_nodes


def test_report_counters():
    ds, tree, workload = setup_case(seed=11)
    report = reorder_nodes(tree, workload, perm_cap=3, perm_budget=50)
    assert report.permutations_evaluated <= 50
    assert report.pre_seconds > 0 and report.post_seconds > 0
    if report.reverted:
        assert report.post_nodes == report.pre_nodes
