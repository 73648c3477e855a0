import numpy as np
import pytest

from hlix import (BuildConfig, ClusterTree, IndexFormatError, SyntheticSpec,
                  Transform, assemble, build_index, generate_synthetic,
                  init_transform)
from hlix.schema import VECTOR
from hlix.tree import fit_leaf_model, keys_for_cdf


def built(kind="gaussmix", m=3000, n=6, seed=7, move=False, **cfg_kw):
    ds = generate_synthetic(SyntheticSpec(kind, m=m, n=n, seed=seed))
    fm = assemble(ds)
    tr = init_transform(fm.matrix)
    base = tr.apply(fm.matrix)
    cfg_kw.setdefault("min_leaf", 64)
    cfg = BuildConfig(move_per_level=move, seed=seed, **cfg_kw)
    if move:
        from hlix import gravity_move
        positions = gravity_move(base, iterations=2).moved
    else:
        positions = base
    return ds, tr, base, build_index(ds, tr, positions, base, cfg)


def test_members_partition_the_dataset():
    ds, _, _, tree = built()
    leaves = tree.leaves()
    all_ids = np.concatenate([l.members for l in leaves])
    assert len(all_ids) == ds.m
    assert np.array_equal(np.sort(all_ids), np.arange(ds.m))
    for l in leaves:
        assert np.all(np.diff(l.keys) >= 0)        # key-sorted storage
        assert len(l.keys) == len(l.members)


def test_tree_shape_invariants():
    _, _, _, tree = built()
    st = tree.stats()
    assert st["node_count"] < 2 * st["leaf_count"]
    assert st["depth"] >= 1
    for nd in tree.nodes:
        if nd.is_leaf:
            assert not nd.children
            assert nd.model is not None
            assert nd.reason in ("fit", "min_leaf", "indivisible", "depth_cap")
        else:
            assert len(nd.children) >= 2
            for c in nd.children:
                assert tree.nodes[c].parent == nd.nid
                assert tree.nodes[c].depth == nd.depth + 1


def test_split_factor_caps_child_size():
    _, _, _, tree = built(m=4000, min_leaf=64)
    for nd in tree.nodes:
        if nd.is_leaf or nd.nid != 0:
            continue
        sizes = []
        for c in nd.children:
            stack, total = [c], 0
            while stack:
                x = tree.nodes[stack.pop()]
                if x.is_leaf:
                    total += len(x.members)
                else:
                    stack.extend(x.children)
            sizes.append(total)
        cap = max(64, int(np.ceil(4000 / 6.0)))
        assert max(sizes) <= cap


def test_balls_boxes_and_drift_are_sound():
    for move in (False, True):
        ds, tr, base, tree = built(m=1500, move=move)
        fm = assemble(ds)
        drift = None
        vec_attrs = [a.name for a in ds.schema.attributes if a.kind == VECTOR]
        for nd in tree.nodes:
            stack, ids = [nd.nid], []
            while stack:
                x = tree.nodes[stack.pop()]
                if x.is_leaf:
                    ids.append(x.members)
                else:
                    stack.extend(x.children)
            ids = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
            if not len(ids):
                continue
            rows = fm.matrix[ids]
            assert np.all(rows >= nd.bbox_lo - 1e-12)
            assert np.all(rows <= nd.bbox_hi + 1e-12)
            for aname in vec_attrs:
                c, r = nd.vballs[aname]
                sub = rows[:, fm.attr_slices[aname]]
                d = np.sqrt(((sub - c) ** 2).sum(axis=1))
                assert np.all(d <= r + 1e-9)


def test_leaf_ball_covers_members_in_enhanced_space():
    ds, tr, base, tree = built(m=1200)
    for leaf in tree.leaves():
        if not len(leaf.members):
            continue
        pos = base[leaf.members]
        d = np.sqrt(((pos - leaf.centroid) ** 2).sum(axis=1))
        assert np.all(d <= leaf.r_ball + 1e-9)
        assert np.allclose(np.sort(d), leaf.keys, atol=1e-9)


def test_accepted_fit_leaves_meet_delta_by_recount():
    # uniformly spaced keys make the linear CDF model exact
    rng = np.random.default_rng(0)
    keys = np.sort(rng.random(500))
    model = fit_leaf_model(keys)
    pred = np.clip(np.rint((model.a * keys + model.b) * model.size),
                   0, model.size - 1)
    recount = float(np.mean(np.abs(pred - np.arange(len(keys))) <= model.eps_pos))
    assert recount == pytest.approx(model.hit_ratio)
    _, _, _, tree = built(m=2500)
    for leaf in tree.leaves():
        if leaf.reason != "fit" or len(leaf.members) < 2:
            continue
        mm = fit_leaf_model(leaf.keys)
        assert mm.hit_ratio >= tree.delta


def test_serialization_round_trip():
    ds, _, _, tree = built(m=900, n=5)
    blob = tree.to_bytes()
    assert blob[:5] == b"HLIX1"
    back = ClusterTree.from_bytes(blob, ds)
    assert len(back.nodes) == len(tree.nodes)
    assert back.delta == tree.delta
    assert back.selection == tree.selection
    assert np.array_equal(back.transform.T, tree.transform.T)
    for a, b in zip(tree.nodes, back.nodes):
        assert (a.nid, a.parent, a.depth, a.is_leaf) == \
            (b.nid, b.parent, b.depth, b.is_leaf)
        assert np.array_equal(a.centroid, b.centroid)
        assert (a.r_ball, a.drift) == (b.r_ball, b.drift)
        assert np.array_equal(a.bbox_lo, b.bbox_lo)
        assert np.array_equal(a.bbox_hi, b.bbox_hi)
        assert a.reason == b.reason
        for k in a.vballs:
            assert np.array_equal(a.vballs[k][0], b.vballs[k][0])
            assert a.vballs[k][1] == b.vballs[k][1]
        if a.is_leaf:
            assert np.array_equal(a.members, b.members)
            assert np.array_equal(a.keys, b.keys)
            assert (a.model.a, a.model.b, a.model.eps_pos) == \
                (b.model.a, b.model.b, b.model.eps_pos)
        else:
            assert a.children == b.children


def test_save_load_and_mismatch_guards(tmp_path):
    ds, _, _, tree = built(m=400, n=4)
    path = tmp_path / "index.hlix"
    tree.save(path)
    back = ClusterTree.load(path, ds)
    assert back.stats() == tree.stats()
    other = generate_synthetic(SyntheticSpec("uniform", m=401, n=4, seed=1))
    with pytest.raises(IndexFormatError):
        ClusterTree.load(path, other)
    with pytest.raises(IndexFormatError):
        ClusterTree.from_bytes(b"JUNK" + tree.to_bytes()[4:], ds)


def test_empty_and_tiny_builds():
    for m in (0, 1, 5):
        ds = generate_synthetic(SyntheticSpec("uniform", m=m, n=4, seed=0))
        fm = assemble(ds)
        tr = init_transform(fm.matrix) if m >= 2 else Transform.identity(4)
        base = tr.apply(fm.matrix)
        tree = build_index(ds, tr, base, base, BuildConfig(min_leaf=8))
        assert tree.total_leaves >= 1
        got = np.concatenate([l.members for l in tree.leaves()]) \
            if tree.leaves() else np.zeros(0, dtype=np.int64)
        assert len(got) == m


def test_node_table_matches_nodes():
    _, _, _, tree = built(m=800)
    table = tree.node_table()
    assert table["cent"].shape == (len(tree.nodes), tree.n)
    i = len(tree.nodes) // 2
    assert np.array_equal(table["cent"][i], tree.nodes[i].centroid)
    assert table["r_ball"][i] == tree.nodes[i].r_ball
    assert np.array_equal(table["lo"][i], tree.nodes[i].bbox_lo)
    root_kids = tree.child_ids(0)
    assert list(root_kids) == tree.nodes[0].children


def test_build_report_counts():
    _, _, _, tree = built(m=2000)
    rep = tree.report
    assert rep.node_count == len(tree.nodes)
    assert rep.leaf_count == tree.total_leaves
    assert rep.accepted_fit + rep.accepted_min_leaf + rep.accepted_other \
        == rep.leaf_count
    assert sum(rep.level_sizes) == rep.node_count
    assert dict(rep.rows())["m"] == 2000


def test_keys_for_cdf_definition():
    rng = np.random.default_rng(3)
    pts = rng.random((200, 3))
    labels = rng.integers(0, 4, size=200)
    keys = keys_for_cdf(pts, labels)
    cents = np.stack([pts[labels == u].mean(axis=0) for u in range(4)])
    c0 = cents.mean(axis=0)
    for i in (0, 57, 123):
        u = labels[i]
        want = np.linalg.norm(pts[i] - cents[u]) + np.linalg.norm(cents[u] - c0)
        assert keys[i] == pytest.approx(want, rel=1e-12)
