import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gffwalk import gff_tree as T
from gffwalk.gff_tree import ROOT, VertexId


def green(d, dist):
    return (d - 1) / (d - 2) * (d - 1) ** (-float(dist))


def test_invalid_d_and_mode():
    with pytest.raises(ValueError):
        T.create_arena(2)
    with pytest.raises(ValueError):
        T.create_arena(3, mode="half")


def test_children_counts():
    a = T.create_arena(3, "full", master_seed=1)
    assert len(T.expand_children(a, ROOT)) == 3
    assert len(T.expand_children(a, VertexId((0,)))) == 2
    b = T.create_arena(3, "plus", master_seed=1)
    assert len(T.expand_children(b, ROOT)) == 2


@pytest.mark.parametrize("d", [3, 4])
def test_covariance_matches_green_function(d):
    # [DERIVED] Var = (d-1)/(d-2), Cov(x, y) = Var * (d-1)^-dist
    n = 6000
    root, child, sib = [], [], []
    for s in range(n):
        a = T.create_arena(d, "plus", master_seed=s)
        T.expand_ball(a, 1)
        root.append(a.value[0])
        child.append(a.value[1])
        sib.append(a.value[2])
    root, child, sib = map(np.asarray, (root, child, sib))
    se = 4 * green(d, 0) * np.sqrt(2 / n)
    assert abs(root.var() - green(d, 0)) < se
    assert abs(child.var() - green(d, 0)) < se
    assert abs(np.mean(root * child) - green(d, 1)) < se
    assert abs(np.mean(child * sib) - green(d, 2)) < se


def test_pinned_root_mean_decay():
    # E[phi_x | phi_root = a] = a (d-1)^-|x|
    vals = []
    for s in range(3000):
        a = T.create_arena(3, "plus", root_condition=4.0, master_seed=s)
        T.expand_ball(a, 3)
        n = a.n_nodes
        vals.append(a.value[:n][a.depth[:n] == 3])
    v = np.concatenate(vals)
    assert abs(v.mean() - 4.0 / 8) < 4 * v.std() / np.sqrt(len(v))


def test_values_independent_of_exploration_order():
    a = T.create_arena(3, "full", master_seed=99)
    T.expand_ball(a, 6)
    b = T.create_arena(3, "full", master_seed=99)
    path = (2, 1, 0, 1, 1)
    v = ROOT
    for s in path:
        T.expand_children(b, v)
        v = v.child(s)
    assert b.value_at(v) == a.value_at(v)
    assert int(b.seed[b.node_of(v)]) == T.vertex_seed(99, path)


def test_node_of_unmaterialised_raises():
    a = T.create_arena(3, master_seed=0)
    with pytest.raises(KeyError):
        a.node_of(VertexId((0, 1)))


def test_memory_cap():
    a = T.create_arena(3, "plus", master_seed=0, max_nodes=100)
    with pytest.raises(T.ExplorationLimit):
        T.expand_ball(a, 10)


def test_path_round_trip():
    a = T.create_arena(4, "full", master_seed=5)
    T.expand_ball(a, 4)
    for node in range(0, a.n_nodes, 7):
        v = a.path_of(node)
        assert a.node_of(v) == node
        assert v.height == a.depth[node]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63), st.floats(-3, 3), st.floats(0.01, 3))
def test_monotone_in_root_condition(seed, a, gap):
    lo = T.create_arena(3, "plus", root_condition=a, master_seed=seed)
    hi = T.create_arena(3, "plus", root_condition=a + gap, master_seed=seed)
    T.expand_ball(lo, 5)
    T.expand_ball(hi, 5)
    assert np.all(lo.value[: lo.n_nodes] <= hi.value[: hi.n_nodes])
