import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gffwalk import cluster as C
from gffwalk import gff_tree as T
from gffwalk import rng
from gffwalk import walk as W
from gffwalk.checks import renewals_bruteforce


def plus_cluster(h, seed, root=None, d=3, mode="plus"):
    return C.ClusterView(T.create_arena(d, mode, root, seed), h)


def test_free_tree_speed_per_replica():
    # 1/3 within 0.02 in >= 95% of replicas (shorter runs than the full check)
    hits = 0
    for s in range(40):
        tr = W.run_walk(plus_cluster(-10.0, s), 100_000, seed=s)
        hits += abs(tr.heights[-1] / tr.n - 1 / 3) < 0.02
    assert hits >= 38


def test_isolated_root_alternates_with_outside():
    a = T.create_arena(3, "plus", 1.0, 0)
    T.expand_ball(a, 1)
    a.value[1:a.n_nodes] = -5.0
    tr = W.run_walk(C.ClusterView(a, 0.0), 20, seed=1)
    assert tr.nodes.tolist() == [0, W.OUTSIDE] * 10 + [0]
    assert tr.heights.tolist() == [0, -1] * 10 + [0]


def test_stuck_full_mode_walk_is_degenerate():
    a = T.create_arena(3, "full", 1.0, 0)
    T.expand_ball(a, 1)
    a.value[1:a.n_nodes] = -5.0
    tr = W.run_walk(C.ClusterView(a, 0.0), 50, seed=1)
    assert tr.stuck and tr.n == 0


def test_uniform_choice_among_three_neighbours():
    cl = plus_cluster(-10.0, 3, mode="full")
    tr = W.run_walk(cl, 100_000, seed=2)
    nxt = tr.nodes[1:][tr.nodes[:-1] == 0]
    counts = np.bincount(nxt, minlength=4)[1:4]
    assert counts.sum() == len(nxt)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_trajectory_is_a_neighbour_path_and_quenched():
    smp = C.survival_sample(3, 0.0, G=20, seed=4, check_threshold=False)
    tr = W.run_walk(smp.cluster, 5000, seed=9)
    a = smp.arena
    assert tr.heights[0] == 0
    assert np.all(np.abs(np.diff(tr.heights)) == 1)
    for x, y in zip(tr.nodes[:-1], tr.nodes[1:]):
        if x == W.OUTSIDE or y == W.OUTSIDE:
            assert 0 in (x, y)
        else:
            assert a.parent[y] == x or a.parent[x] == y
    visited = tr.nodes[tr.nodes >= 0]
    assert np.all(a.value[visited] >= 0.0)
    # same field and walk seed -> same path
    smp2 = C.survival_sample(3, 0.0, G=20, seed=4, check_threshold=False)
    assert np.array_equal(W.run_walk(smp2.cluster, 5000, seed=9).nodes, tr.nodes)
    assert tr.vertex(0) == T.ROOT


def test_renewal_examples():
    assert W.renewal_times([0, 1, 2, 3, 4]).tolist() == [1, 2, 3, 4]
    assert W.renewal_times([0, 1, 0, 1, 2, 3]).tolist() == [4, 5]
    # brute force gives {1, 5}: at R=4, max(h[:4]) = 2 == min(h[4:])
    assert renewals_bruteforce([0, 1, 2, 1, 2, 3]).tolist() == [1, 5]
    assert W.renewal_times([0, 1, 2, 1, 2, 3]).tolist() == [1, 5]


steps = st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=120)


@settings(max_examples=300, deadline=None)
@given(steps)
def test_detector_matches_definition(inc):
    h = np.concatenate([[0], np.cumsum(inc)])
    assert W.renewal_times(h).tolist() == renewals_bruteforce(h).tolist()


@settings(max_examples=300, deadline=None)
@given(steps)
def test_excursions_locate_first_renewal(inc):
    # plus-mode heights: reflect at -1 (the outside vertex)
    h = [0]
    for s in inc:
        h.append(h[-1] + s if h[-1] + s >= -1 else h[-1] + 1)
        if h[-2] == -1:
            h[-1] = 0
    h = np.asarray(h)
    dec = W.decompose_excursions(h)
    r = W.renewal_times(h)
    if dec.tau1 is None:
        assert len(r) == 0 or r[0] > dec.excursions[-1].r
        assert dec.excursions[-1].s is None
        assert len(r) == 0
    else:
        assert len(r) and r[0] == dec.tau1


def test_excursion_examples():
    up = W.decompose_excursions([0, 1, 2, 3, 4, 5])
    assert up.tau1 == 1 and up.excursions == []
    dec = W.decompose_excursions([0, 1, 0, 1, 2, 3, 4])
    assert dec.excursions[0] == W.ExcursionRecord(1, 2, 1, 4)
    assert dec.tau1 == 4 and dec.i0 == 1


def test_decomposition_consistent_on_walks():
    for s in range(200):
        smp = C.survival_sample(3, 0.0, G=20, seed=s, check_threshold=False)
        tr = W.run_walk(smp.cluster, 3000, seed=s)
        dec = W.decompose_excursions(tr)
        tab = W.detect_renewals(tr, W=50)
        first = int(tab.tau[0]) if len(tab) else None
        assert dec.tau1 == first


def record_checks(tr, tab):
    unc = tab.uncensored
    assert np.all(np.diff(tab.tau) > 0)
    assert np.all(tab.height_gain[unc] >= 1) and np.all(tab.duration[unc] >= 1)
    for tau in tab.tau:
        assert W.renewal_edge_crossings(tr, int(tau)) == 1
    hs = tr.heights
    for tau in tab.tau[unc]:
        assert hs[:tau].max() < hs[tau:].min()


def test_renewal_records_invariants():
    for s in range(30):
        smp = C.survival_sample(3, 0.0, G=20, seed=s, check_threshold=False)
        tr = W.run_walk(smp.cluster, 20_000, seed=s)
        tab = W.detect_renewals(tr, W=500)
        record_checks(tr, tab)
        # censoring: the next renewal plus W confirming steps must be seen
        c = tab.censored
        assert c[-1]
        assert np.all(c[:-1] == (tr.n - tab.tau[1:] < 500))
        rec = tab[0]
        assert rec.i == 1 and rec.tau == tab.tau[0]
        assert rec.gff_at_entry == smp.arena.value[tr.nodes[rec.tau]]


def test_records_iterate_as_named_records():
    tab = W.detect_renewals(np.array([0, 1, 2, 3, 4, 5]), W=1)
    recs = list(tab)
    assert [r.tau for r in recs] == [1, 2, 3, 4, 5]
    assert recs[0].duration == 1 and not recs[0].censored
    assert recs[-1].duration is None and recs[-1].censored
    tab2 = W.detect_renewals(np.array([0, 1, 2, 3, 4, 5, 6]), W=1)
    assert tab2.m2.sum() == 0


def test_potential_examples():
    assert W.potential(0.0, 1, 1) == 2.0
    assert W.potential(2.0, 3, 5) == 36.0


def test_renewal_chain_values():
    smp = C.survival_sample(3, 0.0, G=20, seed=1, check_threshold=False)
    tr = W.run_walk(smp.cluster, 20_000, seed=1)
    tab = W.detect_renewals(tr)
    ch = W.renewal_chain(tab, tr, smp.cluster)
    k = np.flatnonzero(tab.uncensored)[0]
    phi_next = smp.arena.value[tr.nodes[tab.tau[k + 1]]]
    assert ch[0].phi == phi_next
    assert ch[0].V == phi_next + tab.height_gain[k] ** 2 + tab.duration[k] ** 2
    with pytest.raises(ValueError):
        W.renewal_chain(W.detect_renewals(np.array([0, 1]), W=1))


@pytest.fixture(scope="module")
def h0_walks():
    out = []
    for s in range(40):
        smp = C.survival_sample(3, 0.0, G=30, seed=rng.replica_seed(77, s), check_threshold=False)
        tr = W.run_walk(smp.cluster, 50_000, seed=s)
        out.append((tr, W.detect_renewals(tr)))
    return out


def test_phi_drift_above_threshold(h0_walks):
    inc = []
    for tr, tab in h0_walks:
        ch = W.renewal_chain(tab, tr)
        phi = np.array([c.phi for c in ch])
        inc.append((phi[1:] - phi[:-1])[phi[:-1] > 3])
    inc = np.concatenate(inc)
    assert len(inc) >= 500
    assert inc.mean() < 0


def test_durations_conditionally_uncorrelated(h0_walks):
    # within phi(X_{tau_{i+1}}) deciles, duration_i vs duration_{i+1}
    pairs = []
    for tr, tab in h0_walks:
        k = np.flatnonzero(tab.uncensored[:-1] & tab.uncensored[1:])
        pairs.append(np.column_stack([tab.phi_exit[k], tab.duration[k], tab.duration[k + 1]]))
    P = np.concatenate(pairs)
    edges = np.quantile(P[:, 0], np.linspace(0, 1, 11))
    b = np.clip(np.searchsorted(edges, P[:, 0], side="right") - 1, 0, 9)
    rhos, ns = [], []
    for j in range(10):
        m = b == j
        rhos.append(stats.spearmanr(P[m, 1], P[m, 2]).statistic)
        ns.append(m.sum())
    rho = np.average(rhos, weights=ns)
    assert abs(rho) < 3 / np.sqrt(sum(ns))


def test_first_renewal_tail_decreasing(h0_walks):
    tau1 = np.array([tab.tau[0] for _, tab in h0_walks if len(tab)])
    ks = np.unique(tau1)
    surv = np.array([np.mean(tau1 >= k) for k in ks])
    assert np.all(np.diff(surv) < 0)


def test_theta_bookkeeping(h0_walks):
    tr, tab = h0_walks[0]
    assert W.renewals_before(tab, tr.n) == len(tab)
    assert W.renewals_before(tab, 0) == 0


def test_renewal_csv(tmp_path, h0_walks):
    tr, tab = h0_walks[0]
    p = tmp_path / "r.csv"
    W.write_renewals_csv(p, [(0, tab)])
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(W.RENEWAL_COLUMNS)
    assert len(lines) == len(tab) + 1
    assert lines[-1].endswith(",,,,,1")
