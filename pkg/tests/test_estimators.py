import math

import numpy as np
import pytest

from gffwalk import cluster as C
from gffwalk import estimators as E
from gffwalk import gff_tree as T
from gffwalk import walk as W
from gffwalk.experiments import SimulationSet, simulate


def ray(n):
    return np.arange(n + 1)


def synthetic_table(gains, durs):
    gains, durs = np.asarray(gains), np.asarray(durs)
    tau = np.concatenate([[1], 1 + np.cumsum(durs)])
    height = np.concatenate([[1], 1 + np.cumsum(gains)])
    k = len(tau)
    dur = np.append(durs, -1)
    gain = np.append(gains, -1)
    cens = np.zeros(k, dtype=bool)
    cens[-1] = True
    phi = np.zeros(k)
    return W.RenewalTable(tau, height, phi, phi, dur, gain, cens, int(tau[-1]), 0)


def test_speed_direct_on_rays():
    s = E.speed_direct([ray(10_000)] * 30)
    assert s.s_hat == 1.0 and s.method == "direct"
    with pytest.raises(E.InsufficientData):
        E.speed_direct([ray(10_000)] * 29)
    with pytest.raises(E.InsufficientData):
        E.speed_direct([ray(100)] * 30)


def test_speed_renewal_degenerate():
    t = synthetic_table(np.ones(200, int), np.ones(200, int))
    s = E.speed_renewal(t)
    assert s.s_hat == 1.0 and s.s_X == 1.0 and s.s_tau == 1.0
    with pytest.raises(E.InsufficientData):
        E.speed_renewal(synthetic_table(np.ones(50, int), np.ones(50, int)))


@pytest.fixture(scope="module")
def free_runs():
    return SimulationSet.from_results(simulate(3, -10.0, "plus", 20_000, 40, 3, keep_chain=False))


@pytest.fixture(scope="module")
def h0_runs():
    return SimulationSet.from_results(simulate(3, 0.0, "plus", 50_000, 60, 11))


def test_free_speed_range(free_runs):
    s = E.speed_from_endpoints(free_runs.final_heights, free_runs.n_steps)
    assert 0.31 <= s.s_hat <= 0.35


def test_direct_and_renewal_agree(free_runs, h0_runs):
    for sims in (free_runs, h0_runs):
        a = E.speed_from_endpoints(sims.final_heights, sims.n_steps)
        b = E.speed_renewal(sims.renewals)
        assert E.speeds_agree(a, b)
        assert b.s_X >= 1 and b.s_tau >= 1
        # tree speed is an upper envelope
        assert a.s_hat <= 1 / 3 + 3 * a.half_width


def test_h0_speed_strictly_inside(h0_runs):
    s = E.speed_from_endpoints(h0_runs.final_heights, h0_runs.n_steps)
    assert 0 < s.ci[0] and s.ci[1] < 1 / 3


def test_theta_over_k_matches_inverse_s_tau(h0_runs):
    b = E.speed_renewal(h0_runs.renewals)
    rate = np.mean([len(t) / n for t, n in zip(h0_runs.renewals, h0_runs.n_steps)])
    assert abs(rate * b.s_tau - 1) < 0.1


def test_lilliefors_table_value():
    # [DERIVED] published Lilliefors 5% critical value for n = 20 is 0.190
    assert abs(E.lilliefors_critical(20) - 0.190) < 0.006


def synthetic_paths(n_paths, n, s, sigma, seed):
    g = np.random.default_rng(seed)
    bm = np.cumsum(g.standard_normal((n_paths, n)), axis=1)
    k = np.arange(1, n + 1)
    return [np.concatenate([[0], np.round(s * k + sigma * b)]) for b in bm]


def test_clt_null_calibration():
    passes = 0
    for m in range(40):
        c = E.clt_check(synthetic_paths(30, 2000, 0.2, 0.8, m), 0.2)
        passes += c.ks_pass
    assert passes / 40 >= 0.9


def test_clt_variance_ratio_and_sigma():
    paths = synthetic_paths(2000, 2000, 0.2, 0.8, 99)
    c = E.clt_check(paths, 0.2)
    assert 0.4 <= c.variance_ratio <= 0.6
    assert abs(c.sigma_hat - 0.8) < 0.05


def test_clt_on_free_tree(free_runs):
    n = int(free_runs.n_steps.min())
    c = E.clt_from_checkpoints(free_runs.checkpoint_heights, n, 1 / 3, records=free_runs.renewals)
    assert c.sigma_hat > 0
    assert c.sigma_W > 0


def test_growth_rate_free_tree():
    tabs = [C.generation_sizes(C.ClusterView(T.create_arena(3, "plus", None, s), -10.0), 12)
            for s in range(20)]
    fit = E.growth_rate(tabs, (1, 12))
    assert abs(fit.log_lambda_hat - math.log(2)) < 0.05


def test_growth_rate_subcritical_reports_extinction():
    tabs = [C.grow_generations(C.ClusterView(T.create_arena(3, "plus", None, s), 2.5), 20)
            for s in range(50)]
    with pytest.raises(E.InsufficientData):
        E.growth_rate(tabs, (1, 20))


def test_tail_fit_exponential_and_pareto():
    g = np.random.default_rng(4)
    ex = np.ceil(g.exponential(5.0, 20_000))
    r = E.tail_fit(ex)
    assert r.r2_k > 0.98 and r.slope_k < 0 and r.log_survival_decreasing
    assert r.stable
    par = np.ceil((1 - g.random(50_000)) ** (-1 / 1.5))
    assert not E.tail_fit(par).stable
    with pytest.raises(E.InsufficientData):
        E.tail_fit(ex[:10])


def test_tail_fit_on_h0_durations(h0_runs):
    r = E.tail_fit(h0_runs.durations())
    assert r.log_survival_decreasing and r.rel_change_mean < 0.05


def test_drift_calibration_and_negative_control():
    g = np.random.default_rng(5)
    chains = []
    for _ in range(20):
        v = [10.0]
        for _ in range(300):
            v.append(v[-1] / 2 + g.exponential(3.0))
        chains.append(np.array(v))
    assert E.drift_check(chains).contraction_pass
    grow = [np.arange(2000, dtype=float) + g.normal(0, 1, 2000)]
    assert not E.drift_check(grow).contraction_pass


def test_drift_on_h0_chains(h0_runs):
    rep = E.drift_check(h0_runs.chains)
    assert rep.phi_increment < 0 and rep.contraction_pass


def test_estimators_deterministic(h0_runs):
    a = E.clt_from_checkpoints(h0_runs.checkpoint_heights, 50_000, 0.08).to_dict()
    b = E.clt_from_checkpoints(h0_runs.checkpoint_heights, 50_000, 0.08).to_dict()
    assert a == b
    assert E.drift_check(h0_runs.chains).to_dict() == E.drift_check(h0_runs.chains).to_dict()
