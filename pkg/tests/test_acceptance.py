"""Acceptance suite: the 13 criteria at their stated sizes and tolerances.

Each test prints one PASS/FAIL line (also collected in the terminal summary).
Run directly with ``python tests/test_acceptance.py`` for just the lines.
"""
import filecmp
import os
import sys

import pytest

from gffwalk import checks, cli, rng
from gffwalk.experiments import SimulationSet, simulate

try:
    from conftest import record_verdict
except ImportError:  # run as a script
    record_verdict = lambda v: None

WORKERS = max(1, min(4, os.cpu_count() or 1))


def report(v):
    print(v.line())
    print("   ", v.detail)
    record_verdict(v)
    return v.passed


@pytest.fixture(scope="module")
def clt_runs():
    """1000 walks at d=3, h=0, 10^5 steps, plus an independent batch for s."""
    main = SimulationSet.from_results(simulate(3, 0.0, "plus", 100_000, 1000, 8008,
                                               workers=WORKERS))
    ind = SimulationSet.from_results(simulate(3, 0.0, "plus", 100_000, 200, 9009,
                                              keep_chain=False, workers=WORKERS))
    return main, ind


def test_c01_free_tree_speed():
    assert report(checks.run_free_speed(replicas=200, steps=100_000, seed=1, workers=WORKERS))


def test_c02_spectral_range():
    assert report(checks.spectral_range(3))


def test_c03_threshold():
    assert report(checks.threshold(3, replicas=1000, G=60))


def test_c04_extinction_oracle():
    assert report(checks.extinction_oracle(3, 0.0, replicas=10_000, G=40))


def test_c05_growth_rate():
    assert report(checks.run_growth_oracle(replicas=300, k_max=20, workers=WORKERS))


def test_c06_renewal_correctness():
    assert report(checks.renewal_correctness(n_traj=1000, n_steps=400, W=50))


def test_c07_estimator_agreement():
    assert report(checks.run_estimator_agreement(replicas=60, steps=50_000, workers=WORKERS))


def test_c08_clt(clt_runs):
    main, ind = clt_runs
    s_hat = float((ind.final_heights / ind.n_steps).mean())
    assert report(checks.clt_sanity(main, s_hat, meta=50))


def test_c09_tail_stability(clt_runs):
    assert report(checks.tail_stability(clt_runs[0].durations()))


def test_c10_drift(clt_runs):
    assert report(checks.drift(clt_runs[0].chains))


def test_c11_monotone_coupling():
    assert report(checks.monotone_coupling())


def test_c12_appendix():
    assert report(checks.appendix(3, 0.0))


COMMAND_RUNS = [
    ["spectral", "--h", "0.5"],
    ["hstar", "--d", "4"],
    ["qh", "--h", "0.2"],
    ["eta", "--h", "0.2"],
    ["simulate", "--steps", "20000", "--replicas", "30", "--seed", "5", "--k-max", "8"],
    ["diagnostics", "delta-exits", "--replicas", "2", "--k", "5", "--trials", "20"],
    ["diagnostics", "skeleton", "--replicas", "3", "--D", "6", "--explored-depth", "10"],
    ["diagnostics", "obstruction"],
]
INPUT_RUNS = [["speed"], ["renewal-stats"], ["clt", "--s-hat", "0.08", "--meta", "3"],
              ["diagnostics", "drift"], ["report", "--no-oracles"]]


def _same_dirs(a, b):
    names = sorted(os.listdir(a))
    return names == sorted(os.listdir(b)) and all(
        filecmp.cmp(os.path.join(a, n), os.path.join(b, n), shallow=False) for n in names)


def test_c13_reproducibility(tmp_path):
    bad = []
    for j, args in enumerate(COMMAND_RUNS):
        dirs = [tmp_path / f"c{j}_{k}" for k in range(3)]
        for k, dd in enumerate(dirs):
            w = "2" if k == 2 else "1"
            cli.main(args + ["--workers", w, "--out", str(dd)], quiet=True)
        if not (_same_dirs(dirs[0], dirs[1]) and _same_dirs(dirs[0], dirs[2])):
            bad.append(" ".join(args))
    sim = str(tmp_path / "c4_0")
    for j, args in enumerate(INPUT_RUNS):
        dirs = [tmp_path / f"i{j}_{k}" for k in range(2)]
        for dd in dirs:
            cli.main(args + ["--input", sim, "--out", str(dd)], quiet=True)
        if not _same_dirs(*dirs):
            bad.append(" ".join(args))
    v = checks.Verdict(13, not bad, {"commands": len(COMMAND_RUNS) + len(INPUT_RUNS),
                                     "non_reproducible": bad})
    assert report(v)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
