"""Replica orchestration: one surviving cluster and one walk per replica."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
from typing import Optional

import numpy as np

from . import rng
from .cluster import ClusterView, generation_sizes, survival_sample
from .gff_tree import create_arena
from .walk import RenewalTable, detect_renewals, renewal_chain, run_walk

CHECKPOINTS = (0.25, 0.5, 1.0)
SUMMARY_COLUMNS = ("replica", "mode", "n_steps", "final_height", "h_t025", "h_t050",
                   "h_t100", "stuck", "rejections", "n_renewals", "error")


@dataclass(eq=False)
class ReplicaResult:
    replica: int
    mode: str
    n_steps: int
    checkpoint_heights: np.ndarray
    stuck: bool
    rejections: int
    renewals: Optional[RenewalTable]
    chain: list = field(default_factory=list)
    generations: Optional[np.ndarray] = None
    error: str = ""

    @property
    def final_height(self):
        return int(self.checkpoint_heights[-1]) if len(self.checkpoint_heights) else 0

    @property
    def ok(self):
        return not self.error


def map_ordered(fn, items, workers=1):
    """``list(map(fn, items))`` over a thread pool; result order never depends
    on scheduling."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def simulate_replica(d, h, mode, n_steps, master_seed, replica, G=30, W=500,
                     k_max=0, max_rejections=10_000, keep_chain=True):
    rs = rng.replica_seed(master_seed, replica)
    try:
        smp = survival_sample(d, h, mode, G=G, seed=rs, max_rejections=max_rejections,
                              check_threshold=False)
        gens = generation_sizes(ClusterView(create_arena(d, mode, None, smp.arena.master_seed), h),
                                k_max) if k_max > 0 else None
        tr = run_walk(smp.cluster, n_steps, seed=rs)
        cols = [int(np.floor(n_steps * c)) for c in CHECKPOINTS]
        hts = np.array([tr.heights[min(k, tr.n)] for k in cols], dtype=np.int64)
        tab = detect_renewals(tr, W)
        chain = []
        if keep_chain and int(tab.uncensored.sum()) >= 1 and len(tab) >= 2:
            chain = renewal_chain(tab, tr)
        return ReplicaResult(replica, mode, tr.n, hts, tr.stuck, smp.rejections, tab, chain, gens)
    except Exception as exc:  # recorded, the run goes on
        return ReplicaResult(replica, mode, 0, np.zeros(0, dtype=np.int64), False, -1, None,
                             error=f"{type(exc).__name__}: {exc}")


def simulate(d, h, mode="plus", n_steps=100_000, replicas=100, master_seed=0, G=30, W=500,
             k_max=0, workers=1, max_rejections=10_000, keep_chain=True):
    fn = lambda r: simulate_replica(d, h, mode, n_steps, master_seed, r, G, W, k_max,
                                    max_rejections, keep_chain)
    return map_ordered(fn, range(int(replicas)), workers)


def write_summaries_csv(path, results, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in results:
            ch = list(r.checkpoint_heights) if r.ok else ["", "", ""]
            w.writerow([r.replica, r.mode, r.n_steps, r.final_height if r.ok else "", *ch,
                        int(r.stuck), r.rejections,
                        len(r.renewals) if r.renewals is not None else 0, r.error])


@dataclass(eq=False)
class SimulationSet:
    """Columns aggregated over successful replicas, in replica order."""
    replicas: np.ndarray
    n_steps: np.ndarray
    checkpoint_heights: np.ndarray  # (replicas, len(CHECKPOINTS))
    renewals: list
    chains: list
    failures: list

    @property
    def final_heights(self):
        return self.checkpoint_heights[:, -1]

    def durations(self):
        parts = [t.duration[t.uncensored] for t in self.renewals]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    @classmethod
    def from_results(cls, results):
        good = [r for r in results if r.ok]
        return cls(np.array([r.replica for r in good], dtype=np.int64),
                   np.array([r.n_steps for r in good], dtype=np.int64),
                   np.array([r.checkpoint_heights for r in good], dtype=float).reshape(-1, len(CHECKPOINTS)),
                   [r.renewals for r in good], [r.chain for r in good],
                   [(r.replica, r.error) for r in results if not r.ok])
