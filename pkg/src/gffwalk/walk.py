"""Simple random walk on the root cluster, renewal times and excursions.

In plus mode the walk lives on the plus cluster together with the outside
vertex (the root's missing parent), stored as node id ``OUTSIDE`` with
height -1. It only ever steps back to the root.
"""
from dataclasses import dataclass
import csv
from typing import NamedTuple, Optional

import numpy as np

from . import rng
from ._jit import njit
from .gff_tree import NEED_SPACE, VertexId, expand_node, n_children

OUTSIDE = -2
DEFAULT_W = 500
RENEWAL_COLUMNS = ("replica", "i", "tau", "height", "phi_entry", "duration",
                   "height_gain", "interval_height", "V", "censored")


@njit
def _walk_kernel(tree, count, d, full, h, n_steps, key, nodes, heights):
    parent, depth, value, seed, first_child, slot = tree
    pos = 0
    nodes[0] = 0
    heights[0] = 0
    for t in range(n_steps):
        if pos == OUTSIDE:
            nxt = 0
        else:
            if not expand_node(tree, count, pos, d, full):
                return NEED_SPACE
            fc = first_child[pos]
            nc = n_children(pos, d, full)
            n_open = 0
            for j in range(nc):
                if value[fc + j] >= h:
                    n_open += 1
            up = 1 if (pos != 0 or not full) else 0
            tot = n_open + up
            if tot == 0:
                return t  # stuck
            r = int(rng.uniform_at(key, t) * tot)
            if r >= tot:
                r = tot - 1
            if r < n_open:
                nxt = -1
                for j in range(nc):
                    if value[fc + j] >= h:
                        if r == 0:
                            nxt = fc + j
                            break
                        r -= 1
            elif pos == 0:
                nxt = OUTSIDE
            else:
                nxt = parent[pos]
        pos = nxt
        nodes[t + 1] = pos
        heights[t + 1] = -1 if pos == OUTSIDE else depth[pos]
    return n_steps


@dataclass(eq=False)
class Trajectory:
    nodes: np.ndarray
    heights: np.ndarray
    arena: object = None
    stuck: bool = False

    @property
    def n(self):
        return len(self.heights) - 1

    def vertex(self, k):
        node = int(self.nodes[k])
        if node == OUTSIDE:
            return None
        return self.arena.path_of(node)

    @property
    def steps(self):
        return [self.vertex(k) for k in range(len(self.nodes))]

    def phi(self, k):
        node = self.nodes[k]
        if self.arena is None:
            return np.nan
        return np.where(node == OUTSIDE, np.nan, self.arena.value[np.maximum(node, 0)])


def walk_key(seed):
    return np.uint64(rng.derive(int(seed), rng.LABEL_WALK))


def run_walk(cluster, n_steps, seed=0):
    """Quenched SRW from the root for ``n_steps`` steps (fewer if stuck)."""
    if not cluster.root_open:
        raise ValueError("root is closed")
    a = cluster.arena
    n_steps = int(n_steps)
    # one expansion per step at most, so the walk never runs out of room
    a.reserve((n_steps + 1) * a.d)
    nodes = np.empty(n_steps + 1, dtype=np.int64)
    heights = np.empty(n_steps + 1, dtype=np.int64)
    done = a.run(_walk_kernel, a.d, a.full, cluster.h, n_steps, walk_key(seed), nodes, heights)
    return Trajectory(nodes[:done + 1].copy(), heights[:done + 1].copy(), a, bool(done < n_steps))


# -- renewals ----------------------------------------------------------------

def renewal_times(heights):
    """All R >= 1 with max(heights[:R]) < min(heights[R:]) (O(n))."""
    hs = np.asarray(heights)
    if hs.size < 2:
        return np.zeros(0, dtype=np.int64)
    pre = np.maximum.accumulate(hs)[:-1]
    suf = np.minimum.accumulate(hs[::-1])[::-1][1:]
    return np.flatnonzero(pre < suf).astype(np.int64) + 1


class RenewalRecord(NamedTuple):
    i: int
    tau: int
    height: int
    gff_at_entry: float
    duration: Optional[int]
    height_gain: Optional[int]
    interval_height: Optional[int]
    censored: bool
    m2: bool


@dataclass(eq=False)
class RenewalTable:
    """Columnar renewal records; record i covers [tau_i, tau_{i+1}].

    ``duration``, ``height_gain`` and ``phi_exit`` are -1 / nan where there is
    no confirmed next renewal.
    """
    tau: np.ndarray
    height: np.ndarray
    phi_entry: np.ndarray
    phi_exit: np.ndarray
    duration: np.ndarray
    height_gain: np.ndarray
    censored: np.ndarray
    n: int
    W: int

    def __len__(self):
        return len(self.tau)

    def __getitem__(self, k):
        c = bool(self.censored[k])
        dur = int(self.duration[k])
        gain = int(self.height_gain[k])
        known = dur > 0
        return RenewalRecord(k + 1, int(self.tau[k]), int(self.height[k]), float(self.phi_entry[k]),
                             dur if known and not c else None, gain if known and not c else None,
                             gain if known and not c else None, c,
                             bool(known and not c and gain == 2 and dur == 2))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def interval_height(self):
        # the walk never exceeds height(tau_{i+1}) - 1 before tau_{i+1}
        return self.height_gain

    @property
    def uncensored(self):
        return ~self.censored

    @property
    def m2(self):
        return ~self.censored & (self.height_gain == 2) & (self.duration == 2)

    def potential(self):
        return potential(self.phi_exit, self.interval_height, self.duration)


def detect_renewals(trajectory, W=DEFAULT_W):
    """Renewal times of the recorded trajectory with interval summaries.

    A record is censored unless tau_{i+1} exists and is followed by at least W
    recorded steps.
    """
    if isinstance(trajectory, Trajectory):
        hs, traj = trajectory.heights, trajectory
    else:
        hs, traj = np.asarray(trajectory, dtype=np.int64), None
    n = len(hs) - 1
    taus = renewal_times(hs)
    k = len(taus)
    height = hs[taus].astype(np.int64)
    dur = np.full(k, -1, dtype=np.int64)
    gain = np.full(k, -1, dtype=np.int64)
    if k > 1:
        dur[:-1] = np.diff(taus)
        gain[:-1] = np.diff(height)
    censored = np.ones(k, dtype=bool)
    if k > 1:
        censored[:-1] = (n - taus[1:]) < W
    if traj is not None and traj.arena is not None:
        phi_entry = traj.arena.value[traj.nodes[taus]] if k else np.zeros(0)
    else:
        phi_entry = np.full(k, np.nan)
    phi_exit = np.full(k, np.nan)
    if k > 1:
        phi_exit[:-1] = phi_entry[1:]
    return RenewalTable(taus, height, np.asarray(phi_entry, dtype=float), phi_exit, dur, gain,
                        censored, n, int(W))


def renewal_edge_crossings(trajectory, tau):
    """Number of k with {X_k, X_{k+1}} equal to the edge {X_{tau-1}, X_tau}."""
    nd = trajectory.nodes
    a, b = nd[tau - 1], nd[tau]
    x, y = nd[:-1], nd[1:]
    return int(np.sum(((x == a) & (y == b)) | ((x == b) & (y == a))))


def renewals_before(table, k):
    """theta_k: number of renewal times <= k."""
    return int(np.searchsorted(table.tau, k, side="right"))


# -- excursions --------------------------------------------------------------

class ExcursionRecord(NamedTuple):
    j: int
    r: int
    m: int
    s: Optional[int]  # None when the new record is not reached in the horizon


class Decomposition(NamedTuple):
    excursions: list
    tau1: Optional[int]
    i0: Optional[int]


def _first(mask, start):
    idx = np.flatnonzero(mask[start:])
    return int(idx[0]) + start if idx.size else None


def decompose_excursions(trajectory):
    """Return-time / record-height / record-time recursion that locates tau_1."""
    hs = np.asarray(trajectory.heights if isinstance(trajectory, Trajectory) else trajectory,
                    dtype=np.int64)
    if len(hs) < 2:
        return Decomposition([], None, None)
    # height <= 0: back at the root, or (first step only) at the outside vertex
    r = _first(hs <= 0, 1)
    if r is None:
        return Decomposition([], 1, 0)
    runmax = np.maximum.accumulate(hs)
    excursions = []
    j = 1
    while True:
        target = int(runmax[r]) + 1
        s = _first(hs == target, r)
        m = target - 1 if j == 1 else target - int(hs[excursions[-1].s])
        excursions.append(ExcursionRecord(j, r, m, s))
        if s is None:
            return Decomposition(excursions, None, None)
        r = _first(hs == hs[s] - 1, s)
        if r is None:
            return Decomposition(excursions, s, j)
        j += 1


# -- renewal chain -----------------------------------------------------------

def potential(phi, height, duration):
    return np.asarray(phi, dtype=float) + np.asarray(height, dtype=float) ** 2 \
        + np.asarray(duration, dtype=float) ** 2


class ChainState(NamedTuple):
    phi: float
    interval_height: int
    duration: int
    V: float


def renewal_chain(records, trajectory=None, cluster=None):
    """Summaries (phi(X_{tau_{i+1}}), height, duration, V) of uncensored intervals."""
    t = records
    keep = t.uncensored
    if keep.sum() < 1 or len(t) < 2:
        raise ValueError("need at least two uncensored renewals")
    phi = t.phi_exit[keep]
    if np.isnan(phi).any():
        if trajectory is None or trajectory.arena is None:
            raise ValueError("field values unavailable: pass the trajectory")
        idx = np.flatnonzero(keep)
        phi = trajectory.arena.value[trajectory.nodes[t.tau[idx + 1]]]
    hgt = t.interval_height[keep]
    dur = t.duration[keep]
    V = potential(phi, hgt, dur)
    return [ChainState(float(p), int(a), int(b), float(v)) for p, a, b, v in zip(phi, hgt, dur, V)]


def write_renewals_csv(path, tables, header_lines=()):
    """``tables``: iterable of (replica, RenewalTable)."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RENEWAL_COLUMNS)
        for replica, t in tables:
            V = t.potential()
            for k in range(len(t)):
                c = bool(t.censored[k])
                row = [replica, k + 1, int(t.tau[k]), int(t.height[k]), repr(float(t.phi_entry[k]))]
                if c:
                    row += ["", "", "", "", 1]
                else:
                    row += [int(t.duration[k]), int(t.height_gain[k]), int(t.height_gain[k]),
                            repr(float(V[k])), 0]
                w.writerow(row)
