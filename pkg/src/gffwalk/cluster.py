"""Level-set cluster of the root: generations, survival, skeleton and bushes,
and Monte Carlo transience diagnostics."""
from dataclasses import dataclass, field
import csv
import warnings
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from . import rng
from ._jit import njit
from .gff_tree import (NEED_SPACE, ExplorationLimit, GffTreeArena, VertexId,
                       create_arena, expand_node, n_children)

UNKNOWN, SKELETON, BUSH = 0, 1, 2
TAG_NAMES = {UNKNOWN: "unknown", SKELETON: "skeleton", BUSH: "bush"}
DEFAULT_G = 30
DEFAULT_D = 20
GENERATION_COLUMNS = ("replica", "k", "size", "extinct_at")


class SurvivalRejectionLimit(RuntimeError):
    pass


@dataclass
class ClusterView:
    """Connected component of the root in {value >= h}."""
    arena: GffTreeArena
    h: float

    @property
    def mode(self):
        return self.arena.mode

    @property
    def d(self):
        return self.arena.d

    def is_open(self, node):
        return bool(self.arena.value[int(node)] >= self.h)

    @property
    def root_open(self):
        return self.is_open(0)

    def members(self, max_depth=None):
        """Boolean mask over materialised nodes: in the cluster (and depth <= max_depth)."""
        a = self.arena
        md = np.iinfo(np.int32).max if max_depth is None else int(max_depth)
        return _cluster_mask(a.parent, a.depth, a.value, a.n_nodes, self.h, md)

    def contains(self, v):
        node = self.arena.node_of(v)
        return all(self.is_open(x) for x in self.arena.ancestors(node))


@njit
def _cluster_mask(parent, depth, value, n, h, max_depth):
    out = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return out
    out[0] = value[0] >= h
    for i in range(1, n):
        out[i] = out[parent[i]] and value[i] >= h and depth[i] <= max_depth
    return out


@dataclass(frozen=True)
class GenerationRecord:
    k: int
    size: int
    extinct_at: Optional[int]


@njit
def _bfs_generations(tree, count, d, full, h, k_max, sizes, frontier, nxt):
    parent, depth, value, seed, first_child, slot = tree
    for k in range(k_max + 1):
        sizes[k] = 0
    if value[0] < h:
        return 0
    sizes[0] = 1
    frontier[0] = 0
    nf = 1
    for k in range(1, k_max + 1):
        nn = 0
        for i in range(nf):
            v = frontier[i]
            if not expand_node(tree, count, v, d, full):
                return NEED_SPACE
            fc = first_child[v]
            for j in range(n_children(v, d, full)):
                c = fc + j
                if value[c] >= h:
                    if nn >= nxt.shape[0]:
                        return NEED_SPACE
                    nxt[nn] = c
                    nn += 1
        sizes[k] = nn
        if nn == 0:
            break
        frontier, nxt = nxt, frontier
        nf = nn
    return 0


def generation_sizes(cluster, k_max):
    """Exact |Z_k| for k = 0..k_max (breadth-first; grows the arena)."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    a = cluster.arena
    sizes = np.zeros(k_max + 1, dtype=np.int64)
    while True:
        frontier = np.empty(a.capacity, dtype=np.int64)
        nxt = np.empty(a.capacity, dtype=np.int64)
        status = _bfs_generations(a.tree, a.count, a.d, a.full, cluster.h, int(k_max),
                                  sizes, frontier, nxt)
        if status != NEED_SPACE:
            return sizes
        a.grow()  # raises ExplorationLimit past the memory cap


def grow_generations(cluster, k_max):
    """Generation records of the cluster up to ``k_max`` or extinction."""
    sizes = generation_sizes(cluster, k_max)
    zero = np.flatnonzero(sizes == 0)
    extinct_at = int(zero[0]) if zero.size else None
    return [GenerationRecord(k, int(s), extinct_at) for k, s in enumerate(sizes)]


@njit
def _reaches_depth(tree, count, d, full, h, start, target, stack):
    parent, depth, value, seed, first_child, slot = tree
    if value[start] < h:
        return 0
    stack[0] = start
    sp = 1
    while sp > 0:
        sp -= 1
        v = stack[sp]
        if depth[v] >= target:
            return 1
        if not expand_node(tree, count, v, d, full):
            return NEED_SPACE
        fc = first_child[v]
        for j in range(n_children(v, d, full) - 1, -1, -1):
            c = fc + j
            if value[c] >= h:
                stack[sp] = c
                sp += 1
    return 0


def reaches_depth(cluster, G, start=0):
    """Depth-first search for an open path from ``start`` down to depth G."""
    a = cluster.arena
    stack = np.empty((int(G) + 2) * a.d + 1, dtype=np.int64)
    return bool(a.run(_reaches_depth, a.d, a.full, cluster.h, int(start), int(G), stack))


class SurvivalSample(NamedTuple):
    arena: GffTreeArena
    cluster: ClusterView
    rejections: int


def attempt_seed(seed, attempt):
    return rng.derive(rng.derive(seed, rng.LABEL_ARENA), attempt)


def survival_sample(d, h, mode="plus", G=DEFAULT_G, seed=0, root_condition=None,
                    max_rejections=10_000, check_threshold=True, max_nodes=None):
    """First arena whose cluster reaches generation G, with the rejection count.

    Finite-horizon stand-in for conditioning on an infinite cluster.
    """
    if G < 1:
        raise ValueError("G must be >= 1")
    if check_threshold:
        from .spectral import solve_hstar
        hs = solve_hstar(d)
        if h >= hs:
            warnings.warn(f"h={h} is not below h_star({d})={hs:.4f}; survival is rare",
                          RuntimeWarning, stacklevel=2)
    kws = {} if max_nodes is None else {"max_nodes": max_nodes}
    for attempt in range(max_rejections + 1):
        arena = create_arena(d, mode, root_condition, attempt_seed(seed, attempt), **kws)
        cl = ClusterView(arena, h)
        if reaches_depth(cl, G):
            return SurvivalSample(arena, cl, attempt)
    raise SurvivalRejectionLimit(
        f"no cluster survived to generation {G} in {max_rejections + 1} attempts "
        f"(d={d}, h={h}, mode={mode})")


def survival_frequency(d, h, mode="full", G=DEFAULT_G, replicas=1000, seed=0,
                       root_condition=None):
    """Number of replicas (of ``replicas``) whose cluster reaches generation G."""
    hits = 0
    for r in range(replicas):
        arena = create_arena(d, mode, root_condition, attempt_seed(rng.replica_seed(seed, r), 0))
        hits += reaches_depth(ClusterView(arena, h), G)
    return hits


# -- skeleton / bushes ------------------------------------------------------

@njit
def _max_descendant_depth(parent, depth, member, n):
    maxd = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if member[i]:
            maxd[i] = depth[i]
    for i in range(n - 1, 0, -1):
        if member[i]:
            p = parent[i]
            if maxd[i] > maxd[p]:
                maxd[p] = maxd[i]
    return maxd


def label_tree(parent, depth, member, D, explored_depth):
    """Skeleton/bush/unknown tags for the nodes flagged by ``member``.

    Parents must precede children in the arrays. A member is skeleton when it
    has member offspring D levels below it; bush when its offspring dies out
    inside the explored ball; unknown otherwise (too close to the frontier).
    """
    n = len(member)
    maxd = _max_descendant_depth(parent, np.asarray(depth, dtype=np.int64), member, n)
    dep = np.asarray(depth, dtype=np.int64)
    tags = np.full(n, UNKNOWN, dtype=np.int8)
    skel = member & (maxd - dep >= D)
    bush = member & ~skel & (maxd < explored_depth)
    tags[skel] = SKELETON
    tags[bush] = BUSH
    return tags


@dataclass
class SkeletonLabel:
    cluster: ClusterView
    horizon: int
    explored_depth: int
    nodes: np.ndarray
    tags: np.ndarray  # aligned with nodes

    def tag_of(self, v):
        node = self.cluster.arena.node_of(v)
        pos = np.searchsorted(self.nodes, node)
        if pos >= len(self.nodes) or self.nodes[pos] != node:
            raise KeyError(f"{v} is not in the explored cluster")
        return TAG_NAMES[int(self.tags[pos])]

    def counts(self):
        return {name: int(np.sum(self.tags == t)) for t, name in TAG_NAMES.items()}

    def fraction(self, name):
        t = {v: k for k, v in TAG_NAMES.items()}[name]
        return float(np.mean(self.tags == t)) if len(self.tags) else 0.0

    def bush_sizes(self):
        """Sizes of bushes hanging off skeleton vertices (or the whole cluster
        when it is a single bush)."""
        a = self.cluster.arena
        n = a.n_nodes
        tag_full = np.full(n, -1, dtype=np.int8)
        tag_full[self.nodes] = self.tags
        is_bush = tag_full == BUSH
        size = is_bush.astype(np.int64)
        for i in range(n - 1, 0, -1):
            if is_bush[i]:
                size[a.parent[i]] += size[i] if is_bush[a.parent[i]] else 0
        roots = [i for i in self.nodes if is_bush[i] and (i == 0 or tag_full[a.parent[i]] == SKELETON)]
        return np.array([size[i] for i in roots], dtype=np.int64)


def skeleton_label(cluster, D=DEFAULT_D, explored_depth=None):
    """Tag explored cluster vertices as skeleton, bush or unknown at horizon D."""
    K = int(D if explored_depth is None else explored_depth)
    if K < D:
        raise ValueError("explored depth must be >= D")
    generation_sizes(cluster, K)
    a = cluster.arena
    member = cluster.members(K)
    tags = label_tree(a.parent[:a.n_nodes], a.depth[:a.n_nodes], member, int(D), K)
    nodes = np.flatnonzero(member)
    return SkeletonLabel(cluster, int(D), K, nodes, tags[nodes])


# -- transience diagnostics -------------------------------------------------

@njit
def _escape_trials(tree, count, d, full, h, start, trials, horizon, key):
    """Number of walks from ``start`` (confined to its subtree) that do not
    come back to ``start`` within ``horizon`` steps."""
    parent, depth, value, seed, first_child, slot = tree
    escaped = 0
    for t in range(trials):
        v = start
        counter = t * horizon
        out = True
        for step in range(horizon):
            if not expand_node(tree, count, v, d, full):
                return NEED_SPACE
            fc = first_child[v]
            nc = n_children(v, d, full)
            n_open = 0
            for j in range(nc):
                if value[fc + j] >= h:
                    n_open += 1
            up = 1 if v != start else 0
            tot = n_open + up
            if tot == 0:
                out = False
                break
            r = int(rng.uniform_at(key, counter + step) * tot)
            if r >= tot:
                r = tot - 1
            if up == 1 and r == 0:
                v = parent[v]
            else:
                r -= up
                for j in range(nc):
                    if value[fc + j] >= h:
                        if r == 0:
                            v = fc + j
                            break
                        r -= 1
            if v == start:
                out = False
                break
        if out:
            escaped += 1
    return escaped


def wilson_interval(k, n, confidence=0.95):
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


def _trial_key(arena, node, seed):
    return np.uint64(rng.derive(rng.derive(int(arena.seed[node]), rng.LABEL_TRIALS), seed))


def escape_count(cluster, node, trials, horizon, seed=0):
    a = cluster.arena
    return int(a.run(_escape_trials, a.d, a.full, cluster.h, int(node), int(trials),
                     int(horizon), _trial_key(a, node, seed)))


def estimate_delta_transient(cluster, v, trials=200, horizon=500, seed=0):
    """Fraction of walks from ``v`` in its subtree that do not return to ``v``.

    Walks still away from ``v`` after ``horizon`` steps count as escaped, so
    the estimate is biased upwards by the finite horizon.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    node = cluster.arena.node_of(v) if isinstance(v, VertexId) else int(v)
    if not cluster.is_open(node):
        raise ValueError("starting vertex is not open")
    k = escape_count(cluster, node, trials, horizon, seed)
    return k / trials, wilson_interval(k, trials)


def count_delta_exits(cluster, z, delta, trials=100, horizon=300, seed=0, _cache=None):
    """Number of strict ancestors of ``z`` with an off-ray child rooting a
    subtree whose estimated escape probability is at least ``delta``."""
    a = cluster.arena
    node = a.node_of(z) if isinstance(z, VertexId) else int(z)
    ray = a.ancestors(node)
    cache = {} if _cache is None else _cache
    count = 0
    for anc, nxt in zip(ray[:-1], ray[1:]):
        for c in a.children_nodes(anc):
            c = int(c)
            if c == nxt or not cluster.is_open(c):
                continue
            if c not in cache:
                cache[c] = escape_count(cluster, c, trials, horizon, seed) / trials
            if cache[c] >= delta:
                count += 1
                break
    return count


def min_delta_exits(cluster, k, delta, trials=50, horizon=300, seed=0):
    """min over cluster vertices z at height k of E(z, delta); None if Z_k is empty."""
    a = cluster.arena
    generation_sizes(cluster, k)
    member = cluster.members(k)
    n = a.n_nodes
    transient = np.zeros(n, dtype=bool)
    for c in np.flatnonzero(member):
        if c != 0:
            transient[c] = escape_count(cluster, c, trials, horizon, seed) >= delta * trials
    n_trans = np.zeros(n, dtype=np.int64)
    for c in np.flatnonzero(member & transient):
        n_trans[a.parent[c]] += 1
    # exits accumulated down the tree; parents precede children
    exits = np.zeros(n, dtype=np.int64)
    for c in np.flatnonzero(member):
        if c == 0:
            continue
        p = a.parent[c]
        exits[c] = exits[p] + (1 if n_trans[p] - int(transient[c]) >= 1 else 0)
    at_k = member & (a.depth[:n] == k)
    if not at_k.any():
        return None
    return int(exits[at_k].min())


def write_generations_csv(path, tables, header_lines=()):
    """``tables``: iterable of (replica, list[GenerationRecord])."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GENERATION_COLUMNS)
        for replica, recs in tables:
            for r in recs:
                w.writerow([replica, r.k, r.size, "" if r.extinct_at is None else r.extinct_at])
