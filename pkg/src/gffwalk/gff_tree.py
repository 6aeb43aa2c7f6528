"""Lazily grown GFF on the rooted d-regular tree.

Nodes live in append-only arrays. A node's children are created together, in
slot order, the first time the node is expanded; their values follow

    value(child) = value(parent) / (d - 1) + sqrt(d / (d - 1)) * zeta(child)

with ``zeta`` drawn from the child's path seed. The root is N(0, (d-1)/(d-2))
unless pinned by ``root_condition``.

In ``plus`` mode every vertex (root included) has d - 1 children; in ``full``
mode the root has d.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import rng
from ._jit import njit

MODES = ("full", "plus")
DEFAULT_MAX_NODES = 10 ** 7
NEED_SPACE = -1  # kernel status: arena capacity exhausted, grow and re-run


class ExplorationLimit(MemoryError):
    """Raised when an arena would grow past its configured node cap."""


@dataclass(frozen=True)
class VertexId:
    path: tuple = ()

    @property
    def height(self):
        return len(self.path)

    def child(self, slot):
        return VertexId(self.path + (int(slot),))

    def parent(self):
        if not self.path:
            raise ValueError("the root has no parent")
        return VertexId(self.path[:-1])


ROOT = VertexId(())


@njit
def n_children(node, d, full):
    if node == 0 and full:
        return d
    return d - 1


@njit
def expand_node(tree, count, node, d, full):
    """Materialise the children of ``node``. Returns False if out of capacity."""
    parent, depth, value, seed, first_child, slot = tree
    if first_child[node] >= 0:
        return True
    nc = n_children(node, d, full)
    start = count[0]
    if start + nc > parent.shape[0]:
        return False
    scale = math.sqrt(d / (d - 1.0))
    pv = value[node] / (d - 1.0)
    for j in range(nc):
        c = start + j
        s = rng.child_seed(seed[node], j)
        parent[c] = node
        depth[c] = depth[node] + 1
        seed[c] = s
        value[c] = pv + scale * rng.normal_from_seed(s)
        first_child[c] = -1
        slot[c] = j
    first_child[node] = start
    count[0] = start + nc
    return True


class GffTreeArena:
    """Append-only store of materialised vertices with their GFF values.

    Node 0 is the root. Integer node handles are stable for the arena's
    lifetime; :class:`VertexId` paths are the public, arena-independent names.
    """

    def __init__(self, d, mode="plus", root_condition=None, master_seed=0,
                 capacity=1024, max_nodes=DEFAULT_MAX_NODES):
        if int(d) != d or d < 3:
            raise ValueError(f"degree d must be an integer >= 3, got {d!r}")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.d = int(d)
        self.mode = mode
        self.full = mode == "full"
        self.root_condition = None if root_condition is None else float(root_condition)
        self.master_seed = int(master_seed) & rng.MASK64
        self.max_nodes = int(max_nodes)
        cap = max(int(capacity), self.d + 1)
        self.parent = np.full(cap, -1, dtype=np.int64)
        self.depth = np.zeros(cap, dtype=np.int32)
        self.value = np.zeros(cap, dtype=np.float64)
        self.seed = np.zeros(cap, dtype=np.uint64)
        self.first_child = np.full(cap, -1, dtype=np.int64)
        self.slot = np.zeros(cap, dtype=np.int8)
        self.count = np.ones(1, dtype=np.int64)
        s0 = rng.root_seed(self.master_seed)
        self.seed[0] = s0
        if self.root_condition is None:
            self.value[0] = math.sqrt((self.d - 1) / (self.d - 2)) * rng.normal_at(s0)
        else:
            self.value[0] = self.root_condition

    @property
    def tree(self):
        return (self.parent, self.depth, self.value, self.seed, self.first_child, self.slot)

    @property
    def n_nodes(self):
        return int(self.count[0])

    @property
    def capacity(self):
        return self.parent.shape[0]

    def reserve(self, extra):
        """Make room for ``extra`` more nodes (geometric growth, capped)."""
        need = self.n_nodes + int(extra)
        if need <= self.capacity:
            return
        if need > self.max_nodes:
            raise ExplorationLimit(
                f"arena would hold {need} nodes, cap is {self.max_nodes}")
        new_cap = min(max(need, 2 * self.capacity), self.max_nodes)
        n = self.n_nodes
        for name, fill in (("parent", -1), ("depth", 0), ("value", 0.0),
                           ("seed", 0), ("first_child", -1), ("slot", 0)):
            old = getattr(self, name)
            arr = np.full(new_cap, fill, dtype=old.dtype)
            arr[:n] = old[:n]
            setattr(self, name, arr)

    def grow(self):
        """Double capacity; used when a kernel reports it ran out of room."""
        self.reserve(self.capacity)

    def run(self, kernel, *args):
        """Call ``kernel(tree, count, *args)`` until it stops asking for room.

        Kernels return a negative status (``NEED_SPACE``) when they could not
        expand a node; since expansion is idempotent and values are path-pure,
        simply re-running after growing gives the same answer.
        """
        while True:
            out = kernel(self.tree, self.count, *args)
            status = out[0] if isinstance(out, tuple) else out
            if status != NEED_SPACE:
                return out
            self.grow()

    # -- node bookkeeping -------------------------------------------------
    def n_children_of(self, node):
        return self.d if (node == 0 and self.full) else self.d - 1

    def children_nodes(self, node):
        node = int(node)
        if self.first_child[node] < 0:
            self.reserve(self.n_children_of(node))
            if not expand_node(self.tree, self.count, node, self.d, self.full):
                raise RuntimeError("expansion failed after reserve")  # pragma: no cover
        fc = int(self.first_child[node])
        return np.arange(fc, fc + self.n_children_of(node), dtype=np.int64)

    def node_of(self, v):
        """Handle of a materialised vertex; ``KeyError`` if it is not materialised."""
        node = 0
        for j, s in enumerate(v.path):
            nc = self.n_children_of(node)
            if not 0 <= s < nc:
                raise KeyError(f"child index {s} out of range [0, {nc - 1}] at depth {j}")
            fc = int(self.first_child[node])
            if fc < 0:
                raise KeyError(f"vertex {v.path} is not materialised")
            node = fc + s
        return node

    def path_of(self, node):
        path = []
        node = int(node)
        while node != 0:
            path.append(int(self.slot[node]))
            node = int(self.parent[node])
        return VertexId(tuple(reversed(path)))

    def value_at(self, v):
        return float(self.value[self.node_of(v)])

    def is_expanded(self, v):
        return self.first_child[self.node_of(v)] >= 0

    def ancestors(self, node):
        """Nodes on the ray from the root to ``node`` (inclusive), root first."""
        out = []
        node = int(node)
        while node != -1:
            out.append(node)
            node = int(self.parent[node]) if node != 0 else -1
        return out[::-1]



def create_arena(d, mode="plus", root_condition=None, master_seed=0, **kws):
    """Arena with only the root materialised."""
    return GffTreeArena(d, mode=mode, root_condition=root_condition,
                        master_seed=master_seed, **kws)


def expand_children(arena, v):
    """Children of ``v`` (expanding them if needed), as :class:`VertexId`."""
    node = arena.node_of(v)
    nodes = arena.children_nodes(node)
    return [v.child(int(arena.slot[c])) for c in nodes]


def vertex_seed(master_seed, path):
    return rng.vertex_seed(master_seed, tuple(path.path if isinstance(path, VertexId) else path))


@njit
def _expand_ball(tree, count, d, full, radius):
    """Expand every vertex of depth < radius (ignoring the level set)."""
    parent, depth, value, seed, first_child, slot = tree
    i = 0
    while i < count[0]:
        if depth[i] < radius and first_child[i] < 0:
            if not expand_node(tree, count, i, d, full):
                return NEED_SPACE
        i += 1
    return 0


def expand_ball(arena, radius):
    """Materialise the full tree ball of the given radius."""
    arena.run(_expand_ball, arena.d, arena.full, int(radius))
    return arena
