"""Counter-based, splittable randomness keyed by tree paths.

Every vertex owns a 64-bit seed obtained by folding its child-index path into
the master seed with a splitmix64 step. The Gaussian innovation of a vertex is
a pure function of that seed, so the order in which the tree is explored never
changes the field. Walk steps draw ``uniform_at(key, t)``, again a pure
function of ``(key, t)``.

Two interchangeable implementations of the scalar helpers exist: one on
``np.uint64`` for numba kernels, one on masked Python ints for the
interpreter fallback. Both produce identical bits.
"""
import math

import numpy as np

from ._jit import USE_NUMBA, njit

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
ROOT_SALT = 0x5851F42D4C957F2D
NORMAL_SALT_1 = 0x2545F4914F6CDD1D
NORMAL_SALT_2 = 0xD1B54A32D192ED03
_INV53 = 1.0 / 9007199254740992.0

# stream labels for derive()
LABEL_ARENA = 1
LABEL_WALK = 2
LABEL_TRIALS = 3
LABEL_ATTEMPT = 4


def mix64_int(x):
    z = int(x) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive(seed, label):
    """Child stream seed: splitmix64 output number ``label`` of state ``seed``."""
    return mix64_int((int(seed) + GAMMA * (int(label) + 1)) & MASK64)


def replica_seed(master_seed, replica):
    return (int(master_seed) ^ int(replica)) & MASK64


def root_seed(master_seed):
    return mix64_int((int(master_seed) & MASK64) ^ ROOT_SALT)


def vertex_seed(master_seed, path):
    """Seed of the vertex reached from the root by the child indices ``path``."""
    s = root_seed(master_seed)
    for slot in path:
        s = derive(s, slot)
    return s


def mix64_array(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def vertex_seeds(master_seeds, paths):
    """Vectorised :func:`vertex_seed` for equal-length paths.

    ``master_seeds`` has shape (n,), ``paths`` shape (n, L).
    """
    paths = np.asarray(paths, dtype=np.uint64)
    m = np.asarray(master_seeds, dtype=np.uint64)
    s = mix64_array(m ^ np.uint64(ROOT_SALT))
    with np.errstate(over="ignore"):
        for j in range(paths.shape[1]):
            s = mix64_array(s + np.uint64(GAMMA) * (paths[:, j] + np.uint64(1)))
    return s


def _normal_from_seed_int(s):
    u1 = (mix64_int(int(s) ^ NORMAL_SALT_1) >> 11) * _INV53
    u2 = (mix64_int(int(s) ^ NORMAL_SALT_2) >> 11) * _INV53
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


def _child_seed_int(s, slot):
    return mix64_int((int(s) + GAMMA * (int(slot) + 1)) & MASK64)


def _uniform_at_int(key, t):
    return (mix64_int((int(key) + GAMMA * (int(t) + 1)) & MASK64) >> 11) * _INV53


if USE_NUMBA:
    _U_GAMMA = np.uint64(GAMMA)
    _U_M1 = np.uint64(_M1)
    _U_M2 = np.uint64(_M2)
    _U_S1 = np.uint64(NORMAL_SALT_1)
    _U_S2 = np.uint64(NORMAL_SALT_2)
    _U30 = np.uint64(30)
    _U27 = np.uint64(27)
    _U31 = np.uint64(31)
    _U11 = np.uint64(11)
    _U1 = np.uint64(1)

    @njit
    def _mix64_u(z):
        z = (z ^ (z >> _U30)) * _U_M1
        z = (z ^ (z >> _U27)) * _U_M2
        return z ^ (z >> _U31)

    @njit
    def child_seed(s, slot):
        return _mix64_u(s + _U_GAMMA * (np.uint64(slot) + _U1))

    @njit
    def normal_from_seed(s):
        u1 = np.float64(_mix64_u(s ^ _U_S1) >> _U11) * _INV53
        u2 = np.float64(_mix64_u(s ^ _U_S2) >> _U11) * _INV53
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    @njit
    def uniform_at(key, t):
        return np.float64(_mix64_u(key + _U_GAMMA * (np.uint64(t) + _U1)) >> _U11) * _INV53

else:
    child_seed = _child_seed_int
    normal_from_seed = _normal_from_seed_int
    uniform_at = _uniform_at_int


def normal_at(seed):
    """Standard normal innovation attached to a vertex seed (interpreter path)."""
    return _normal_from_seed_int(seed)
