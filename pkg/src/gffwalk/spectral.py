"""Intergenerational operators of the tree GFF on a Gauss-Legendre grid.

L_h f(a) = (d-1) 1{a>=h} E[f(a/(d-1) + Y) 1{a/(d-1) + Y >= h}],  Y ~ N(0, d/(d-1))
R_h f(a) = 1{a<h} + 1{a>=h} E[f(a/(d-1) + Y)]^(d-1)

Grid functions live on nodes in [h, U]. Mass of the one-step kernel beyond U
is assigned to the last node (for R_h, whose fixed points are ~0 there) or
dropped (for L_h); both tails are of order 1e-20 for the default truncation.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import math
import warnings

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize
from scipy.stats import norm

DEFAULT_M = 400
DEFAULT_TRUNC = 10.0  # in standard deviations of nu
DEFAULT_PANELS = 20
TAIL_TOL = 1e-10


class SpectralError(RuntimeError):
    pass


def nu_sd(d):
    return math.sqrt((d - 1) / (d - 2))


def nu1_sd(d):
    return math.sqrt(d / (d - 1))


def _check_d(d):
    if int(d) != d or d < 3:
        raise ValueError("d must be an integer >= 3")
    return int(d)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    d: int
    h: float
    nodes: np.ndarray
    weights: np.ndarray
    T: float
    tail_bound: float

    @property
    def m(self):
        return len(self.nodes)

    @property
    def upper(self):
        return self.h + self.T

    @property
    def nu(self):
        return norm.pdf(self.nodes, scale=nu_sd(self.d))

    def kernel_rows(self, x):
        """Matrix P[i, j] = w_j p_{nu_1}(a_j - x_i/(d-1))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        mean = x[:, None] / (self.d - 1)
        return norm.pdf(self.nodes[None, :] - mean, scale=nu1_sd(self.d)) * self.weights[None, :]

    def below_mass(self, x):
        return norm.cdf((self.h - np.asarray(x, dtype=float) / (self.d - 1)) / nu1_sd(self.d))

    def above_mass(self, x):
        return norm.sf((self.upper - np.asarray(x, dtype=float) / (self.d - 1)) / nu1_sd(self.d))

    def nu_integral(self, values):
        return float(np.sum(self.weights * self.nu * values))


def make_grid(d, h, m=DEFAULT_M, trunc=DEFAULT_TRUNC, panels=DEFAULT_PANELS):
    """Piecewise Gauss-Legendre nodes on [h, max(h, 0) + trunc * sd(nu)]."""
    d = _check_d(d)
    if m < 2 or trunc <= 0:
        raise ValueError("need m >= 2 and trunc > 0")
    panels = max(1, min(int(panels), int(m) // 2))
    per = int(m) // panels
    sd = nu_sd(d)
    upper = max(h, 0.0) + trunc * sd
    x, w = leggauss(per)
    edges = np.linspace(h, upper, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    # nu is stationary for the one-step kernel, so the nu-averaged kernel
    # mass leaving the grid equals nu(upper, inf)
    tail = float(norm.sf(upper / sd))
    if tail > TAIL_TOL:
        warnings.warn(f"truncation tail {tail:.2e} exceeds {TAIL_TOL:g}", RuntimeWarning, stacklevel=2)
    return QuadratureGrid(d, float(h), nodes, weights, float(upper - h), float(tail))


def _as_grid_values(f, grid):
    if callable(f):
        return np.asarray(f(grid.nodes), dtype=float)
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        return np.full(grid.m, float(f))
    if f.shape != (grid.m,):
        raise ValueError("grid function has the wrong length")
    return f


def apply_Lh(h, f, grid, points=None):
    """L_h f at the grid nodes, or at ``points`` if given."""
    if h != grid.h:
        raise ValueError("grid was built for a different h")
    fv = _as_grid_values(f, grid)
    x = grid.nodes if points is None else np.atleast_1d(np.asarray(points, dtype=float))
    out = (grid.d - 1) * (grid.kernel_rows(x) @ fv)
    out[x < h] = 0.0
    return out


def _lh_matrix(grid):
    return (grid.d - 1) * grid.kernel_rows(grid.nodes)


@dataclass(frozen=True, eq=False)
class SpectralResult:
    h: float
    lambda_h: float
    chi_h: np.ndarray
    residual: float
    iterations: int
    grid: QuadratureGrid

    def meta(self):
        return {"d": self.grid.d, "h": self.h, "m": self.grid.m, "T": self.grid.T,
                "tail_bound": self.grid.tail_bound}


def top_eigen(h, grid, tol=1e-10, max_iter=10_000):
    """Dominant eigenpair of L_h by power iteration on the nu-symmetrised matrix."""
    if h != grid.h:
        raise ValueError("grid was built for a different h")
    K = _lh_matrix(grid)
    dw = grid.nu * grid.weights
    sq = np.sqrt(dw)
    S = sq[:, None] * K / sq[None, :]
    S = 0.5 * (S + S.T)  # exact symmetry up to rounding
    u = sq.copy()  # constant function 1
    u /= np.linalg.norm(u)
    lam = float(u @ S @ u)
    for it in range(1, max_iter + 1):
        v = S @ u
        u = v / np.linalg.norm(v)
        new = float(u @ S @ u)
        if abs(new - lam) < tol:
            lam = new
            break
        lam = new
    else:
        raise SpectralError(f"power iteration did not converge in {max_iter} iterations")
    chi = u / sq
    chi *= np.sign(chi.sum())
    chi /= math.sqrt(grid.nu_integral(chi * chi))
    r = K @ chi - lam * chi
    residual = math.sqrt(grid.nu_integral(r * r))
    return SpectralResult(float(h), lam, chi, residual, it, grid)


@lru_cache(maxsize=256)
def lambda_h(d, h, m=DEFAULT_M, trunc=DEFAULT_TRUNC):
    return top_eigen(h, make_grid(d, h, m, trunc)).lambda_h


@lru_cache(maxsize=32)
def solve_hstar(d, tol=1e-10, m=DEFAULT_M, trunc=DEFAULT_TRUNC, max_iter=200):
    """Threshold h_star(d): the h with lambda_h = 1, by bisection."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    d = _check_d(d)
    f = lambda x: lambda_h(d, x, m, trunc) - 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        if f(lo) > 0:
            break
        lo -= 1.0
    for _ in range(60):
        if f(hi) < 0:
            break
        hi += 1.0
    if not (f(lo) > 0 > f(hi)):
        raise SpectralError("could not bracket lambda_h = 1")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol or hi - lo < 1e-14:
            return mid
        if fm > 0:
            lo = mid
        else:
            hi = mid
    raise SpectralError("bisection did not reach tolerance")


# -- R_h and extinction ------------------------------------------------------

def _one_step_mean(grid, fv, below_value, x=None):
    """E[f(x/(d-1) + Y)] where f is ``below_value`` under h, fv on the grid
    and fv[-1] beyond the grid."""
    x = grid.nodes if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    return (below_value * grid.below_mass(x) + grid.kernel_rows(x) @ fv
            + fv[-1] * grid.above_mass(x))


@dataclass(frozen=True, eq=False)
class QhTable:
    """Extinction probability q_h(a) of the plus-mode cluster with root value a."""
    d: int
    h: float
    values: np.ndarray
    iterations: int
    residual: float
    converged: bool
    grid: QuadratureGrid

    @property
    def nodes(self):
        return self.grid.nodes

    def mean_next(self, x):
        """m(x) = E[q_h(x/(d-1) + Y)]."""
        return _one_step_mean(self.grid, self.values, 1.0, x)

    def at(self, a):
        """q_h(a), via the fixed-point equation (exact off the grid too)."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        out = self.mean_next(a) ** (self.d - 1)
        out[a < self.h] = 1.0
        return out


def iterate_Rh(d, h, tol=1e-8, max_iter=10_000, grid=None, strict=True, callback=None):
    """Iterate R_h from f_0 = 1{a<h}; the k-th iterate is P_a(Z_k^{h,+} empty)."""
    d = _check_d(d)
    grid = make_grid(d, h) if grid is None else grid
    below = grid.below_mass(grid.nodes)
    P = grid.kernel_rows(grid.nodes)
    above = grid.above_mass(grid.nodes)
    f = np.zeros(grid.m)
    inc = np.inf
    it = 0
    while it < max_iter:
        nf = (below + P @ f + f[-1] * above) ** (d - 1)
        np.minimum(nf, 1.0, out=nf)
        inc = float(np.max(np.abs(nf - f)))
        f = nf
        it += 1
        if callback is not None:
            callback(it, f)
        if inc < tol:
            break
    converged = inc < tol
    resid = float(np.max(np.abs((below + P @ f + f[-1] * above) ** (d - 1) - f)))
    if not converged and strict:
        raise SpectralError(f"R_h iteration not converged after {max_iter} steps "
                            f"(sup increment {inc:.3e})")
    return QhTable(d, float(h), f, it, resid, converged, grid)


def eta(d, h, qh, mode="full"):
    """Probability that the root cluster is infinite."""
    if qh.h != h or qh.d != d:
        raise ValueError("q_h table does not match (d, h)")
    g = qh.grid
    if mode == "plus":
        return g.nu_integral(1.0 - qh.values)
    if mode == "full":
        return g.nu_integral(1.0 - qh.mean_next(g.nodes) ** d)
    raise ValueError("mode must be 'full' or 'plus'")


def mean_generation_sizes(d, h, k_max, grid=None, a=None):
    """E|Z_k^{h,+}| = (L_h^k 1)(a) for k = 0..k_max; nu-averaged root if a is None."""
    grid = make_grid(d, h) if grid is None else grid
    K = _lh_matrix(grid)
    f = np.ones(grid.m)
    out = []
    for k in range(k_max + 1):
        if a is None:
            out.append(grid.nu_integral(f))
        elif k == 0:
            out.append(float(a >= h))
        else:
            out.append(float((grid.d - 1) * (grid.kernel_rows([a]) @ prev)[0]) if a >= h else 0.0)
        prev = f
        f = K @ f
    return np.array(out)


# -- Frechet derivative ------------------------------------------------------

def frechet_A(d, h, f, g, grid, f_below=1.0, g_below=0.0, points=None):
    """A_h^f g(a) = 1{a>=h} (d-1) E[f(a/(d-1)+Y)]^(d-2) E[g(a/(d-1)+Y)]."""
    fv = _as_grid_values(f, grid)
    gv = _as_grid_values(g, grid)
    x = grid.nodes if points is None else np.atleast_1d(np.asarray(points, dtype=float))
    mf = _one_step_mean(grid, fv, f_below, x)
    mg = _one_step_mean(grid, gv, g_below, x)
    out = (d - 1) * mf ** (d - 2) * mg
    out[x < h] = 0.0
    return out


def grid_sup(fn, grid, n_mesh=2001):
    """sup over [h, upper] of |fn(x)| for a function evaluable anywhere:
    dense fixed mesh, then a bounded scalar refinement around the best point."""
    x = np.linspace(grid.h, grid.upper, n_mesh)
    v = np.abs(fn(x))
    j = int(np.argmax(v))
    lo, hi = x[max(j - 1, 0)], x[min(j + 1, n_mesh - 1)]
    res = optimize.minimize_scalar(lambda t: -abs(float(fn([t])[0])), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-12})
    return float(max(v[j], -res.fun))


def frechet_iterates(d, h, f, g, grid, k_max=10):
    """sup_a |A_{k,h}^f g(a)| for k = 1..k_max, where A_k = A^{R^{k-1} f} o A_{k-1}."""
    fv = _as_grid_values(f, grid).copy()
    gv = _as_grid_values(g, grid).copy()
    below = grid.below_mass(grid.nodes)
    P = grid.kernel_rows(grid.nodes)
    above = grid.above_mass(grid.nodes)
    sups = []
    for _ in range(k_max):
        fk, gk = fv, gv
        sups.append(grid_sup(lambda x: frechet_A(d, h, fk, gk, grid, points=x), grid))
        gv = frechet_A(d, h, fv, gv, grid)
        fv = (below + P @ fv + fv[-1] * above) ** (d - 1)
    return np.array(sups)


# -- obstruction integral ----------------------------------------------------

def obstruction_integral(d, h, z):
    """I_z = int_h^inf exp(-(d-1)/(2d) ((z - t/(d-1))^2 + (t - z/(d-1))^2)) dt."""
    if z < h:
        raise ValueError("need z >= h")
    c = (d - 1) / (2 * d)
    f = lambda t: math.exp(-c * ((z - t / (d - 1)) ** 2 + (t - z / (d - 1)) ** 2))
    # the integrand peaks near t = 2z/(d-1+1/(d-1)); split there for quad
    peak = max(h, 2 * z * (d - 1) / ((d - 1) ** 2 + 1))
    val = integrate.quad(f, h, peak, epsabs=0, epsrel=1e-12)[0] if peak > h else 0.0
    val += integrate.quad(f, peak, np.inf, epsabs=0, epsrel=1e-12)[0]
    return val
