"""Speed, CLT, growth-rate, tail and drift estimators.

Every function here is a deterministic function of its input records.
Where a Monte Carlo calibration is needed, it uses a fixed internal seed.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats

Z95 = stats.norm.ppf(0.975)
N_BATCHES = 30
CALIBRATION_SEED = 20240601


class InsufficientData(ValueError):
    pass


@dataclass
class SpeedEstimate:
    s_hat: float
    ci: tuple
    method: str
    n_effective: int
    s_X: float = float("nan")
    s_tau: float = float("nan")

    @property
    def half_width(self):
        return 0.5 * (self.ci[1] - self.ci[0])

    def to_dict(self):
        return {"s_hat": self.s_hat, "ci": list(self.ci), "method": self.method,
                "n_effective": self.n_effective, "s_X": self.s_X, "s_tau": self.s_tau}


def _heights(t):
    return np.asarray(getattr(t, "heights", t))


def speed_direct(trajectories, min_replicas=30, min_steps=10_000):
    """Mean of |X_n|/n across replicas with a normal-approximation 95% CI."""
    hs = [_heights(t) for t in trajectories]
    ns = np.array([len(x) - 1 for x in hs])
    final = np.array([v[-1] for v in hs], dtype=float)
    return speed_from_endpoints(final, ns, min_replicas, min_steps)


def speed_from_endpoints(final_heights, n_steps, min_replicas=30, min_steps=10_000):
    final = np.asarray(final_heights, dtype=float)
    ns = np.broadcast_to(np.asarray(n_steps, dtype=float), final.shape)
    if len(final) < min_replicas:
        raise InsufficientData(f"need >= {min_replicas} replicas, got {len(final)}")
    if ns.min() < min_steps:
        raise InsufficientData(f"trajectories shorter than {min_steps} steps")
    x = final / ns
    m = float(x.mean())
    hw = float(Z95 * x.std(ddof=1) / math.sqrt(len(x)))
    return SpeedEstimate(m, (m - hw, m + hw), "direct", len(x))


def _pool_intervals(records):
    """Concatenated (gain, duration) arrays of uncensored intervals."""
    tables = [records] if hasattr(records, "censored") else list(records)
    g, t = [], []
    for tab in tables:
        keep = ~np.asarray(tab.censored)
        g.append(np.asarray(tab.height_gain)[keep])
        t.append(np.asarray(tab.duration)[keep])
    if not g:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(g).astype(float), np.concatenate(t).astype(float)


def batch_ratio(num, den, n_batches=N_BATCHES):
    """Ratio of sums with a batch-means t-interval (contiguous batches)."""
    est = num.sum() / den.sum()
    edges = np.linspace(0, len(num), n_batches + 1).astype(int)
    rb = np.array([num[a:b].sum() / den[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])
    hw = stats.t.ppf(0.975, n_batches - 1) * rb.std(ddof=1) / math.sqrt(n_batches)
    return float(est), float(hw)


def speed_renewal(records, min_intervals=100, n_batches=N_BATCHES):
    """Renewal-ratio speed sum(height_gain) / sum(duration) over uncensored intervals."""
    g, t = _pool_intervals(records)
    if len(g) < max(min_intervals, n_batches):
        raise InsufficientData(f"need >= {min_intervals} uncensored intervals, got {len(g)}")
    s, hw = batch_ratio(g, t, n_batches)
    return SpeedEstimate(s, (s - hw, s + hw), "renewal_ratio", len(g),
                         float(g.mean()), float(t.mean()))


def speeds_agree(a, b):
    return abs(a.s_hat - b.s_hat) <= a.half_width + b.half_width


# -- CLT ---------------------------------------------------------------------

def lilliefors_critical(n, alpha=0.05, reps=4000, seed=CALIBRATION_SEED):
    """Critical value of the KS distance to N(0,1) after studentising n samples."""
    g = np.random.default_rng(seed)
    x = g.standard_normal((reps, n))
    x = (x - x.mean(1, keepdims=True)) / x.std(1, ddof=1, keepdims=True)
    x.sort(axis=1)
    F = stats.norm.cdf(x)
    i = np.arange(1, n + 1)
    D = np.maximum((i / n - F).max(1), (F - (i - 1) / n).max(1))
    return float(np.quantile(D, 1 - alpha))


def ratio_of_second_moments(a, b):
    """mean(a^2)/mean(b^2) (a, b centred) with a delta-method standard error."""
    a = a - a.mean()
    b = b - b.mean()
    A, B = np.mean(a * a), np.mean(b * b)
    R = A / B
    infl = (a * a - R * b * b) / B
    return float(R), float(infl.std(ddof=1) / math.sqrt(len(a)))


@dataclass
class CltDiagnostics:
    checkpoints: tuple
    z_scores: dict
    sigma_hat: float
    ks_statistic: float
    ks_critical: float
    variance_ratio: float
    variance_ratio_se: float
    sigma_W: float = float("nan")
    sigma_formula: float = float("nan")
    sigma_literal: float = float("nan")

    @property
    def ks_pass(self):
        return self.ks_statistic < self.ks_critical

    def to_dict(self):
        return {"checkpoints": list(self.checkpoints), "sigma_hat": self.sigma_hat,
                "ks_statistic": self.ks_statistic, "ks_critical": self.ks_critical,
                "ks_pass": self.ks_pass, "variance_ratio": self.variance_ratio,
                "variance_ratio_se": self.variance_ratio_se, "sigma_W": self.sigma_W,
                "sigma_formula": self.sigma_formula, "sigma_literal": self.sigma_literal}


def sigma_from_renewals(records, s_X=None, s_tau=None):
    """sd of W_i = gain_i/s_X - duration_i/s_tau, and the implied sigma_h values.

    Returns (sigma_W, s * sqrt(s_tau) * sigma_W, sqrt(s_tau) * sigma_W); the
    first implied value follows from X_k - s k ~ s_X sum_{i <= k/s_tau} W_i.
    """
    g, t = _pool_intervals(records)
    if len(g) < 2:
        raise InsufficientData("need >= 2 uncensored intervals")
    sX = g.mean() if s_X is None else s_X
    st = t.mean() if s_tau is None else s_tau
    sw = float(np.std(g / sX - t / st, ddof=1))
    return sw, float(sX / st * math.sqrt(st) * sw), float(math.sqrt(st) * sw)


def checkpoint_heights(trajectories, checkpoints=(0.25, 0.5, 1.0)):
    """(replicas x checkpoints) matrix of |X_{floor(n t)}| and the common n."""
    hs = [_heights(t) for t in trajectories]
    n = min(len(x) for x in hs) - 1
    cols = [int(math.floor(n * c)) for c in checkpoints]
    return np.array([[x[k] for k in cols] for x in hs], dtype=float), n


def clt_check(trajectories, s_hat, checkpoints=(0.25, 0.5, 1.0), records=None,
              alpha=0.05):
    """Normalised deviations (|X_{floor(nt)}| - s n t)/sqrt(n) across replicas."""
    if len(trajectories) < 3:
        raise InsufficientData("need >= 3 replicas")
    H, n = checkpoint_heights(trajectories, checkpoints)
    return clt_from_checkpoints(H, n, s_hat, checkpoints, records, alpha)


def clt_from_checkpoints(H, n, s_hat, checkpoints=(0.25, 0.5, 1.0), records=None, alpha=0.05):
    H = np.asarray(H, dtype=float)
    if H.shape[0] < 3:
        raise InsufficientData("need >= 3 replicas")
    cps = tuple(float(c) for c in checkpoints)
    z = {}
    for j, c in enumerate(cps):
        k = int(math.floor(n * c))
        z[c] = (H[:, j] - s_hat * k) / math.sqrt(n)
    end = z[1.0] if 1.0 in z else z[cps[-1]]
    sigma = float(end.std(ddof=1))
    if sigma > 0:
        u = (end - end.mean()) / sigma
        ks = float(stats.kstest(u, "norm").statistic)
    else:
        ks = 1.0
    crit = lilliefors_critical(len(end), alpha)
    if 0.5 in z and 1.0 in z:
        vr, vse = ratio_of_second_moments(z[0.5], z[1.0])
    else:
        vr, vse = float("nan"), float("nan")
    out = CltDiagnostics(cps, z, sigma, ks, crit, vr, vse)
    if records is not None:
        out.sigma_W, out.sigma_formula, out.sigma_literal = sigma_from_renewals(records)
    return out


# -- growth ------------------------------------------------------------------

@dataclass
class GrowthFit:
    log_lambda_hat: float
    ci: tuple
    n_survivors: int
    k_range: tuple


def _sizes(table):
    if len(table) and not isinstance(table, np.ndarray) and hasattr(table[0], "extinct_at"):
        return np.array([r.size for r in table], dtype=float)
    return np.asarray(table, dtype=float)


def growth_rate(tables, k_range=(1, 20)):
    """Pooled least-squares slope of log|Z_k| on k over surviving replicas."""
    k0, k1 = int(k_range[0]), int(k_range[1])
    rows = [s[k0:k1 + 1] for s in map(_sizes, tables) if len(s) > k1 and s[k1] > 0]
    if not rows:
        raise InsufficientData("all replicas extinct in the k range")
    ks = np.arange(k0, k1 + 1, dtype=float)
    Y = np.log(np.stack(rows))
    kc = ks - ks.mean()
    slopes = (Y - Y.mean(1, keepdims=True)) @ kc / (kc @ kc)
    pooled = float(slopes.mean())  # equal-length rows: pooled OLS = mean slope
    hw = float(Z95 * slopes.std(ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else float("inf")
    return GrowthFit(pooled, (pooled - hw, pooled + hw), len(rows), (k0, k1))


# -- tails -------------------------------------------------------------------

@dataclass
class TailReport:
    n: int
    mean_half: float
    mean_full: float
    m2_half: float
    m2_full: float
    rel_change_mean: float
    rel_change_m2: float
    slope_k: float
    r2_k: float
    slope_k16: float
    r2_k16: float
    log_survival_decreasing: bool
    tolerance: float

    @property
    def stable(self):
        return self.rel_change_mean < self.tolerance and self.rel_change_m2 < self.tolerance

    def to_dict(self):
        d = dict(self.__dict__)
        d["stable"] = self.stable
        return d


def _linfit(x, y):
    res = stats.linregress(x, y)
    return float(res.slope), float(res.rvalue ** 2)


def tail_fit(durations, tolerance=0.05, min_n=1000):
    """Moment stability under doubling plus log-survival fits against k and k^(1/6).

    The functional form constants are not estimated as ground truth; the fits
    only describe the shape.
    """
    x = np.asarray(durations, dtype=float)
    if len(x) < min_n:
        raise InsufficientData(f"need >= {min_n} durations, got {len(x)}")
    half = x[: len(x) // 2]
    mh, mf = half.mean(), x.mean()
    qh, qf = np.mean(half ** 2), np.mean(x ** 2)
    vals, counts = np.unique(x, return_counts=True)
    surv = (len(x) - np.concatenate([[0], np.cumsum(counts)[:-1]])) / len(x)  # P(X >= v)
    logS = np.log(surv)
    ok = len(vals) >= 3
    sk, rk = _linfit(vals, logS) if ok else (float("nan"),) * 2
    s6, r6 = _linfit(vals ** (1 / 6), logS) if ok else (float("nan"),) * 2
    return TailReport(len(x), float(mh), float(mf), float(qh), float(qf),
                      float(abs(mh - mf) / mf), float(abs(qh - qf) / qf),
                      sk, rk, s6, r6, bool(np.all(np.diff(logS) < 0)), tolerance)


# -- drift -------------------------------------------------------------------

@dataclass
class DriftReport:
    bin_centers: np.ndarray
    mean_next: np.ndarray
    counts: np.ndarray
    C: float
    top_bins: int
    contraction_pass: bool
    phi_threshold: float
    phi_increment: float
    phi_increment_se: float
    n_pairs: int

    @property
    def phi_drift_negative(self):
        return self.phi_increment < 0

    def to_dict(self):
        return {"bin_centers": self.bin_centers.tolist(), "mean_next": self.mean_next.tolist(),
                "counts": self.counts.tolist(), "C": self.C, "top_bins": self.top_bins,
                "contraction_pass": self.contraction_pass, "phi_threshold": self.phi_threshold,
                "phi_increment": self.phi_increment, "phi_increment_se": self.phi_increment_se,
                "phi_drift_negative": self.phi_drift_negative, "n_pairs": self.n_pairs}


def _chain_arrays(chain):
    if isinstance(chain, dict):
        return np.asarray(chain["phi"], dtype=float), np.asarray(chain["V"], dtype=float)
    if len(chain) and hasattr(chain[0], "V"):
        return (np.array([c.phi for c in chain], dtype=float),
                np.array([c.V for c in chain], dtype=float))
    v = np.asarray(chain, dtype=float)
    return np.full(len(v), np.nan), v


def drift_check(chains, n_bins=10, top_bins=3, contraction=2 / 3, min_pairs=1000):
    """Binned conditional means of V(Y_{i+1}) given V(Y_i), and the phi drift
    over the top decile of phi(Y_i).

    The additive constant is fitted on the lower half of the bins as the
    largest excess of mean_next over contraction * center; the verdict asks
    the top bins to stay below contraction * center + C.
    """
    V0, V1, P0, P1 = [], [], [], []
    for ch in chains:
        phi, V = _chain_arrays(ch)
        V0.append(V[:-1]); V1.append(V[1:])
        P0.append(phi[:-1]); P1.append(phi[1:])
    V0, V1, P0, P1 = map(np.concatenate, (V0, V1, P0, P1))
    if len(V0) < min_pairs:
        raise InsufficientData(f"need >= {min_pairs} transitions, got {len(V0)}")
    edges = np.quantile(V0, np.linspace(0, 1, n_bins + 1))
    idx = np.clip(np.searchsorted(edges, V0, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    use = counts > 0
    centers = np.bincount(idx, V0, n_bins)[use] / counts[use]
    mnext = np.bincount(idx, V1, n_bins)[use] / counts[use]
    counts = counts[use]
    nb = len(centers)
    low = max(1, nb // 2)
    C = float(np.max(mnext[:low] - contraction * centers[:low]))
    top = min(top_bins, nb - low)
    ok = bool(np.all(mnext[nb - top:] <= contraction * centers[nb - top:] + C)) if top > 0 else False
    fin = np.isfinite(P0) & np.isfinite(P1)
    if fin.sum() >= 10:
        thr = float(np.quantile(P0[fin], 0.9))
        sel = fin & (P0 >= thr)
        inc = P1[sel] - P0[sel]
        pi, pse = float(inc.mean()), float(inc.std(ddof=1) / math.sqrt(len(inc)))
    else:
        thr, pi, pse = float("nan"), float("nan"), float("nan")
    return DriftReport(centers, mnext, counts, C, top, ok, thr, pi, pse, len(V0))
