"""Linear statistics of random spectra, free energies, rate bounds, the
Hopf-Lax infimum convolution and the Monte Carlo experiments built on them."""
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import pwspace
from .potential import effective_sample_size, normalized_weights, sample_in_ball
from .spectra import compute_spectrum, tau_sequence, xi_sequence


class ContractionError(ValueError):
    pass


class InsufficientSamplesError(RuntimeError):
    pass


def _as_function(g):
    if isinstance(g, pwspace.BandlimitedFunction):
        return g
    if g == "sinc":
        return pwspace.BandlimitedFunction.sinc()
    return pwspace.BandlimitedFunction(g)


def thread_count():
    try:
        return max(1, int(os.environ.get("HILL_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map; runs on a thread pool of HILL_THREADS workers."""
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------ linear statistics

def _window(tau):
    tau = np.asarray(tau)
    if len(tau) % 2 != 1:
        raise ValueError("tau must be indexed symmetrically, -M..M")
    return tau, len(tau) // 2


def linear_statistic(g, tau, m):
    """sum_{j=-m..m} (g(tau_j) - g(j)), with the pair (j, -j) added first."""
    g = _as_function(g)
    tau, M = _window(tau)
    if m > M:
        raise ValueError(f"m={m} exceeds the spectrum window {M}")
    j = np.arange(1, m + 1)
    pos, neg = tau[M + j], tau[M - j]
    pairs = g(pos) + g(neg) - g(j.astype(float)) - g(-j.astype(float))
    total = np.sum(pairs) + (g(tau[M]) - g(0.0))
    total = complex(total)
    if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
        raise ValueError(f"linear statistic has imaginary part {total.imag:.3e}")
    return total.real


def tail_bound(g, tau, m, samples=32):
    """Upper bound for |F_M(tau) - F_m(tau)|, M the full window.

    Mean value theorem per term and Cauchy-Schwarz over |j| > m:
    (sum |tau_j - j|^2)^(1/2) * (sum_j max over [j, tau_j] |g'|^2)^(1/2).
    """
    g = _as_function(g)
    tau, M = _window(tau)
    if m > M:
        raise ValueError(f"m={m} exceeds the spectrum window {M}")
    idx = np.concatenate([np.arange(-M, -m), np.arange(m + 1, M + 1)])
    if len(idx) == 0:
        return 0.0
    t = tau[M + idx]
    dev = np.abs(t - idx)
    w = np.linspace(0.0, 1.0, samples)
    seg = idx[:, None] + w[None, :] * (t - idx)[:, None]
    gp = np.abs(g.prime(seg))
    # a grid max undershoots the true max by at most spacing * max|g''|
    slack = np.abs(t - idx) / (samples - 1) * np.pi ** 2 * g.l2_norm
    gmax = np.max(gp, axis=1) + slack
    return float(np.sqrt(np.sum(dev ** 2)) * np.sqrt(np.sum(gmax ** 2)))


# ------------------------------------------------------------------ rate bound

@dataclass
class RateProfile:
    schedule: list
    C: float = 1.0
    C1: float = 1.0

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("schedule must be nonempty")
        d = np.array([e[2] for e in self.schedule], float)
        a = np.array([e[1] for e in self.schedule], float)
        if np.any(a <= 0):
            raise ValueError("alpha_n must be positive")
        if np.any(np.diff(d) >= 0):
            raise ValueError("d_n must be strictly decreasing")

    @classmethod
    def from_constants(cls, beta, big_n, C=1.0, C1=1.0, n_max=16):
        n = np.arange(1, n_max + 1)
        alpha = 0.5 * n ** -8.0 * np.exp(-C * beta ** 2.5 * big_n ** 2.25)
        d = C1 * big_n * (big_n + 1) / n
        return cls([(int(k), float(x), float(y)) for k, x, y in zip(n, alpha, d)], C, C1)


def _branches(alpha, d, s):
    vals = []
    if s >= d:
        vals.append(0.25 * alpha * (s - d) ** 2)
    if 0 <= s <= d + 1 / (alpha * d):
        vals.append(0.25 * alpha * s * s / (1 + alpha * d * d))
    return vals


def rate_lower_bound(profile, s):
    """sup over the schedule of the applicable two-branch lower bounds."""
    if s < 0:
        raise ValueError("s must be >= 0")
    best = 0.0
    for _, alpha, d in profile.schedule:
        for v in _branches(alpha, d, s):
            best = max(best, v)
    return float(best)


def rate_envelope(profile, s_grid):
    """Greatest convex minorant of the running max of rate_lower_bound on s_grid.

    The raw sup drops by 1/4 where the second branch of an entry switches
    off (s = d + 1/(alpha d)).  The transform it bounds is convex and
    nondecreasing with value 0 at 0, so the running max and then the lower
    convex hull are still lower bounds for it, and have both properties.
    """
    s = np.asarray(s_grid, float)
    if np.any(np.diff(s) <= 0) or s[0] < 0:
        raise ValueError("s_grid must be increasing and start at s >= 0")
    v = np.maximum.accumulate([rate_lower_bound(profile, x) for x in s])
    hull = []
    for i in range(len(s)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies on or above the chord from a to i
            if (v[b] - v[a]) * (s[i] - s[a]) >= (v[i] - v[a]) * (s[b] - s[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(s, s[hull], v[hull])


# ---------------------------------------------------------------- free energy

@dataclass
class EmpiricalFreeEnergy:
    t_grid: np.ndarray
    c_values: np.ndarray
    s_grid: np.ndarray
    c_star: np.ndarray
    ess: float = np.nan


def empirical_free_energy(values, t_grid, log_weights=None, s_grid=None, min_samples=1000):
    """c_F(t) = log E_w e^{tF} - t E_w F and its discrete Legendre-Fenchel transform."""
    F = np.asarray(values, float)
    if len(F) < min_samples:
        raise InsufficientSamplesError(f"need >= {min_samples} samples, got {len(F)}")
    lw = np.zeros(len(F)) if log_weights is None else np.asarray(log_weights, float)
    w = normalized_weights(lw)
    logw = np.log(w, where=w > 0, out=np.full_like(w, -np.inf))
    mean = float(np.sum(w * F))
    t = np.asarray(t_grid, float)
    c = np.array([logsumexp(logw + tt * (F - mean)) for tt in t])
    ok = np.isfinite(c)
    if not np.all(ok):
        warnings.warn(f"dropping {np.sum(~ok)} t values outside the numerical range")
        t, c = t[ok], c[ok]
    c[t == 0] = 0.0
    if s_grid is None:
        s_grid = np.linspace(0.0, max(np.max(np.abs(F - mean)), 1e-12), 33)
    s = np.asarray(s_grid, float)
    c_star = np.max(s[:, None] * t[None, :] - c[None, :], axis=1)
    return EmpiricalFreeEnergy(t, c, s, c_star, effective_sample_size(lw))


# ------------------------------------------------------------------- Hopf-Lax

def contraction_number(g, s):
    return s * np.pi ** 2 * _as_function(g).l2_norm / np.sqrt(5)


def _hopf_lax_xi(g, s, eta, idx, tol=1e-14, max_iter=100):
    """Solve xi + s g'(xi + j) = eta coordinatewise by damped Newton."""
    xi = eta - s * g.prime(eta + idx)
    for _ in range(max_iter):
        r = xi + s * g.prime(xi + idx) - eta
        if np.max(np.abs(r)) < tol:
            break
        step = r / (1 + s * g.prime2(xi + idx))
        lam = np.ones_like(xi)
        for _ in range(30):
            trial = xi - lam * step
            worse = np.abs(trial + s * g.prime(trial + idx) - eta) > np.abs(r)
            if not np.any(worse):
                break
            lam = np.where(worse, lam / 2, lam)
        xi = xi - lam * step
    return xi


def hopf_lax(g, s, eta, index=None, return_xi=False):
    """Q_s F(eta) for F(xi) = sum_j (g(xi_j + j) - g(j)) over a finite window.

    Coordinates separate, so each xi_j is the unique stationary point of
    g(xi + j) + (xi - eta_j)^2 / (2 s); uniqueness needs the contraction
    s pi^2 |g| / sqrt 5 < 1.
    """
    g = _as_function(g)
    if not s > 0:
        raise ValueError("s must be positive")
    kappa = contraction_number(g, s)
    if kappa >= 1:
        raise ContractionError(f"s pi^2 |g| / sqrt(5) = {kappa:.4g} >= 1; the fixed point may not be unique")
    eta = np.asarray(eta, float)
    idx = (np.arange(len(eta)) - len(eta) // 2) if index is None else np.asarray(index, float)
    xi = _hopf_lax_xi(g, s, eta, idx)
    val = float(np.sum(g(xi + idx) - g(idx)) + np.sum((xi - eta) ** 2) / (2 * s))
    return (val, xi) if return_xi else val


def linear_functional(g, xi, index=None):
    """F(xi) = sum_j (g(xi_j + j) - g(j)) on a finite window."""
    g = _as_function(g)
    xi = np.asarray(xi, float)
    idx = (np.arange(len(xi)) - len(xi) // 2) if index is None else np.asarray(index, float)
    return float(np.sum(g(xi + idx) - g(idx)))


# -------------------------------------------------------- concentration report

@dataclass
class TailFit:
    slope: float
    intercept: float
    r2: float
    kappa_envelope: float
    points: int


def gaussian_tail_fit(eps, tail):
    """Least squares of log tail against eps^2 over the points with a nonzero tail."""
    eps, tail = np.asarray(eps, float), np.asarray(tail, float)
    ok = tail > 0
    if np.sum(ok) < 3:
        return TailFit(np.nan, np.nan, np.nan, np.nan, int(np.sum(ok)))
    x, y = eps[ok] ** 2, np.log(tail[ok])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ [slope, icpt]
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1 - np.sum(resid ** 2) / ss if ss > 0 else np.nan
    env = float(np.min(-y / x))
    return TailFit(float(slope), float(icpt), float(r2), env, int(np.sum(ok)))


@dataclass
class ConcentrationReport:
    mean: float
    variance: float
    std_error: float
    ess: float
    eps: np.ndarray
    tail: np.ndarray
    rate_bound: np.ndarray
    fit: TailFit
    lipschitz_mean: float = np.nan
    lipschitz_variance: float = np.nan
    records: list = field(default_factory=list, repr=False)


def weighted_summary(values, log_weights):
    v = np.asarray(values, float)
    w = normalized_weights(log_weights)
    # shift by a sample so a constant sample has mean exactly v[0] and variance 0
    mean = float(v[0] + np.sum(w * (v - v[0])))
    var = float(np.sum(w * (v - mean) ** 2))
    se = float(np.sqrt(np.sum(w ** 2 * (v - mean) ** 2)))
    return mean, var, se


def concentration_report(values, log_weights, eps_grid=None, profile=None, points=16):
    """Weighted mean/variance and the upper tail P(F - mean > eps) on a log grid
    from 0.05 sigma to 4 sigma, with the rate bound alongside."""
    values = np.asarray(values, float)
    lw = np.asarray(log_weights, float)
    mean, var, se = weighted_summary(values, lw)
    sigma = np.sqrt(var)
    if eps_grid is None:
        eps_grid = np.geomspace(0.05 * sigma, 4 * sigma, points) if sigma > 0 else np.zeros(0)
    eps = np.asarray(eps_grid, float)
    w = normalized_weights(lw)
    tail = np.array([np.sum(w[values - mean > e]) for e in eps])
    rates = np.array([rate_lower_bound(profile, e) for e in eps]) if profile else np.full(len(eps), np.nan)
    fit = gaussian_tail_fit(eps, tail)
    return ConcentrationReport(mean, var, se, effective_sample_size(lw), eps, tail, rates, fit)


def _trial_record(ws, g, m):
    sd = compute_spectrum(ws.spec, m)
    tau = tau_sequence(sd.lambdas)
    xi = xi_sequence(sd.mus)
    return {"trial_index": ws.trial_index, "log_weight": ws.log_weight,
            "F_m": linear_statistic(g, tau, m),
            "xi_norm": float(np.linalg.norm(xi)),
            "gaps": sd.gaps.tolist()}


def mc_concentration(cfg, g="sinc", m=8, trials=500, profile=None, min_trials=200,
                     min_ess=50.0, samples=None):
    """Gibbs Monte Carlo of F_m(tau) and of the 1-Lipschitz |xi|_2.

    `samples` overrides the sampler with a given list of WeightedSample.
    """
    if trials < min_trials:
        raise ValueError(f"need trials >= {min_trials}")
    g = _as_function(g)
    draws = samples if samples is not None else sample_in_ball(cfg, trials)
    records = parallel_map(lambda ws: _trial_record(ws, g, m), draws)
    lw = np.array([r["log_weight"] for r in records])
    ess = effective_sample_size(lw)
    if ess < min_ess:
        raise InsufficientSamplesError(f"effective sample size {ess:.1f} < {min_ess}")
    profile = profile or RateProfile.from_constants(cfg.beta, cfg.big_n)
    rep = concentration_report([r["F_m"] for r in records], lw, profile=profile)
    lm, lv, _ = weighted_summary([r["xi_norm"] for r in records], lw)
    rep.lipschitz_mean, rep.lipschitz_variance = lm, lv
    rep.records = records
    return rep


# ----------------------------------------------------------------- gap law

@dataclass
class GapScaling:
    j: np.ndarray
    mean_gap: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    c_lo: float
    c_hi: float
    ess: float
    flagged: bool


def gap_scaling_from_gaps(gaps, log_weights, j_range):
    """Weighted mean of d_j over trials and the slope of log mean vs log j."""
    gaps = np.atleast_2d(np.asarray(gaps, float))
    j = np.asarray(list(j_range))
    d = gaps[:, j - 1]
    w = normalized_weights(log_weights)
    mean = w @ d
    se = np.sqrt(w ** 2 @ (d - mean) ** 2)
    if np.any(mean <= 0):
        return GapScaling(j, mean, se, np.nan, np.nan, np.nan, np.nan,
                          effective_sample_size(log_weights), True)
    slope, icpt = np.polyfit(np.log(j), np.log(mean), 1)
    jm = j * mean
    return GapScaling(j, mean, se, float(slope), float(icpt), float(jm.min()), float(jm.max()),
                      effective_sample_size(log_weights), False)


def mean_gap_scaling(cfg, j_range=range(2, 13), trials=500, min_trials=200, samples=None):
    j_range = list(j_range)
    if min(j_range) < 2 or max(j_range) > 12:
        raise ValueError("j_range must lie in [2, 12]")
    if trials < min_trials:
        raise ValueError(f"need trials >= {min_trials}")
    draws = samples if samples is not None else sample_in_ball(cfg, trials)
    jm = max(j_range)
    gaps = parallel_map(lambda ws: compute_spectrum(ws.spec, jm).gaps, draws)
    lw = np.array([ws.log_weight for ws in draws])
    return gap_scaling_from_gaps(np.array(gaps), lw, j_range)
