"""Periodic potentials as truncated real Fourier series, plus samplers.

q(x) = a0/2 + sum_n (a_n cos nx + b_n sin nx), n = 1..M.
"""
import json
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    a0: float = 0.0
    a: np.ndarray = field(default_factory=lambda: np.zeros(1))
    b: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        m = max(len(a), len(b), 1)
        a = np.pad(a, (0, m - len(a)))
        b = np.pad(b, (0, m - len(b)))
        a0 = float(self.a0)
        if not (np.isfinite(a0) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("potential coefficients must be finite")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def M(self):
        return len(self.a)

    @property
    def mean(self):
        return 0.5 * self.a0

    def __call__(self, x):
        return eval_potential(self, x)

    def __eq__(self, other):
        if not isinstance(other, PotentialSpec):
            return NotImplemented
        return (self.a0 == other.a0 and np.array_equal(self.a, other.a)
                and np.array_equal(self.b, other.b))

    def amplitude_bound(self):
        """sup |q - a0/2| bound from the mode amplitudes."""
        return float(np.sum(np.hypot(self.a, self.b)))

    def to_dict(self):
        return {"a0": self.a0, "a": [float(v) for v in self.a],
                "b": [float(v) for v in self.b]}

    def to_json(self):
        return json.dumps(self.to_dict(), default=_float17)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"a0", "a", "b"}
        if extra:
            raise ValueError(f"unknown potential keys: {sorted(extra)}")
        return cls(d.get("a0", 0.0), d.get("a", [0.0]), d.get("b", [0.0]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _float17(v):
    return float(v)


def zero_potential(M=1):
    return PotentialSpec(0.0, np.zeros(M), np.zeros(M))


def constant_potential(c, M=1):
    return PotentialSpec(2.0 * c, np.zeros(M), np.zeros(M))


def cosine_potential(terms, M=None):
    """Build a spec from {n: amplitude} of cos(nx) terms."""
    M = M or max(terms)
    a = np.zeros(M)
    for n, v in terms.items():
        a[n - 1] = v
    return PotentialSpec(0.0, a, np.zeros(M))


def eval_potential(spec, x):
    x = np.asarray(x, dtype=float)
    n = np.arange(1, spec.M + 1)
    nx = np.multiply.outer(x, n)
    return spec.a0 / 2 + np.cos(nx) @ spec.a + np.sin(nx) @ spec.b


def norm_sq(spec):
    """Parseval value of the mean of q^2 over one period."""
    return (spec.a0 / 2) ** 2 + 0.5 * float(np.sum(spec.a ** 2 + spec.b ** 2))


def translate(spec, s):
    """Spec of q(x + s)."""
    n = np.arange(1, spec.M + 1)
    c, sn = np.cos(n * s), np.sin(n * s)
    return PotentialSpec(spec.a0, spec.a * c + spec.b * sn, spec.b * c - spec.a * sn)


def grid_mean(spec, power, points=None):
    """Trapezoid mean of q**power on a uniform periodic grid.

    Exact for trigonometric polynomials of degree below the point count, so
    8*M points handle the cubic term.
    """
    points = points or max(8 * spec.M, 16)
    x = 2 * np.pi * np.arange(points) / points
    return float(np.mean(eval_potential(spec, x) ** power))


def moment_quadratic_form(spec):
    """a0^2 + sum(a_n^2 + b_n^2) = gamma_0^2 + sum gamma_n^2 / n^2 for free-field draws."""
    return spec.a0 ** 2 + float(np.sum(spec.a ** 2 + spec.b ** 2))


# ---------------------------------------------------------------- sampling

def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_free_field(seed, mode_cut):
    """a0 = gamma_0, a_n = gamma_n / n, b_n = gamma_{-n} / n with iid N(0,1) draws."""
    if mode_cut < 1:
        raise ValueError("mode_cut must be >= 1")
    gam = _rng(seed).standard_normal(2 * mode_cut + 1)
    n = np.arange(1, mode_cut + 1)
    return PotentialSpec(gam[0], gam[1:mode_cut + 1] / n, gam[mode_cut + 1:] / n)


def free_field_tail_variance(mode_cut):
    """sum_{n > M} 1/n^2, the variance dropped by the mode cutoff."""
    return float(np.pi ** 2 / 6 - np.sum(1.0 / np.arange(1, mode_cut + 1) ** 2))


@dataclass(frozen=True)
class GibbsConfig:
    beta: float = 0.0
    big_n: float = 1.0
    mode_cut: int = 16
    seed: int = 0
    batch: int = 1000

    def __post_init__(self):
        problems = []
        if not self.beta >= 0:
            problems.append("beta must be >= 0")
        if not self.big_n > 0:
            problems.append("big_n must be > 0")
        if int(self.mode_cut) != self.mode_cut or self.mode_cut < 1:
            problems.append("mode_cut must be a positive integer")
        if int(self.batch) != self.batch or self.batch < 1:
            problems.append("batch must be a positive integer")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class WeightedSample:
    spec: PotentialSpec
    log_weight: float
    in_ball: bool
    trial_index: int = 0

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "log_weight": self.log_weight,
                "in_ball": self.in_ball, "trial_index": self.trial_index}


def gibbs_log_weight(spec, beta):
    """(beta/6) * mean of q^3 over the circle."""
    if beta == 0:
        return 0.0
    return beta / 6 * grid_mean(spec, 3)


def weigh(spec, cfg, trial_index=0):
    inside = norm_sq(spec) <= cfg.big_n
    lw = gibbs_log_weight(spec, cfg.beta) if inside else -np.inf
    return WeightedSample(spec, lw, bool(inside), trial_index)


def _batch(cfg, start):
    return [weigh(sample_free_field([cfg.seed, i], cfg.mode_cut), cfg, i)
            for i in range(start, start + cfg.batch)]


def sample_gibbs(cfg, start=0):
    """One batch of importance-weighted draws; trial i uses the stream (seed, i)."""
    out = _batch(cfg, start)
    if not any(s.in_ball for s in out):
        raise RuntimeError(
            f"no samples landed in the ball N={cfg.big_n} for M={cfg.mode_cut} "
            f"in a batch of {cfg.batch}")
    return out


def sample_in_ball(cfg, count, max_draws=None):
    """Draw batches until `count` in-ball samples are collected."""
    max_draws = max_draws or 1000 * count + 10 * cfg.batch
    kept, start = [], 0
    while len(kept) < count:
        if start >= max_draws:
            raise RuntimeError(f"only {len(kept)} of {count} in-ball samples "
                               f"after {start} draws")
        kept.extend(s for s in _batch(cfg, start) if s.in_ball)
        start += cfg.batch
    return kept[:count]


def normalized_weights(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - np.max(lw))
    return w / w.sum()


def effective_sample_size(log_weights):
    w = normalized_weights(log_weights)
    return float(1.0 / np.sum(w ** 2))


def exp_moment_closed_form(eps, mode_cut):
    n = np.arange(1, mode_cut + 1)
    return float((1 - 2 * eps) ** -0.5 * np.prod(1.0 / (1 - 2 * eps / n ** 2)))


ExpMoment = namedtuple("ExpMoment", "mc_estimate closed_form std_error")


def free_field_exp_moment(eps, mode_cut, draws=100_000, seed=0):
    """Monte Carlo of E exp(eps * Q(q)) next to the per-mode Gaussian product.

    Q is the coefficient form a0^2 + sum(a_n^2 + b_n^2).
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2); the constant mode diverges at 1/2")
    rng = _rng(seed)
    n = np.arange(1, mode_cut + 1)
    g0 = rng.standard_normal(draws)
    q = g0 ** 2
    # chunk the modes so memory stays bounded for large draws
    for lo in range(0, mode_cut, 64):
        nn = n[lo:lo + 64]
        g = rng.standard_normal((draws, 2, len(nn)))
        q = q + np.sum(g ** 2 / nn ** 2, axis=(1, 2))
    vals = np.exp(eps * q)
    se = float(np.std(vals, ddof=1) / np.sqrt(draws))
    return ExpMoment(float(np.mean(vals)), exp_moment_closed_form(eps, mode_cut), se)
