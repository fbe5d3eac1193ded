"""Paley-Wiener sampling: sinc Gram matrices, Carleman determinants, Riesz
certificates and biorthogonal reconstruction on finite windows.

Sequences are stored as arrays over the symmetric window -n..n, so entry
i corresponds to index i - n.
"""
from dataclasses import dataclass

import numpy as np

RIESZ_SLOPE = 2 * np.pi / np.sqrt(3)
PINV_CUTOFF = 1e-12


class SingularGramError(np.linalg.LinAlgError):
    pass


def sinc(x):
    """sin(pi x) / (pi x); accepts complex arguments."""
    return np.sinc(x)


def sinc_prime(x):
    x = np.asarray(x)
    small = np.abs(x) < 1e-6
    xs = np.where(small, 1.0, x)
    out = (np.cos(np.pi * xs) - np.sinc(xs)) / xs
    return np.where(small, -(np.pi ** 2) * x / 3, out)


def sinc_prime2(x):
    x = np.asarray(x)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    out = (-np.pi * np.sin(np.pi * xs) - 2 * sinc_prime(xs)) / xs
    return np.where(small, -(np.pi ** 2) / 3 + np.pi ** 4 * x ** 2 / 10, out)


@dataclass
class SamplingSequence:
    t: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t)
        if len(self.t) % 2 != 1:
            raise ValueError("window must have odd length (indices -n..n)")

    @property
    def n(self):
        return len(self.t) // 2

    @property
    def index(self):
        return np.arange(-self.n, self.n + 1)

    @property
    def deviation(self):
        return self.t - self.index

    @property
    def dev_l2(self):
        return float(np.linalg.norm(self.deviation))

    @property
    def separation(self):
        s = np.sort(self.t.real)
        return float(np.min(np.diff(s))) if len(s) > 1 else np.inf

    def window(self, n):
        if n > self.n:
            raise ValueError(f"window {n} exceeds available order {self.n}")
        return self.t[self.n - n:self.n + n + 1]

    @classmethod
    def integers(cls, n):
        return cls(np.arange(-n, n + 1, dtype=float))

    @classmethod
    def perturbed(cls, n, changes):
        """Integers -n..n with {index: new value} substitutions."""
        t = np.arange(-n, n + 1, dtype=float)
        for k, v in changes.items():
            t[k + n] = v
        return cls(t)


def _as_window(t, n=None):
    seq = t if isinstance(t, SamplingSequence) else SamplingSequence(t)
    return seq.window(seq.n if n is None else n)


@dataclass
class GramTruncation:
    n: int
    entries: np.ndarray
    det2: float
    eig_min: float
    eig_max: float
    riesz_margin: float


def gram_matrix(tw):
    return sinc(tw[:, None] - tw[None, :])


def gram(t, n=None):
    """Gram matrix [sinc(t_j - t_k)] on the window -n..n with its det2."""
    tw = _as_window(t, n)
    G = gram_matrix(tw).real
    ev = np.linalg.eigvalsh(G)
    sign, logdet = np.linalg.slogdet(G)
    # unit diagonal, so the Carleman factor exp(-trace(G - I)) is 1
    det2 = float(sign * np.exp(logdet)) if sign != 0 else 0.0
    dev = np.linalg.norm(tw - np.arange(-(len(tw) // 2), len(tw) // 2 + 1))
    return GramTruncation(len(tw) // 2, G, det2, float(ev[0]), float(ev[-1]),
                          float(1 - RIESZ_SLOPE * dev))


def carleman_det_via_sinc_matrix(t, n=None):
    """|det[sinc(t_j - k)]|^2 on the window -n..n."""
    tw = _as_window(t, n)
    k = np.arange(-(len(tw) // 2), len(tw) // 2 + 1)
    return float(abs(np.linalg.det(sinc(tw[:, None] - k[None, :]))) ** 2)


def det2_convergence(t, orders):
    """(n, carleman value at n, det2 at 2n, |difference|) for each n."""
    rows = []
    for n in orders:
        c = carleman_det_via_sinc_matrix(t, n)
        d = gram(t, 2 * n).det2
        rows.append((n, c, d, abs(c - d)))
    return rows


def riesz_certificate(t, n=None, tail_fraction=0.25, tail_ratio=0.2):
    """Margin 1 - (2 pi / sqrt 3) ||t - Z||, Gram eigenvalue bounds and a tail check.

    The deviation counts as non-l2 when the outer `tail_fraction` of the
    window carries at least `tail_ratio` of the squared deviation.
    """
    tw = _as_window(t, n)
    m = len(tw) // 2
    idx = np.arange(-m, m + 1)
    dev2 = np.abs(tw - idx) ** 2
    total = dev2.sum()
    outer = np.abs(idx) > (1 - tail_fraction) * m
    decaying = total == 0 or dev2[outer].sum() < tail_ratio * total
    margin = float(1 - RIESZ_SLOPE * np.sqrt(total))
    g = gram(tw)
    out = {"margin": margin, "certified": bool(decaying and margin > 0),
           "decaying": bool(decaying), "frame_bounds": (g.eig_min, g.eig_max),
           "dev_l2": float(np.sqrt(total))}
    if out["certified"]:
        out["analytic_bounds"] = (margin ** 2, (2 - margin) ** 2)
    return out


def _pinv_sym(G, what="Gram matrix"):
    ev, V = np.linalg.eigh(G)
    if ev[0] <= PINV_CUTOFF * max(1.0, ev[-1]):
        raise SingularGramError(f"{what} is singular: eig_min = {ev[0]:.3e}")
    return (V / ev) @ V.T


def biorthogonals(t, n=None):
    """Gamma^{-1}; row k holds the coefficients of g_k in the sinc(. - t_l) family."""
    tw = _as_window(t, n)
    return _pinv_sym(gram_matrix(tw).real)


def eval_expansion(coeffs, tw, x):
    """sum_l c_l sinc(x - t_l); coeffs may be (L,) or (K, L)."""
    x = np.asarray(x)
    S = sinc(x[..., None] - tw)
    return S @ np.asarray(coeffs).T


def eval_expansion_prime(coeffs, tw, x):
    x = np.asarray(x)
    return sinc_prime(x[..., None] - tw) @ np.asarray(coeffs).T


def reconstruct(samples, t, n, eval_grid):
    """Solve Gamma c = samples and evaluate sum c_j sinc(x - t_j)."""
    tw = _as_window(t, n)
    c = _pinv_sym(gram_matrix(tw).real) @ np.asarray(samples)
    return eval_expansion(c, tw, eval_grid)


def l2_norm_sq(coeffs, tw, n=None, spacing=0.125):
    """Quadrature of |f|^2 over [-(n+10), n+10] for f = sum c_l sinc(. - t_l)."""
    n = len(tw) // 2 if n is None else n
    L = n + 10
    x = np.arange(-L, L + spacing / 2, spacing)
    f = eval_expansion(coeffs, tw, x)
    return float(np.sum(np.abs(f) ** 2) * spacing)


def exponential_hs_distance_sq(t, s):
    """sum_j of the mean over [-pi, pi] of |e^{i t_j x} - e^{i s_j x}|^2."""
    d = np.asarray(t, float) - np.asarray(s, float)
    return float(np.sum(2 * (1 - np.sinc(d))))


def lipschitz_bound_sq(t, s):
    return float(RIESZ_SLOPE ** 2 * np.sum((np.asarray(t, float) - np.asarray(s, float)) ** 2))


class BandlimitedFunction:
    """g(x) = sum_k c_k sinc(x - k) over integer nodes k = -K..K (RPW(pi))."""

    def __init__(self, coeffs):
        c = np.asarray(coeffs, dtype=float)
        if len(c) % 2 != 1:
            raise ValueError("coefficients must cover a symmetric integer window")
        self.coeffs = c
        self.K = len(c) // 2
        self.nodes = np.arange(-self.K, self.K + 1, dtype=float)

    @classmethod
    def sinc(cls):
        return cls([1.0])

    @classmethod
    def random(cls, rng, K, norm=1.0):
        c = rng.standard_normal(2 * K + 1)
        return cls(norm * c / np.linalg.norm(c))

    @property
    def l2_norm(self):
        return float(np.linalg.norm(self.coeffs))

    def __call__(self, x):
        return eval_expansion(self.coeffs, self.nodes, x)

    def prime(self, x):
        return eval_expansion_prime(self.coeffs, self.nodes, x)

    def prime2(self, x):
        x = np.asarray(x)
        return sinc_prime2(x[..., None] - self.nodes) @ self.coeffs
