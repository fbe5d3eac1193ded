"""Periodic, antiperiodic and Dirichlet eigenvalues of Hill's equation.

Eigenvalues come from the discriminant: bracketing happens between the
zeros of Delta (one per stability band) and the critical points of Delta
(one per instability interval), so every root search has a guaranteed sign
change.  An independent Fourier-truncation oracle and the Dirichlet Green's
kernel are provided for cross-checks.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, eigvalsh
from scipy.optimize import brentq

from .floquet import Discriminant
from .potential import PotentialSpec

EPS = np.finfo(float).eps


class BracketError(RuntimeError):
    pass


@dataclass
class SpectralData:
    lambdas: np.ndarray
    mus: np.ndarray
    gaps: np.ndarray
    j_max: int
    tol: float
    merged: np.ndarray = None
    band_centers: np.ndarray = None
    critical_points: np.ndarray = None
    spec: PotentialSpec = None
    disc: Discriminant = field(default=None, repr=False)

    def gap(self, j):
        """(lambda_{2j-1}, lambda_{2j})"""
        return self.lambdas[2 * j - 1], self.lambdas[2 * j]

    def is_open(self, j):
        return self.gaps[j - 1] > 0 and not self.merged[j - 1]

    def to_dict(self):
        return {"lambdas": [float(v) for v in self.lambdas],
                "mus": [float(v) for v in self.mus],
                "gaps": [float(v) for v in self.gaps],
                "merged": [bool(v) for v in self.merged]}


def _root(f, a, b, tol, fprime=None):
    r = brentq(f, a, b, xtol=tol, rtol=4 * EPS, maxiter=200)
    if fprime is not None:
        d = fprime(r)
        if d != 0:
            step = f(r) / d
            if abs(step) < tol and a <= r - step <= b:
                r -= step
    return r


def _band_centers(disc, lo, hi, count, tol, step=1 / 32):
    """First `count` zeros of Delta on (lo, hi), scanning in sqrt(lambda - lo)."""
    s = np.arange(0.0, np.sqrt(hi - lo) + step, step)
    lam = lo + s ** 2
    dl = disc.delta(lam).real
    idx = np.nonzero(np.sign(dl[:-1]) * np.sign(dl[1:]) <= 0)[0]
    zs = []
    for i in idx:
        if dl[i] == 0:
            z = lam[i]
        else:
            z = _root(disc.d, lam[i], lam[i + 1], tol)
        if not zs or z > zs[-1] + tol:
            zs.append(z)
        if len(zs) == count:
            break
    return np.array(zs)


def compute_spectrum(spec, j_max, tol=1e-9, gap_floor=1e-11, disc=None):
    """Periodic spectrum lambda_0..lambda_{2J} and Dirichlet mu_1..mu_J."""
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    amp = spec.amplitude_bound()
    # Delta(lo) > 2 because lo lies below min q
    lo = spec.mean - amp - 1.0
    hi = ((j_max + 1) / 2 + 0.75) ** 2 + spec.mean + amp + 1.0
    for _ in range(6):
        if disc is None or not disc.covers(hi):
            disc = Discriminant(spec, hi)
        z = _band_centers(disc, lo, hi, j_max + 1, tol)
        if len(z) == j_max + 1:
            break
        hi *= 1.5
        disc = None
    else:
        raise BracketError(f"found only {len(z)} stability bands below {hi:.4g}")

    lambdas = np.empty(2 * j_max + 1)
    merged = np.zeros(j_max, dtype=bool)
    crit = np.empty(j_max)
    lambdas[0] = _root(lambda x: disc.d(x) - 2, lo, z[0], tol, disc.dp)
    for n in range(1, j_max + 1):
        a, b = z[n - 1], z[n]
        sig = 1.0 if n % 2 == 0 else -1.0
        if disc.dp(a) * disc.dp(b) > 0:
            raise BracketError(f"no critical point of Delta between band centres {n} and {n + 1}")
        c = _root(disc.dp, a, b, tol)
        crit[n - 1] = c
        excess = sig * disc.d(c) - 2.0
        if excess <= gap_floor:
            # tangency: closed or numerically unresolvable gap
            merged[n - 1] = True
            lambdas[2 * n - 1] = lambdas[2 * n] = c
            continue
        h = lambda x: disc.d(x) - 2 * sig
        lambdas[2 * n - 1] = _root(h, a, c, tol, disc.dp)
        lambdas[2 * n] = _root(h, c, b, tol, disc.dp)

    mus = np.empty(j_max)
    for n in range(1, j_max + 1):
        mus[n - 1] = _dirichlet_root(disc, n, lambdas, merged, z, tol)

    gaps = lambdas[2::2] - lambdas[1::2]
    return SpectralData(lambdas, mus, gaps, j_max, tol, merged, z, crit, spec, disc)


def _dirichlet_root(disc, n, lambdas, merged, z, tol):
    l1, l2 = lambdas[2 * n - 1], lambdas[2 * n]
    if merged[n - 1]:
        return l2
    g1, g2 = disc.g(l1), disc.g(l2)
    if g1 == 0:
        return l1
    if g2 == 0:
        return l2
    if g1 * g2 < 0:
        return _root(disc.g, l1, l2, tol)
    # mu sits on an edge to within rounding; fall back to the band-centre bracket
    a, b = z[n - 1], z[n]
    if disc.g(a) * disc.g(b) > 0:
        raise BracketError(f"no sign change of g(2pi) around gap {n} (d={l2 - l1:.3e})")
    return float(np.clip(_root(disc.g, a, b, tol), l1, l2))


def periodic_spectrum(spec, j_max, tol=1e-9):
    return compute_spectrum(spec, j_max, tol).lambdas


def dirichlet_spectrum(spec, j_max, tol=1e-9):
    return compute_spectrum(spec, j_max, tol).mus


# ------------------------------------------------------------- matrix oracle

def _qhat(spec, k):
    k = np.asarray(k)
    out = np.zeros(k.shape, dtype=complex)
    ak = np.abs(k)
    inside = (ak >= 1) & (ak <= spec.M)
    idx = ak[inside] - 1
    out[inside] = 0.5 * (spec.a[idx] - 1j * np.sign(k[inside]) * spec.b[idx])
    out[k == 0] = 0.5 * spec.a0
    return out


def _half_cos_integral(spec, m):
    """Integral of q(x) cos(m x / 2) over [0, 2 pi] for integer m."""
    m = np.asarray(m)
    out = np.zeros(m.shape)
    even = m % 2 == 0
    p = np.abs(m[even]) // 2
    vals = np.zeros(p.shape)
    vals[p == 0] = np.pi * spec.a0
    ok = (p >= 1) & (p <= spec.M)
    vals[ok] = np.pi * spec.a[p[ok] - 1]
    out[even] = vals
    if np.any(~even):
        n = np.arange(1, spec.M + 1)
        half = m[~even][:, None] / 2.0
        out[~even] = (spec.b * 2 * n / (n ** 2 - half ** 2)).sum(axis=1)
    return out


def fourier_matrix(spec, mode_cut, bc):
    if bc in ("periodic", "antiperiodic"):
        n = np.arange(-mode_cut, mode_cut + 1)
        shift = 0.0 if bc == "periodic" else 0.5
        H = _qhat(spec, n[:, None] - n[None, :])
        H[np.diag_indices_from(H)] += (n + shift) ** 2
        return H
    if bc == "dirichlet":
        j = np.arange(1, mode_cut + 1)
        H = (_half_cos_integral(spec, j[:, None] - j[None, :])
             - _half_cos_integral(spec, j[:, None] + j[None, :])) / (2 * np.pi)
        H[np.diag_indices_from(H)] += j ** 2 / 4.0
        return H
    raise ValueError(f"unknown boundary condition {bc!r}")


def fourier_matrix_oracle(spec, mode_cut, bc, count):
    """Lowest `count` eigenvalues of the truncated matrix of -d^2/dx^2 + q."""
    H = fourier_matrix(spec, mode_cut, bc)
    if count > H.shape[0]:
        raise ValueError("count exceeds matrix dimension")
    return eigvalsh(H, subset_by_index=(0, count - 1))


def oracle_periodic_union(spec, count, mode_cut=64):
    per = fourier_matrix_oracle(spec, mode_cut, "periodic", count)
    anti = fourier_matrix_oracle(spec, mode_cut, "antiperiodic", count)
    return np.sort(np.concatenate([per, anti]))[:count]


# ------------------------------------------------------------ Green's kernel

def greens_kernel(zeta, x, y):
    """Dirichlet Green's function of zeta - d^2/dx^2 on [0, 2 pi]."""
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    k = np.sqrt(zeta)
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    # sinh(k lo) sinh(k(2pi-hi)) / (k sinh(2 pi k)) without overflow
    num = -np.expm1(-2 * k * lo) * -np.expm1(-2 * k * (2 * np.pi - hi))
    val = num * np.exp(k * (lo - hi)) / (2 * k * -np.expm1(-4 * np.pi * k))
    return val if val.ndim else float(val)


def nystrom_eigenvalues(zeta, nodes=512, count=None):
    """Eigenvalues of the trapezoid discretisation of the Green's operator, descending."""
    h = 2 * np.pi / nodes
    x = h * np.arange(1, nodes)
    K = h * greens_kernel(zeta, x[:, None], x[None, :])
    ev = eigh(K, eigvals_only=True)[::-1]
    return ev[:count] if count else ev


# ------------------------------------------------------------ contour formula

def midpoint_contour(spec, j, radius=None, points=128, center=None, spectral=None,
                     return_complex=False):
    """(1/2 pi i) times the contour integral of lambda Delta Delta' / (Delta^2 - 4).

    The circle defaults to centre j^2/4 + a0/2 and radius (2j - 1)/8, and
    must enclose exactly lambda_{2j-1} and lambda_{2j}.
    """
    if center is None:
        center = j * j / 4.0 + spec.mean
    if radius is None:
        radius = (2 * j - 1) / 8.0
    if spectral is None:
        spectral = compute_spectrum(spec, j + 1)
    inside = np.abs(spectral.lambdas - center) < radius
    want = np.zeros_like(inside)
    want[[2 * j - 1, 2 * j]] = True
    if not np.array_equal(inside, want):
        bad = np.nonzero(inside != want)[0][0]
        raise BracketError(
            f"circle C({center:.6g}, {radius:.6g}) does not isolate gap {j}: "
            f"lambda_{bad} = {spectral.lambdas[bad]:.10g} is "
            f"{'inside' if inside[bad] else 'outside'}")
    if spectral.lambdas[-1] < center + radius:
        raise BracketError("spectrum does not extend past the circle")
    th = 2 * np.pi * np.arange(points) / points
    w = radius * np.exp(1j * th)
    lam = center + w
    disc = Discriminant(spec, center + radius * 1j)
    y = disc.endpoints(lam, True)
    D = y[:, 0] + y[:, 3]
    Dp = y[:, 4] + y[:, 7]
    denom = D * D - 4
    if np.min(np.abs(denom)) < 1e-8:
        raise BracketError("a zero of Delta^2 - 4 lies on the contour")
    # d lambda = i w d theta, so (1/2 pi i) * integral = mean over theta of (...) * w
    val = np.mean(lam * D * Dp / denom * w)
    return val if return_complex else float(val.real)


# ------------------------------------------------------------ derived sequences

def gap_lengths(lambdas):
    lam = np.asarray(lambdas)
    return lam[2::2] - lam[1::2]


def _symmetric(pos):
    pos = np.asarray(pos)
    return np.concatenate([-pos[::-1], np.zeros(1, dtype=pos.dtype), pos])


def sampling_t(lambdas, stride=2):
    """t_n = sqrt(lambda_{stride n} - lambda_0), odd-extended to indices -m..m."""
    if stride not in (2, 4):
        raise ValueError("stride must be 2 or 4")
    lam = np.asarray(lambdas, dtype=float)
    m = (len(lam) - 1) // stride
    idx = stride * np.arange(1, m + 1)
    return _symmetric(np.sqrt(np.maximum(lam[idx] - lam[0], 0.0)))


def _csqrt(v):
    v = np.asarray(v, dtype=float)
    if np.all(v >= 0):
        return np.sqrt(v)
    return np.sqrt(v.astype(complex))


def tau_sequence(lambdas):
    """tau_j = sqrt(2(lambda_{2j} + lambda_{2j-1})), odd-extended; complex if any radicand < 0."""
    lam = np.asarray(lambdas, dtype=float)
    return _symmetric(_csqrt(2 * (lam[2::2] + lam[1::2])))


def xi_sequence(mus):
    """xi_j = 2 sqrt(mu_j) - j for j = 1..J."""
    mus = np.asarray(mus, dtype=float)
    return 2 * _csqrt(mus) - np.arange(1, len(mus) + 1)


def cube_radii(c1, big_n, count):
    """d_j / 2 with d_j = C1 N (N + 1) / j."""
    return 0.5 * c1 * big_n * (big_n + 1) / np.arange(1, count + 1)


def fit_cube_constant(xis, big_n, quantile=1.0):
    """Smallest C1 (or its quantile across samples) with |xi_j| <= d_j / 2."""
    xis = np.atleast_2d(np.abs(np.asarray(xis)))
    j = np.arange(1, xis.shape[1] + 1)
    need = np.max(2 * xis * j / (big_n * (big_n + 1)), axis=1)
    return float(np.quantile(need, quantile))


def in_hilbert_cube(xi, c1, big_n):
    xi = np.abs(np.asarray(xi))
    return bool(np.all(xi <= cube_radii(c1, big_n, len(xi)) * (1 + 1e-12)))
