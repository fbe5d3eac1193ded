"""Integrals over instability intervals and the divisor coordinates built on them.

Inside gap j write x = m + r cos(theta) with m, r the midpoint and
half-width.  Then dx / sqrt(Delta^2 - 4) = rho(theta) dtheta with rho
smooth and even about theta = pi, so theta running over [0, 2 pi) walks the
real cycle of the gap: [0, pi] on the sheet eps = +1 (x from lambda_{2j}
down to lambda_{2j-1}) and [pi, 2 pi] back up on eps = -1.  The normalised
coordinate u = C(theta) / I, with C the cumulative integral of rho and I the
full-gap integral, runs over [0, 2) around the cycle.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct
from scipy.optimize import brentq

from . import pwspace
from .potential import translate
from .spectra import BracketError, compute_spectrum, _root

NODES0 = 64
NODES_MAX = 2048
QUAD_TOL = 1e-9


class DegenerateGapError(ValueError):
    pass


def spectrum_for_divisor(spec, j_max):
    """Spectrum with edges refined to rounding level, as the quadratures need."""
    return compute_spectrum(spec, j_max, tol=1e-14)


def _gap_frame(spectral, j):
    if not 1 <= j <= spectral.j_max:
        raise IndexError(f"gap {j} outside 1..{spectral.j_max}")
    l1, l2 = spectral.gap(j)
    return 0.5 * (l1 + l2), 0.5 * (l2 - l1), (1.0 if j % 2 == 0 else -1.0)


class _LocalGap:
    """Chebyshev model p of Delta around an open gap, with p - 2 sig divided
    by (x - e1)(x - e2) at its own edge roots e1 < e2.

    In a narrow gap Delta' at the edges is of order the gap width, so
    rounding noise in Delta moves the computed edges and the square-root
    singularity no longer sits where the angle substitution puts it.  With
    Delta^2 - 4 = (x - e1)(x - e2) h(x) (p + 2 sig) the angle integrand
    becomes 1 / sqrt(-h (p + 2 sig)), smooth by construction.
    """

    def __init__(self, spectral, j, deg=16, max_deg=256):
        Cheb = np.polynomial.Chebyshev
        m, r, sig = _gap_frame(spectral, j)
        dom = [m - 1.5 * r, m + 1.5 * r]
        while True:
            p = Cheb.interpolate(lambda x: spectral.disc.delta(x).real, deg, domain=dom)
            tail = np.max(np.abs(p.coef[-3:]))
            if tail <= 1e-14 * np.max(np.abs(p.coef)) or deg >= max_deg:
                break
            deg *= 2
        shifted = p - 2 * sig
        l1, l2 = spectral.gap(j)
        self.e1 = _edge_root(shifted, l1, m, r)
        self.e2 = _edge_root(shifted, l2, m, r)
        quot, _ = divmod(shifted, Cheb.fromroots([self.e1, self.e2], domain=dom))
        self.p, self.dp, self.h, self.sig = p, p.deriv(), quot, sig
        self.m, self.r = 0.5 * (self.e1 + self.e2), 0.5 * (self.e2 - self.e1)

    def H(self, x):
        """(Delta^2 - 4) / ((x - e1)(e2 - x)), positive on the gap."""
        return -self.h(x) * (self.p(x) + 2 * self.sig)


def _edge_root(f, guess, m, r):
    lo, hi = (m - 1.5 * r, m) if guess < m else (m, m + 1.5 * r)
    # the edge is a simple root; bracket it tightly around the shooting value
    w = 1e-6 * r
    a, b = max(lo, guess - w), min(hi, guess + w)
    while f(a) * f(b) > 0 and (a > lo or b < hi):
        w *= 10
        a, b = max(lo, guess - w), min(hi, guess + w)
    return brentq(f, a, b, xtol=1e-300)


def _local(spectral, j):
    cache = spectral.__dict__.setdefault("_local_gaps", {})
    if j not in cache:
        cache[j] = _LocalGap(spectral, j)
    return cache[j]


def _quad_frame(spectral, j):
    g = _local(spectral, j)
    return g.m, g.r, g.sig


def _weight_values(weight, x, local):
    if weight == "one":
        return np.ones_like(x)
    if weight == "delta_prime":
        return local.dp(x)
    if isinstance(weight, tuple) and weight[0] == "poly":
        return x ** weight[1]
    if callable(weight):
        return weight(x)
    raise ValueError(f"unknown weight {weight!r}")


def _integrand(spectral, j, theta, weight, kind):
    g = _local(spectral, j)
    x = g.m + g.r * np.cos(theta)
    H = g.H(x)
    if kind == "sqrt":
        base = (g.r * np.sin(theta)) ** 2 * np.sqrt(H)
    else:
        base = 1.0 / np.sqrt(H)
    return _weight_values(weight, x, g) * base


def _theta_of(spectral, j, x):
    # a limit sitting on a shooting edge is the model edge: the two differ by
    # rounding, but a miss of d costs ~sqrt(d) in the integral
    m, r, _ = _quad_frame(spectral, j)
    lo, hi = spectral.gap(j)
    snap = 1e-12 * max(1.0, abs(x))
    if abs(x - hi) <= snap:
        return 0.0
    if abs(x - lo) <= snap:
        return float(np.pi)
    return float(np.arccos(np.clip((x - m) / r, -1.0, 1.0)))


@dataclass
class QuadResult:
    value: float
    nodes: int
    degenerate: bool = False
    converged: bool = True


def gap_quadrature(spectral, j, weight="one", a=None, b=None, kind="inv",
                   nodes=NODES0, tol=QUAD_TOL, max_nodes=NODES_MAX):
    """Integral of w(x) / sqrt(Delta^2 - 4) (kind 'inv') or w(x) sqrt(Delta^2 - 4)
    (kind 'sqrt') over [a, b] inside gap j, with node doubling."""
    if not spectral.is_open(j):
        return QuadResult(0.0, 0, degenerate=True)
    l1, l2 = spectral.gap(j)
    a = l1 if a is None else a
    b = l2 if b is None else b
    if b < a:
        raise ValueError("integration limits must satisfy a <= b")
    slack = 1e-12 * max(1.0, abs(l2))
    if a < l1 - slack or b > l2 + slack:
        raise ValueError(f"[{a}, {b}] leaves gap {j} = [{l1}, {l2}]")
    full = a <= l1 and b >= l2
    th_lo, th_hi = (0.0, np.pi) if full else (_theta_of(spectral, j, b), _theta_of(spectral, j, a))
    if th_hi <= th_lo:
        return QuadResult(0.0, 0)

    def rule(n):
        if full:
            th = np.pi * (np.arange(n) + 0.5) / n
            return np.pi / n * np.sum(_integrand(spectral, j, th, weight, kind))
        z, w = np.polynomial.legendre.leggauss(n)
        half = 0.5 * (th_hi - th_lo)
        th = th_lo + half * (z + 1)
        return half * np.sum(w * _integrand(spectral, j, th, weight, kind))

    prev = rule(nodes)
    while nodes < max_nodes:
        nodes *= 2
        cur = rule(nodes)
        if abs(cur - prev) < tol:
            return QuadResult(float(cur), nodes)
        prev = cur
    return QuadResult(float(prev), nodes, converged=False)


def gap_integral(spectral, j, weight="one", a=None, b=None):
    """Integral of w(x) dx / sqrt(Delta(x)^2 - 4) over [a, b] within gap j.

    Closed gaps give 0 (see gap_quadrature for the degenerate flag).
    """
    return gap_quadrature(spectral, j, weight, a, b).value


def arccosh_antiderivative(spectral, j, mu):
    """Closed form of the Delta' integral from mu to lambda_{2j}."""
    _, _, sig = _gap_frame(spectral, j)
    D = spectral.disc.d(mu)
    return -sig * float(np.arccosh(max(abs(D) / 2, 1.0)))


# ---------------------------------------------------------------- divisors

@dataclass
class Divisor:
    entries: list
    spectral: object = field(repr=False)

    def __post_init__(self):
        seen = set()
        clean = []
        for j, mu, eps in self.entries:
            if j in seen:
                raise ValueError(f"two entries for gap {j}")
            if eps not in (-1, 1):
                raise ValueError("eps must be +1 or -1")
            l1, l2 = self.spectral.gap(j)
            slack = 1e-10 * max(1.0, abs(l2))
            if not l1 - slack <= mu <= l2 + slack:
                raise ValueError(f"mu={mu} outside gap {j} = [{l1}, {l2}]")
            seen.add(j)
            clean.append((int(j), float(min(max(mu, l1), l2)), int(eps)))
        self.entries = clean

    def __add__(self, other):
        if other.spectral is not self.spectral:
            raise ValueError("divisors over different spectra")
        return Divisor(self.entries + other.entries, self.spectral)

    @classmethod
    def tied(cls, spectral, sheets=None):
        """Divisor of the Dirichlet spectrum, all on the +1 sheet unless given."""
        J = spectral.j_max
        sheets = sheets if sheets is not None else [1] * J
        return cls([(j, spectral.mus[j - 1], sheets[j - 1]) for j in range(1, J + 1)], spectral)


def omega_infinity(divisor):
    sd = divisor.spectral
    total = 0.0
    for j, mu, eps in divisor.entries:
        total += eps * gap_integral(sd, j, "delta_prime", mu, sd.gap(j)[1])
    return total


def action_integral(divisor):
    """S = sum_j 2 * integral from mu_j to lambda_{2j} of sqrt(Delta^2 - 4)."""
    sd = divisor.spectral
    total = 0.0
    for j, mu, _ in divisor.entries:
        total += 2 * gap_quadrature(sd, j, "one", mu, sd.gap(j)[1], kind="sqrt").value
    return total


# ----------------------------------------------------------- phase function

def _band_map(lo, hi, soft_lo, soft_hi):
    """x(phi), |dx/dphi| and phi(x) on band [lo, hi]; a cosine map at the ends
    where 4 - Delta^2 has a simple root, linear at merged (double) ends."""
    L = hi - lo
    if soft_lo and soft_hi:
        m, r = 0.5 * (lo + hi), 0.5 * L
        return (lambda p: m - r * np.cos(p), lambda p: r * np.sin(p),
                lambda x: np.arccos(np.clip((m - x) / r, -1, 1)))
    if soft_lo:
        return (lambda p: lo + L * (1 - np.cos(p)), lambda p: L * np.sin(p),
                lambda x: np.arccos(np.clip(1 - (x - lo) / L, 0, 1)))
    if soft_hi:
        return (lambda p: hi - L * (1 - np.cos(p)), lambda p: L * np.sin(p),
                lambda x: np.arccos(np.clip(1 - (hi - x) / L, 0, 1)))
    return (lambda p: lo + L * p, lambda p: np.full_like(p, L),
            lambda x: np.clip((x - lo) / L, 0, 1))


def _band_integral(spectral, lo, hi, a, b, soft_lo=True, soft_hi=True, nodes=NODES0, tol=1e-10):
    """Integral of |Delta'| / sqrt(4 - Delta^2) over [a, b] inside band [lo, hi]."""
    if b <= a:
        return 0.0
    xmap, jac, inv = _band_map(lo, hi, soft_lo, soft_hi)
    p0, p1 = sorted((float(inv(a)), float(inv(b))))

    def f(p):
        y = spectral.disc.endpoints(xmap(p), True)
        Dp = y[:, 4] + y[:, 7]
        # 4 - Delta^2 = -(f - g')^2 - 4 f' g by the Wronskian; no cancellation
        # near a merged gap, where the monodromy is close to -I or I
        four_minus = -(y[:, 0] - y[:, 3]) ** 2 - 4 * y[:, 1] * y[:, 2]
        return np.abs(Dp) * jac(p) / np.sqrt(np.abs(four_minus))

    def rule(n):
        z, w = np.polynomial.legendre.leggauss(n)
        half = 0.5 * (p1 - p0)
        return half * np.sum(w * f(p0 + half * (z + 1)))

    prev = rule(nodes)
    while nodes < NODES_MAX:
        nodes *= 2
        cur = rule(nodes)
        if abs(cur - prev) < tol:
            return float(cur)
        prev = cur
    return float(prev)


def phase_function(spectral, x, lambda_cap=None):
    """sign(x) times the integral of |Delta'| / sqrt(4 - Delta^2) over the
    stability set intersected with [0, x^2] (the phase relative to x = 0)."""
    top = x * x
    cap = spectral.lambdas[-1] if lambda_cap is None else min(lambda_cap, spectral.lambdas[-1])
    if top > cap:
        raise ValueError(f"x^2 = {top:.6g} exceeds the computed spectrum cap {cap:.6g}")
    lam = spectral.lambdas
    total = 0.0
    for k in range(spectral.j_max):
        lo, hi = lam[2 * k], lam[2 * k + 1]
        a, b = max(lo, 0.0), min(hi, top)
        if b > a:
            # band k runs from gap k to gap k + 1; lambda_0 is always a simple edge
            soft_lo = k == 0 or not spectral.merged[k - 1]
            soft_hi = not spectral.merged[k]
            total += _band_integral(spectral, lo, hi, a, b, soft_lo, soft_hi)
    return float(np.sign(x) * total)


# ----------------------------------------------------------- eta coordinates

class GapModel:
    """rho(theta) on gap j as a cosine series, giving the cumulative integral
    C(theta) = c0 theta + sum c_k sin(k theta) / k in closed form."""

    def __init__(self, spectral, j, nodes=NODES0, tol=1e-12, max_nodes=NODES_MAX):
        if not spectral.is_open(j):
            raise DegenerateGapError(f"gap {j} is closed; no coordinate")
        self.spectral, self.j = spectral, j
        self.m, self.r, self.sigma = _quad_frame(spectral, j)
        c = self._coeffs(nodes)
        while nodes < max_nodes:
            c2 = self._coeffs(2 * nodes)
            nodes *= 2
            if abs(c2[0] - c[0]) <= tol * abs(c2[0]):
                c = c2
                break
            c = c2
        self.nodes = nodes
        self.c = c
        self.k = np.arange(1, len(c))
        self.total = np.pi * c[0]

    def _coeffs(self, n):
        th = np.pi * (np.arange(n) + 0.5) / n
        rho = _integrand(self.spectral, self.j, th, "one", "inv")
        X = dct(rho, type=2)
        c = X / n
        c[0] /= 2
        return c

    def rho(self, theta):
        theta = np.asarray(theta, float)
        return self.c[0] + np.cos(np.multiply.outer(theta, self.k)) @ self.c[1:]

    def cumulative(self, theta):
        theta = np.asarray(theta, float)
        return self.c[0] * theta + np.sin(np.multiply.outer(theta, self.k)) @ (self.c[1:] / self.k)

    def u_of_theta(self, theta):
        return self.cumulative(theta) / self.total

    def theta_of_u(self, u):
        """Inverse of u(theta) on one turn, u in [0, 2]; bisection-type solve."""
        if not -1e-14 <= u <= 2 + 1e-14:
            raise ValueError("u must lie in [0, 2]")
        if u <= 0:
            return 0.0
        if u >= 2:
            return 2 * np.pi
        if u == 1:
            return np.pi
        lo, hi = (0.0, np.pi) if u < 1 else (np.pi, 2 * np.pi)
        return brentq(lambda t: float(self.u_of_theta(t)) - u, lo, hi, xtol=1e-15)

    def eta(self, theta):
        return self.m + self.r * np.cos(theta)

    def point(self, u):
        """(eta, eps) for cycle coordinate u, reduced mod 2."""
        w = u % 2.0
        th = self.theta_of_u(w)
        return float(self.eta(th)), (1 if w <= 1 else -1)

    def cycle_integral(self, F, theta, nodes=NODES0):
        """(1/I) times the integral of F(eta) rho over [0, theta]; theta may be any real."""
        turns, rest = divmod(theta, 2 * np.pi)
        z, w = np.polynomial.legendre.leggauss(nodes)
        out = 0.0
        if turns:
            # one full turn; the integrand is even about pi so integrate [0, pi] twice
            th = 0.5 * np.pi * (z + 1)
            out += turns * 2 * (0.5 * np.pi) * np.sum(w[:, None] * F(self.eta(th)) * self.rho(th)[:, None], axis=0)
        if rest > 0:
            th = 0.5 * rest * (z + 1)
            out = out + 0.5 * rest * np.sum(w[:, None] * F(self.eta(th)) * self.rho(th)[:, None], axis=0)
        return out / self.total


def eta_coordinate(spectral, j, u, model=None):
    """eta in gap j with the normalised integral from eta to lambda_{2j} equal to u."""
    if not 0 <= u <= 1:
        raise ValueError("u must lie in [0, 1]")
    model = model or GapModel(spectral, j)
    if u == 0:
        return spectral.gap(j)[1]
    if u == 1:
        return spectral.gap(j)[0]
    return float(model.eta(model.theta_of_u(u)))


# ------------------------------------------------------------- Jacobian map

def divisor_sampling_points(spectral, n, scale=2.0):
    """t_{+-j} = +-scale*sqrt(lambda_{2j}), j = 1..n, in the order -n..-1, 1..n.

    scale=2 gives unit density (t_j ~ j); scale=1 samples at sqrt(lambda_{2j})
    itself, which has density two and is never Riesz-certified.
    """
    if n > spectral.j_max:
        raise ValueError(f"window {n} needs lambda_{2 * n}; spectrum stops at j={spectral.j_max}")
    lam2 = spectral.lambdas[2:2 * n + 1:2]
    if np.any(lam2 <= 0):
        raise ValueError("sampling points need lambda_{2j} > 0")
    pos = scale * np.sqrt(lam2)
    return np.concatenate([-pos[::-1], pos])


@dataclass
class JacobianSystem:
    """Truncated system X_k(sigma) = sum_j Phi_jk(u_j) - target_k.

    Rows k run over the window indices -n..-1, 1..n (t_0 = 0 has no gap and
    is left out); the unknowns s_j, j = 1..J, shift the cycle coordinates
    u_j = u0_j + s_j.  The solved rows are k = 1..J; by the symmetry
    t_{-k} = -t_k, rows -k repeat them.
    """
    spectral: object
    J: int
    n: int
    t: np.ndarray
    coeffs: np.ndarray
    models: list
    u0: np.ndarray
    target: np.ndarray
    index: np.ndarray
    scale: float = 2.0
    quad_nodes: int = NODES0

    def F(self, x):
        """g_k(c sqrt x) + g_k(-c sqrt x), c = scale, for every row; shape (len(x), 2n)."""
        sx = self.scale * np.sqrt(np.asarray(x, dtype=complex))
        vals = pwspace.eval_expansion(self.coeffs, self.t, sx) + \
            pwspace.eval_expansion(self.coeffs, self.t, -sx)
        return vals.real

    @property
    def solved(self):
        return np.nonzero(self.index > 0)[0][: self.J]

    def theta(self, sigma):
        u = self.u0 + np.asarray(sigma, float)
        return np.array([2 * np.pi * (w // 2) + mdl.theta_of_u(w % 2)
                         for w, mdl in zip(u, self.models)])

    def coordinates(self, sigma):
        """Phi_k = sum_j normalised cycle integrals of F_k; one value per row."""
        th = self.theta(sigma)
        total = np.zeros(len(self.index))
        for mdl, t in zip(self.models, th):
            total += mdl.cycle_integral(self.F, t, self.quad_nodes)
        return total

    def X(self, sigma):
        return self.coordinates(sigma) - self.target

    def derivative(self, sigma):
        """dX_k / ds_j = F_k(eta_j(u_j)); rows = all window indices."""
        th = self.theta(sigma)
        etas = np.array([mdl.eta(t) for mdl, t in zip(self.models, th)])
        return self.F(etas).T

    def points(self, sigma):
        u = self.u0 + np.asarray(sigma, float)
        return [mdl.point(w) for w, mdl in zip(u, self.models)]


def _det2(A):
    A = np.asarray(A, float)
    return float(np.linalg.det(A) * np.exp(-np.trace(A - np.eye(len(A)))))


def build_system(spectral, J, n=None, u0=1.0, target=1.0, scale=2.0, quad_nodes=NODES0):
    """Set up the J-gap system on the window of 2n sampling points.

    The window, completed by the integers outside it, differs from Z by a
    finite (hence l2) perturbation, so a positive Kadec-type margin
    certifies a Riesz basis and the biorthogonals are trustworthy.
    """
    n = J if n is None else n
    if n < J:
        raise ValueError("window n must be >= J")
    for j in range(1, J + 1):
        if not spectral.is_open(j):
            raise DegenerateGapError(f"gap {j} is closed")
    t = divisor_sampling_points(spectral, n, scale)
    tw = np.concatenate([t[:n], [0.0], t[n:]])
    cert = pwspace.riesz_certificate(tw)
    if cert["margin"] <= 0:
        raise pwspace.SingularGramError(
            f"sampling window is not Riesz-certified (margin {cert['margin']:.3g})")
    coeffs = pwspace._pinv_sym(pwspace.gram_matrix(t))
    index = np.concatenate([np.arange(-n, 0), np.arange(1, n + 1)])
    models = [GapModel(spectral, j) for j in range(1, J + 1)]
    u0 = np.broadcast_to(np.asarray(u0, float), (J,)).copy()
    target = np.broadcast_to(np.asarray(target, float), (2 * n,)).copy()
    return JacobianSystem(spectral, J, n, t, coeffs, models, u0, target, index, scale, quad_nodes)


def jacobian_map(spectral, sigma, J=None, n=None, u0=1.0, target=1.0, scale=2.0, system=None):
    """X(sigma), X'(0) on the solved rows, det2 X'(0) and the data for the bound
    |X'(0) - I|_HS <= 2 c M1 L0 (c = scale)."""
    sys_ = system or build_system(spectral, J or len(sigma), n, u0, target, scale)
    sigma = np.asarray(sigma, float)
    X = sys_.X(sigma)
    D0 = sys_.derivative(np.zeros(sys_.J))
    A = D0[sys_.solved]
    eta0 = np.array([mdl.eta(t) for mdl, t in zip(sys_.models, sys_.theta(np.zeros(sys_.J)))])
    lam2 = spectral.lambdas[2:2 * sys_.J + 1:2]
    # (lambda - eta)/(sqrt lambda + sqrt eta) = sqrt(lambda) - sqrt(eta)
    L0 = float(np.sqrt(np.sum((np.sqrt(lam2 + 0j) - np.sqrt(eta0 + 0j)).real ** 2)))
    M1 = _m1(sys_, eta0, lam2)
    hs = float(np.linalg.norm(D0 - _reference_derivative(sys_)))
    return {"X": X, "Xprime0": A, "Xprime0_rows": D0, "det2_Xprime0": _det2(A),
            "L0": L0, "M1": M1, "hs_distance": hs, "hs_bound": 2 * sys_.scale * M1 * L0,
            "system": sys_}


def _reference_derivative(sys_):
    """[delta_{j, +-k}]: the derivative when every eta_j sits at lambda_{2j}."""
    lam2 = sys_.spectral.lambdas[2:2 * sys_.J + 1:2]
    return sys_.F(lam2).T


def _m1(sys_, eta0, lam2, samples=64):
    """sqrt of sup_x sum_k |g_k'(x)|^2 over the segments between the scaled
    +-sqrt(eta0_j) and +-sqrt(lambda_{2j})."""
    best = 0.0
    c = sys_.scale
    for e, l in zip(c * np.sqrt(np.maximum(eta0, 0)), c * np.sqrt(lam2)):
        x = np.linspace(min(e, l), max(e, l), samples)
        x = np.concatenate([x, -x])
        gp = pwspace.eval_expansion_prime(sys_.coeffs, sys_.t, x)
        best = max(best, float(np.max(np.sum(gp ** 2, axis=1))))
    return float(np.sqrt(best))


@dataclass
class DivisorSolveState:
    sigma: np.ndarray
    X: np.ndarray
    Xprime0: np.ndarray
    det2_Xprime0: float
    L0: float
    iterations: int
    residual_inf: float
    history: list
    converged: bool
    system: JacobianSystem = field(repr=False, default=None)

    def divisor(self):
        pts = self.system.points(self.sigma)
        return Divisor([(j + 1, e, s) for j, (e, s) in enumerate(pts)], self.system.spectral)


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def newton_divisor_solve(spectral, J, n=None, target=1.0, max_iter=20, tol=1e-8,
                         u0=1.0, scale=2.0, system=None):
    """Modified Newton iteration sigma <- sigma - X'(0)^{-1} X(sigma) on the solved rows.

    When gaps 1..J are all closed every integral vanishes and X = -target;
    a zero target is then solved by sigma = 0 with no iteration.
    """
    if system is None and not any(spectral.is_open(j) for j in range(1, J + 1)):
        resid = float(np.max(np.abs(np.broadcast_to(target, (J,)))))
        if resid >= tol:
            raise DegenerateGapError("all gaps closed: X = -target cannot vanish")
        return DivisorSolveState(np.zeros(J), -np.broadcast_to(np.asarray(target, float), (J,)),
                                 np.eye(J), 1.0, 0.0, 0, resid, [resid], True, None)
    sys_ = system or build_system(spectral, J, n, u0, target, scale)
    info = jacobian_map(spectral, np.zeros(sys_.J), system=sys_)
    A = info["Xprime0"]
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(f"X'(0) is not invertible (condition {cond:.3e})")
    sigma = np.zeros(sys_.J)
    X = info["X"]
    rows = sys_.solved
    history = [float(np.max(np.abs(X[rows])))]
    it = 0
    while history[-1] >= tol and it < max_iter:
        sigma = sigma - np.linalg.solve(A, X[rows])
        it += 1
        if np.max(np.abs(sigma)) > 1:
            raise DivergenceError(f"|sigma|_inf = {np.max(np.abs(sigma)):.3g} > 1 at "
                                  f"iteration {it}", history)
        X = sys_.X(sigma)
        history.append(float(np.max(np.abs(X[rows]))))
    return DivisorSolveState(sigma, X, A, info["det2_Xprime0"], info["L0"], it,
                             history[-1], history, history[-1] < tol, sys_)


def contraction_check(system, radius=1.0, samples=20, seed=0):
    """max over sampled s of |X(s) - X(0) - X'(0) s|_inf / |s|_inf on the solved rows."""
    rng = np.random.default_rng(seed)
    rows = system.solved
    X0 = system.X(np.zeros(system.J))[rows]
    A = system.derivative(np.zeros(system.J))[rows]
    worst = 0.0
    for _ in range(samples):
        s = rng.uniform(-radius, radius, system.J)
        r = system.X(s)[rows] - X0 - A @ s
        worst = max(worst, float(np.max(np.abs(r)) / np.max(np.abs(s))))
    return worst


def identity_check(state, points=None):
    """Both sides of sum_l g_k(t_l) = sum_j (1/I_j) * cycle integral of F_k, per window row.

    The right side is recomputed with QUADPACK's algebraic-weight rule in
    the x variable, independent of the angle quadrature used by the solver.
    """
    from scipy.integrate import quad

    sys_ = state.system
    sd = sys_.spectral
    lhs = pwspace.eval_expansion(sys_.coeffs, sys_.t, sys_.t).sum(axis=0)
    pts = sys_.points(state.sigma) if points is None else points
    u = sys_.u0 + state.sigma
    rhs = np.zeros(len(sys_.index))
    for k in range(len(sys_.index)):
        for j, ((eta, eps), w) in enumerate(zip(pts, u), start=1):
            l1, l2 = sd.gap(j)
            nudge = 1e-7 * (l2 - l1)

            def smooth(x):
                # sqrt((x - l1)(l2 - x) / (Delta^2 - 4)); 0/0 at the edges, so step inside
                x = min(max(x, l1 + nudge), l2 - nudge)
                D = sd.disc.d(x)
                return np.sqrt((x - l1) * (l2 - x) / abs(D * D - 4))

            def h(x, k=k):
                return sys_.F(np.array([x]))[0, k] * smooth(x)

            full = quad(h, l1, l2, weight="alg", wvar=(-0.5, -0.5), epsabs=1e-11, epsrel=1e-10, limit=200)[0]
            norm = quad(smooth, l1, l2, weight="alg", wvar=(-0.5, -0.5), epsabs=1e-11, epsrel=1e-10, limit=200)[0]
            turns = np.floor(w / 2)
            val = 2 * turns * full
            if eps > 0:
                val += _alg_quad(h, eta, l2, l1, l2)
            else:
                val += full + _alg_quad(h, l1, eta, l1, l2)
            rhs[k] += val / norm
    return lhs, rhs


def _alg_quad(h, a, b, l1, l2):
    """Integral over [a, b] of h(x) / sqrt((x - l1)(l2 - x)) with endpoint weights when touching."""
    from scipy.integrate import quad

    if b <= a:
        return 0.0
    wa = -0.5 if a <= l1 else 0.0
    wb = -0.5 if b >= l2 else 0.0
    if wa == 0.0 and wb == 0.0:
        return quad(lambda x: h(x) / np.sqrt((x - l1) * (l2 - x)), a, b,
                    epsabs=1e-11, epsrel=1e-10, limit=200)[0]

    def g(x):
        f = h(x)
        if wa == 0.0:
            f /= np.sqrt(x - l1)
        if wb == 0.0:
            f /= np.sqrt(l2 - x)
        return f

    return quad(g, a, b, weight="alg", wvar=(wa, wb), epsabs=1e-11, epsrel=1e-10, limit=200)[0]


# --------------------------------------------------------------- recovery

def translate_tied_spectrum(spec, s_grid, j_max, spectral=None, verify_every=None):
    """mu_j(s) for q(. + s); the periodic spectrum of a few translates is recomputed
    and compared with the base spectrum."""
    sd = spectral or spectrum_for_divisor(spec, j_max)
    s_grid = np.asarray(s_grid, float)
    table = np.empty((len(s_grid), j_max))
    verify_every = verify_every or max(1, len(s_grid) // 4)
    drift = 0.0
    for i, s in enumerate(s_grid):
        ts = translate(spec, s)
        local = _TranslatedDiscriminant(ts, sd)
        for j in range(1, j_max + 1):
            table[i, j - 1] = _tied_root(local, sd, j)
        if i % verify_every == 0:
            other = compute_spectrum(ts, j_max, tol=1e-12)
            drift = max(drift, float(np.max(np.abs(other.lambdas - sd.lambdas[:2 * j_max + 1]))))
    if drift > 1e-7:
        raise BracketError(f"periodic spectrum moved by {drift:.3e} under translation")
    return table


class _TranslatedDiscriminant:
    def __init__(self, spec, base):
        from .floquet import Discriminant
        self.disc = Discriminant(spec, base.disc.lam_max)


def _tied_root(local, sd, j):
    if not sd.is_open(j):
        return sd.gap(j)[1]
    l1, l2 = sd.gap(j)
    g = local.disc.g
    g1, g2 = g(l1), g(l2)
    if g1 * g2 < 0:
        return _root(g, l1, l2, 1e-14)
    a, b = sd.band_centers[j - 1], sd.band_centers[j]
    if g(a) * g(b) > 0:
        raise BracketError(f"no Dirichlet root near gap {j}")
    return float(np.clip(_root(g, a, b, 1e-14), l1, l2))


def _periodic_fd(y, h):
    d1 = (-np.roll(y, -2) + 8 * np.roll(y, -1) - 8 * np.roll(y, 1) + np.roll(y, 2)) / (12 * h)
    d2 = (-np.roll(y, -2) + 16 * np.roll(y, -1) - 30 * y + 16 * np.roll(y, 1) - np.roll(y, 2)) / (12 * h * h)
    return d1, d2


@dataclass
class Recovery:
    s: np.ndarray
    q_true: np.ndarray
    q_recovered: np.ndarray
    q_derivative_form: np.ndarray
    f_squared: np.ndarray
    masked: np.ndarray
    mus: np.ndarray

    @property
    def max_error(self):
        ok = ~self.masked
        return float(np.max(np.abs(self.q_recovered[ok] - self.q_true[ok])))


def recover_potential(spec_truth, grid_points, j_max, k=0, mask_tol=1e-8):
    """Rebuild q on a uniform periodic grid from lambda_k and the tied spectra of translates.

    f^2(s) comes from the truncated product over mu_j(s); q(s) - lambda_k
    then follows from 4 f^4 (q - lambda_k) = 2 f^2 (f^2)'' - ((f^2)')^2.
    The derivative form (1/pi) d/ds sum_j eps_j(s) * integral from mu_j(s) to
    lambda_{2j} of Delta' / sqrt(Delta^2 - 4), with the sheet of mu_j(s) read
    off as eps = sign(g'(2 pi) - f(2 pi)), is returned as an estimate of q
    minus its mean.
    """
    s = 2 * np.pi * np.arange(grid_points) / grid_points
    h = s[1] - s[0]
    jj = max(j_max, k // 2 + 1)
    sd = spectrum_for_divisor(spec_truth, jj)
    lam_k = sd.lambdas[k]
    if k > 0 and abs(sd.lambdas[k] - sd.lambdas[k - 1 if k % 2 == 0 else k + 1]) < 1e-10:
        raise ValueError(f"lambda_{k} is not simple")
    mus = translate_tied_spectrum(spec_truth, s, j_max, spectral=sd)
    j = np.arange(1, j_max + 1)
    dprime = sd.disc.dp(lam_k)
    f2 = np.prod(4 * (mus - lam_k) / j ** 2, axis=1) / (-dprime)
    d1, d2 = _periodic_fd(f2, h)
    masked = np.abs(f2) < mask_tol * np.max(np.abs(f2))
    with np.errstate(divide="ignore", invalid="ignore"):
        q_rec = lam_k + (2 * f2 * d2 - d1 ** 2) / (4 * f2 ** 2)
    q_rec[masked] = np.nan
    omega = np.zeros(grid_points)
    for i, si in enumerate(s):
        local = _TranslatedDiscriminant(translate(spec_truth, si), sd)
        for jj_ in range(1, j_max + 1):
            if not sd.is_open(jj_):
                continue
            sm = local.disc.sample(mus[i, jj_ - 1], with_derivative=False)
            eps = 1.0 if sm.gp_end - sm.f_end >= 0 else -1.0
            sig = 1.0 if jj_ % 2 == 0 else -1.0
            omega[i] += eps * -sig * np.arccosh(max(abs(sm.delta) / 2, 1.0))
    d_omega, _ = _periodic_fd(omega, h)
    return Recovery(s, spec_truth(s), q_rec, d_omega / np.pi, f2, masked, mus)
