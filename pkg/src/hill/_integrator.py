"""Dormand-Prince 8(5,3) integration of Hill's equation over one period.

State layout: (f, f', g, g') and, with derivatives, (df, df', dg, dg')
where d = d/d(lambda).  Both kernels are compiled for real and complex
lambda.  The tableau is scipy's DOP853 table; stepping is done here so the
inner loop runs compiled and so a mesh can be frozen and reused.
"""
import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

N_STAGES = 12
A = np.ascontiguousarray(_dop.A[:N_STAGES, :N_STAGES])
B = np.ascontiguousarray(_dop.B)
C = np.ascontiguousarray(_dop.C[:N_STAGES])
E3 = np.ascontiguousarray(_dop.E3)
E5 = np.ascontiguousarray(_dop.E5)

TWO_PI = 2.0 * np.pi
OK, UNDERFLOW, TOO_MANY_STEPS = 0, 1, 2


@njit(cache=True)
def q_at(a0, a, b, x):
    c1 = np.cos(x)
    s1 = np.sin(x)
    cn = c1
    sn = s1
    acc = 0.5 * a0
    for n in range(len(a)):
        acc += a[n] * cn + b[n] * sn
        cn, sn = cn * c1 - sn * s1, sn * c1 + cn * s1
    return acc


@njit(cache=True)
def _rhs(qv, lam, y, out):
    w = qv - lam
    out[0] = y[1]
    out[1] = w * y[0]
    out[2] = y[3]
    out[3] = w * y[2]
    if y.shape[0] == 8:
        out[4] = y[5]
        out[5] = w * y[4] - y[0]
        out[6] = y[7]
        out[7] = w * y[6] - y[2]


@njit(cache=True)
def _initial(lam, nvar):
    y = np.zeros(nvar) + 0.0 * lam
    y[0] = 1.0
    y[3] = 1.0
    return y


@njit(cache=True)
def adaptive(a0, a, b, lam, nvar, rtol, atol, max_steps):
    """Integrate over [0, 2pi] with error control.

    Returns (y_end, accepted_steps, rejected_steps, status, h_min).
    """
    y = _initial(lam, nvar)
    K = np.zeros((N_STAGES + 1, nvar)) + 0.0 * lam
    ytmp = np.zeros(nvar) + 0.0 * lam
    ynew = np.zeros(nvar) + 0.0 * lam
    x = 0.0
    h = TWO_PI / (16.0 * (1.0 + np.sqrt(np.abs(lam))))
    h_min = h
    _rhs(q_at(a0, a, b, 0.0), lam, y, K[0])
    accepted = 0
    rejected = 0
    status = OK
    while x < TWO_PI:
        if accepted + rejected >= max_steps:
            status = TOO_MANY_STEPS
            break
        if h < 1e-12:
            status = UNDERFLOW
            break
        last = False
        if x + h >= TWO_PI:
            h = TWO_PI - x
            last = True
        for s in range(1, N_STAGES):
            for i in range(nvar):
                acc = 0.0 * lam
                for l in range(s):
                    acc += A[s, l] * K[l, i]
                ytmp[i] = y[i] + h * acc
            _rhs(q_at(a0, a, b, x + C[s] * h), lam, ytmp, K[s])
        for i in range(nvar):
            acc = 0.0 * lam
            for l in range(N_STAGES):
                acc += B[l] * K[l, i]
            ynew[i] = y[i] + h * acc
        _rhs(q_at(a0, a, b, x + h), lam, ynew, K[N_STAGES])
        e5 = 0.0
        e3 = 0.0
        for i in range(nvar):
            sc = atol + rtol * max(np.abs(y[i]), np.abs(ynew[i]))
            d5 = 0.0 * lam
            d3 = 0.0 * lam
            for l in range(N_STAGES + 1):
                d5 += E5[l] * K[l, i]
                d3 += E3[l] * K[l, i]
            e5 += np.abs(d5 / sc) ** 2
            e3 += np.abs(d3 / sc) ** 2
        if e5 == 0.0 and e3 == 0.0:
            err = 0.0
        else:
            err = h * e5 / np.sqrt((e5 + 0.01 * e3) * nvar)
        if err < 1.0:
            x = TWO_PI if last else x + h
            for i in range(nvar):
                y[i] = ynew[i]
                K[0, i] = K[N_STAGES, i]
            accepted += 1
            h_min = min(h_min, h)
            fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1.0 / 8.0))
            h = h * fac
        else:
            rejected += 1
            h = h * max(0.2, 0.9 * err ** (-1.0 / 8.0))
    return y, accepted, rejected, status, h_min


def stage_potential(a0, a, b, nsteps):
    """q at every stage abscissa of a uniform mesh, shape (nsteps, 13)."""
    h = TWO_PI / nsteps
    x = (np.arange(nsteps)[:, None] + np.append(C, 1.0)[None, :]) * h
    n = np.arange(1, len(a) + 1)
    nx = x[..., None] * n
    return 0.5 * a0 + np.cos(nx) @ a + np.sin(nx) @ b


@njit(cache=True)
def frozen(qstage, lams, nvar):
    """Fixed uniform mesh for a batch of lambda values; returns (len, nvar)."""
    nsteps = qstage.shape[0]
    h = TWO_PI / nsteps
    out = np.zeros((lams.shape[0], nvar)) + 0.0 * lams[0]
    K = np.zeros((N_STAGES, nvar)) + 0.0 * lams[0]
    ytmp = np.zeros(nvar) + 0.0 * lams[0]
    for p in range(lams.shape[0]):
        lam = lams[p]
        y = _initial(lam, nvar)
        for st in range(nsteps):
            _rhs(qstage[st, 0], lam, y, K[0])
            for s in range(1, N_STAGES):
                for i in range(nvar):
                    acc = 0.0 * lam
                    for l in range(s):
                        acc += A[s, l] * K[l, i]
                    ytmp[i] = y[i] + h * acc
                _rhs(qstage[st, s], lam, ytmp, K[s])
            for i in range(nvar):
                acc = 0.0 * lam
                for l in range(N_STAGES):
                    acc += B[l] * K[l, i]
                y[i] = y[i] + h * acc
        for i in range(nvar):
            out[p, i] = y[i]
    return out
