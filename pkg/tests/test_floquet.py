import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spec
from hill.floquet import (Discriminant, IntegrationError, asymptotic_discriminant,
                          discriminant_scan, propagate)
from hill.potential import PotentialSpec, constant_potential, cosine_potential, zero_potential
from hill.spectra import fourier_matrix_oracle


def flat_delta(lam):
    k = np.sqrt(complex(lam))
    return (2 * np.cos(2 * np.pi * k)).real


def test_flat_examples():
    s = propagate(zero_potential(1), 1.0)
    assert (s.f_end, s.gp_end, s.delta) == pytest.approx((1, 1, 2), abs=1e-9)
    s = propagate(zero_potential(1), 0.25)
    assert np.allclose(s.monodromy, -np.eye(2), atol=1e-9)
    assert propagate(zero_potential(1), -1.0).delta == pytest.approx(2 * np.cosh(2 * np.pi), rel=1e-9)


def test_scan_flat():
    rows = discriminant_scan(zero_potential(1), [0, 1 / 16, 1 / 4])
    assert [r[1] for r in rows] == pytest.approx([2, 0, -2], abs=1e-9)
    assert [r[0] for r in rows] == [0, 1 / 16, 1 / 4]


def test_scan_rejects_bad_grid():
    with pytest.raises(ValueError):
        discriminant_scan(zero_potential(1), [1.0, 0.0])
    with pytest.raises(ValueError):
        discriminant_scan(zero_potential(1), [0.0, np.nan])


def test_tol_must_be_positive():
    with pytest.raises(ValueError):
        propagate(zero_potential(1), 1.0, tol=0)


def test_step_budget_failure_reports_diagnostics():
    with pytest.raises(IntegrationError, match="accepted=.*smallest step"):
        propagate(cosine_potential({1: 1.0}, 1), 400.0, max_steps=5)


def test_wronskian_many():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        spec = random_spec(rng, modes=int(rng.integers(1, 9)), scale=float(rng.uniform(0.1, 1)))
        lam = float(rng.uniform(0, 60))
        s = propagate(spec, lam)
        worst = max(worst, abs(s.wronskian - 1))
        assert isinstance(s.delta, float)
    assert worst < 1e-9


def test_wronskian_growing_regime_relative():
    # below the spectrum f, g' ~ e^{2 pi sqrt|lambda|}; f g' - f' g cancels that
    # much, so the absolute error scales with |f g'| times the tolerance
    rng = np.random.default_rng(1)
    for _ in range(200):
        spec = random_spec(rng, scale=1.0)
        s = propagate(spec, float(rng.uniform(-40, 0)))
        assert abs(s.wronskian - 1) <= 1e-9 * max(1.0, abs(s.f_end * s.gp_end))


@given(st.floats(-3, 3), st.floats(-5, 30), st.integers(0, 10_000))
def test_shift_identity(c, lam, seed):
    spec = random_spec(np.random.default_rng(seed))
    shifted = PotentialSpec(spec.a0 + 2 * c, spec.a, spec.b)
    a = propagate(shifted, lam, tol=1e-12).delta
    b = propagate(spec, lam - c, tol=1e-12).delta
    assert a == pytest.approx(b, abs=1e-8 * max(1, abs(b)))


def test_constant_shift_example():
    for lam in (0.3, 1.7, 5.0):
        assert propagate(constant_potential(0.6, 1), lam, tol=1e-12).delta == \
            pytest.approx(flat_delta(lam - 0.6), abs=1e-8)


def test_delta_prime_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        spec = random_spec(rng)
        lam = float(rng.uniform(-2, 20))
        d = propagate(spec, lam, True, 1e-12).delta_prime
        h = 1e-5
        fd = (propagate(spec, lam + h, tol=1e-12).delta - propagate(spec, lam - h, tol=1e-12).delta) / (2 * h)
        assert d == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_cos_x_against_fourier_matrix():
    # Delta - 2 changes sign exactly at the periodic eigenvalues of the matrix oracle
    spec = cosine_potential({1: 1.0}, 1)
    per = fourier_matrix_oracle(spec, 64, "periodic", 6)
    anti = fourier_matrix_oracle(spec, 64, "antiperiodic", 6)
    for e in per:
        assert propagate(spec, e, tol=1e-12).delta == pytest.approx(2, abs=1e-6)
    for e in anti:
        assert propagate(spec, e, tol=1e-12).delta == pytest.approx(-2, abs=1e-6)
    # and lambda = 2 sits between two of them with the right sign of Delta^2 - 4
    d2 = propagate(spec, 2.0, tol=1e-12).delta
    ev = np.sort(np.concatenate([per, anti]))
    k = np.searchsorted(ev, 2.0)
    inside_gap = k % 2 == 0
    assert (abs(d2) > 2) == inside_gap


def test_negative_lambda_cosh_regime():
    rng = np.random.default_rng(4)
    ref = 2 * np.cosh(2 * np.pi * np.sqrt(50))
    for _ in range(20):
        spec = random_spec(rng, scale=0.5)
        spec = PotentialSpec(spec.a0, spec.a, spec.b)
        scale = min(1.0, 1 / np.sqrt(max(1e-12, (spec.a0 / 2) ** 2 + 0.5 * np.sum(spec.a ** 2 + spec.b ** 2))))
        spec = PotentialSpec(spec.a0 * scale, spec.a * scale, spec.b * scale)
        # q - lambda = 50 + (q - mean): the mean only relabels lambda
        r = propagate(spec, -50.0 + spec.mean).delta / ref
        assert abs(r - 1) < 0.05
    zero_mean = PotentialSpec(0.0, [0.8], [0.5])
    assert abs(propagate(zero_mean, -50.0).delta / ref - 1) < 0.05


def test_asymptotic_examples():
    assert asymptotic_discriminant(PotentialSpec(2.0, [0.0], [0.0]), 100.0) == pytest.approx(2)
    with pytest.raises(ValueError):
        asymptotic_discriminant(cosine_potential({1: 3.0}, 1), 10.0)


def test_asymptotic_error_is_order_one_over_lambda():
    spec = PotentialSpec(0.0, [0.5], [0.0])
    scaled = [abs(propagate(spec, lam, tol=1e-12).delta - asymptotic_discriminant(spec, lam)) * lam
              for lam in (100.0, 400.0, 1600.0)]
    assert max(scaled) < 3 * min(scaled) + 1e-3 and max(scaled) < 10


def test_cauchy_integral_reproduces_center():
    spec = cosine_potential({1: 0.4, 2: -0.2}, 2)
    center, radius, m = 1.3, 0.2, 64
    z = center + radius * np.exp(2j * np.pi * np.arange(m) / m)
    vals = np.array([propagate(spec, zz, tol=1e-12).delta for zz in z])
    assert np.mean(vals).real == pytest.approx(propagate(spec, center, tol=1e-12).delta, abs=1e-6)
    assert abs(np.mean(vals).imag) < 1e-6


def test_delta_prime_sign_constant_on_bands():
    from hill.spectra import compute_spectrum
    spec = cosine_potential({1: 0.5, 3: 0.3}, 3)
    sd = compute_spectrum(spec, 5)
    lam = sd.lambdas
    for k in range(5):
        lo, hi = lam[2 * k], lam[2 * k + 1]
        grid = np.linspace(lo, hi, 41)[1:-1]
        dp = sd.disc.delta_prime(grid)
        assert np.all(dp > 0) or np.all(dp < 0)


def test_frozen_mesh_matches_adaptive():
    spec = cosine_potential({1: 0.7, 2: 0.1}, 2)
    disc = Discriminant(spec, 40.0)
    for lam in (-3.0, 0.4, 7.7, 39.0):
        s = disc.sample(lam)
        ref = propagate(spec, lam, True, 1e-12)
        assert s.delta == pytest.approx(ref.delta, abs=1e-9 * max(1, abs(ref.delta)))
        assert s.delta_prime == pytest.approx(ref.delta_prime, rel=1e-8, abs=1e-9)
    assert disc.covers(39.0) and not disc.covers(41.0)
