import numpy as np
import pytest

from conftest import random_spec
from hill.divisor import (DegenerateGapError, DivergenceError, Divisor, GapModel,
                          action_integral, arccosh_antiderivative, build_system,
                          contraction_check, divisor_sampling_points, eta_coordinate,
                          gap_integral, gap_quadrature, identity_check, jacobian_map,
                          newton_divisor_solve, omega_infinity, phase_function,
                          recover_potential, spectrum_for_divisor, translate_tied_spectrum)
from hill.potential import constant_potential, cosine_potential, zero_potential
from hill.pwspace import SingularGramError
from hill.spectra import compute_spectrum


@pytest.fixture(scope="module")
def cos_sd():
    return spectrum_for_divisor(cosine_potential({1: 0.1, 2: 0.05}, 2), 4)


@pytest.fixture(scope="module")
def random_sds():
    rng = np.random.default_rng(5)
    return [spectrum_for_divisor(random_spec(rng), 8) for _ in range(6)]


def test_closed_gap_is_degenerate():
    sd = compute_spectrum(zero_potential(1), 3)
    r = gap_quadrature(sd, 2, "delta_prime")
    assert r.value == 0 and r.degenerate
    assert gap_integral(sd, 1) == 0


def test_reversed_limits(cos_sd):
    l1, l2 = cos_sd.gap(1)
    with pytest.raises(ValueError, match="a <= b"):
        gap_integral(cos_sd, 1, "one", l2, l1)
    with pytest.raises(ValueError, match="leaves gap"):
        gap_integral(cos_sd, 1, "one", l1 - 0.1, l2)


def test_vanishing_real_periods(random_sds):
    for sd in random_sds:
        for j in range(1, 9):
            if sd.is_open(j):
                assert abs(gap_integral(sd, j, "delta_prime")) < 1e-8


def test_arccosh_identity(random_sds):
    for sd in random_sds:
        for j in range(1, 9):
            if not sd.is_open(j):
                continue
            l1, l2 = sd.gap(j)
            for mu in (l1 + 0.13 * (l2 - l1), sd.mus[j - 1], l1 + 0.91 * (l2 - l1)):
                quad = gap_integral(sd, j, "delta_prime", mu, l2)
                assert quad == pytest.approx(arccosh_antiderivative(sd, j, mu), abs=1e-7)


def test_arccosh_derivative_fd(cos_sd):
    # d/dmu of the antiderivative is minus the integrand at mu
    l1, l2 = cos_sd.gap(1)
    mu, h = 0.5 * (l1 + l2) + 0.1 * (l2 - l1), 1e-6 * (l2 - l1)
    fd = (arccosh_antiderivative(cos_sd, 1, mu + h) - arccosh_antiderivative(cos_sd, 1, mu - h)) / (2 * h)
    D, Dp = cos_sd.disc.d(mu), cos_sd.disc.dp(mu)
    assert fd == pytest.approx(-Dp / np.sqrt(D * D - 4), rel=1e-5)


def test_poly_weights(cos_sd):
    # x^k weights against an independent composite rule on the x variable
    from scipy.integrate import quad
    l1, l2 = cos_sd.gap(2)
    f = lambda x: np.sqrt((x - l1) * (l2 - x) / abs(cos_sd.disc.d(x) ** 2 - 4))
    for k in (0, 1, 3):
        ref = quad(lambda x: x ** k * f(min(max(x, l1 + 1e-9), l2 - 1e-9)), l1, l2,
                   weight="alg", wvar=(-0.5, -0.5), epsabs=1e-12)[0]
        assert gap_integral(cos_sd, 2, ("poly", k)) == pytest.approx(ref, rel=1e-7)


def test_omega_examples(cos_sd):
    sd = cos_sd
    assert omega_infinity(Divisor([(j, sd.gap(j)[1], 1) for j in (1, 2)], sd)) == 0
    l1, l2 = sd.gap(1)
    mu = l1 + 0.3 * (l2 - l1)
    single = Divisor([(1, mu, -1)], sd)
    assert omega_infinity(single) == -gap_integral(sd, 1, "delta_prime", mu, l2)
    other = Divisor([(2, sd.mus[1], 1)], sd)
    assert omega_infinity(single + other) == pytest.approx(omega_infinity(single) + omega_infinity(other), abs=1e-14)


def test_divisor_validation(cos_sd):
    l1, l2 = cos_sd.gap(1)
    with pytest.raises(ValueError, match="outside gap"):
        Divisor([(1, l2 + 1, 1)], cos_sd)
    with pytest.raises(ValueError, match="two entries"):
        Divisor([(1, l1, 1), (1, l2, 1)], cos_sd)
    with pytest.raises(ValueError, match="eps"):
        Divisor([(1, l1, 0)], cos_sd)
    other = spectrum_for_divisor(cosine_potential({1: 0.1}, 1), 2)
    with pytest.raises(ValueError, match="different spectra"):
        Divisor([(1, l1, 1)], cos_sd) + Divisor([(2, other.gap(2)[0], 1)], other)


def test_action_examples(cos_sd):
    sd = cos_sd
    assert action_integral(Divisor([(j, sd.gap(j)[1], 1) for j in (1, 2)], sd)) == 0
    flat = compute_spectrum(zero_potential(1), 2)
    assert action_integral(Divisor([(1, 0.25, 1)], flat)) == 0
    sd1 = spectrum_for_divisor(cosine_potential({1: 0.2}, 1), 2)
    l1, l2 = sd1.gap(1)
    a = gap_quadrature(sd1, 1, "one", l1, l2, kind="sqrt", nodes=64)
    b = gap_quadrature(sd1, 1, "one", l1, l2, kind="sqrt", nodes=256)
    assert a.value > 0 and abs(a.value - b.value) < 1e-8
    assert action_integral(Divisor([(1, l1, 1)], sd1)) == pytest.approx(2 * b.value, abs=1e-8)


def test_phase_flat():
    sd = compute_spectrum(zero_potential(1), 6)
    for x in (0.3, 1.0, 1.7, 2.9):
        assert phase_function(sd, x) == pytest.approx(2 * np.pi * x, abs=1e-6)
    assert phase_function(sd, -1.0) == pytest.approx(-2 * np.pi, abs=1e-6)
    with pytest.raises(ValueError, match="exceeds"):
        phase_function(sd, 4.0)
    with pytest.raises(ValueError, match="exceeds"):
        phase_function(sd, 1.5, lambda_cap=1.0)


def test_phase_gaps_and_bands():
    spec = cosine_potential({1: 0.4, 2: 0.2}, 2)
    sd = compute_spectrum(spec, 6)
    lam = sd.lambdas
    for j in (1, 2, 3):
        l1, l2 = lam[2 * j - 1], lam[2 * j]
        inside = [phase_function(sd, np.sqrt(l1 + f * (l2 - l1))) for f in (0.1, 0.5, 0.9)]
        assert inside[0] == inside[1] == inside[2]
        # at the edges themselves sqrt(lambda)^2 != lambda by rounding, and the
        # square-root edge turns that into ~1e-8
        for edge in (l1, l2):
            assert phase_function(sd, np.sqrt(edge)) == pytest.approx(inside[0], abs=1e-7)
    for k in (1, 2, 3):
        inc = phase_function(sd, np.sqrt(lam[2 * k + 1])) - phase_function(sd, np.sqrt(lam[2 * k]))
        assert inc == pytest.approx(np.pi, abs=1e-6)


def test_eta_coordinate(cos_sd):
    sd = cos_sd
    l1, l2 = sd.gap(2)
    assert eta_coordinate(sd, 2, 0.0) == l2
    assert eta_coordinate(sd, 2, 1.0) == l1
    eta = eta_coordinate(sd, 2, 0.5)
    assert gap_integral(sd, 2, "one", eta, l2) == pytest.approx(gap_integral(sd, 2, "one", l1, eta), abs=1e-8)
    with pytest.raises(ValueError):
        eta_coordinate(sd, 2, 1.5)
    flat = compute_spectrum(zero_potential(1), 2)
    with pytest.raises(DegenerateGapError):
        eta_coordinate(flat, 1, 0.5)


def test_eta_round_trip(random_sds):
    sd = random_sds[0]
    for j in (1, 3):
        model = GapModel(sd, j)
        l1, l2 = sd.gap(j)
        full = gap_integral(sd, j)
        for u in np.linspace(0.05, 0.95, 7):
            eta = eta_coordinate(sd, j, u, model)
            assert gap_integral(sd, j, "one", eta, l2) / full == pytest.approx(u, abs=1e-8)


def test_cycle_coordinate_second_sheet(cos_sd):
    model = GapModel(cos_sd, 1)
    for u in (0.3, 1.4, 1.9):
        eta, eps = model.point(u)
        assert eps == (1 if u <= 1 else -1)
        assert eta == pytest.approx(model.point(2 - u)[0], abs=1e-12)


def test_jacobian_reference_offset(cos_sd):
    out = jacobian_map(cos_sd, np.zeros(2), J=2, u0=0.0)
    assert np.allclose(out["X"], -1, atol=1e-14)
    # at the band ends X'(0) has rows delta_{j, k}
    assert np.allclose(out["Xprime0"], np.eye(2), atol=1e-10)
    assert out["det2_Xprime0"] == pytest.approx(1, abs=1e-10)


def test_jacobian_hs_bound_tiny_gaps():
    sd = spectrum_for_divisor(cosine_potential({1: 0.02, 2: 0.01, 3: 0.005}, 3), 4)
    out = jacobian_map(sd, np.zeros(3), J=3)
    assert out["L0"] < 0.05
    assert out["hs_distance"] <= out["hs_bound"]
    assert abs(out["det2_Xprime0"] - 1) <= out["hs_bound"]


def test_jacobian_fd_one_gap():
    sd = spectrum_for_divisor(cosine_potential({1: 0.15}, 1), 2)
    sys_ = build_system(sd, 1)
    h = 1e-4
    for s in (-0.3, 0.0, 0.2, 0.6):
        fd = (sys_.X([s + h]) - sys_.X([s - h])) / (2 * h)
        assert np.allclose(sys_.derivative([s])[:, 0], fd, atol=1e-5)
        fd2 = (sys_.derivative([s + h]) - sys_.derivative([s - h])) / (2 * h)
        fd2_ref = (sys_.X([s + h]) - 2 * sys_.X([s]) + sys_.X([s - h])) / h ** 2
        assert np.allclose(fd2[:, 0], fd2_ref, atol=1e-4)


def test_sampling_points_and_certificate(cos_sd):
    t = divisor_sampling_points(cos_sd, 2)
    assert np.allclose(t, -t[::-1])
    assert np.allclose(t[2:], 2 * np.sqrt(cos_sd.lambdas[[2, 4]]))
    with pytest.raises(SingularGramError, match="Riesz"):
        build_system(cos_sd, 2, scale=1.0)
    with pytest.raises(ValueError):
        divisor_sampling_points(cos_sd, 9)


def test_newton_converges(cos_sd):
    state = newton_divisor_solve(cos_sd, 2, max_iter=20, tol=1e-8)
    assert state.converged and state.iterations <= 20
    assert state.residual_inf < 1e-8
    assert np.max(np.abs(state.sigma)) <= 1
    lhs, rhs = identity_check(state)
    assert np.allclose(lhs, 1, atol=1e-8)
    assert np.max(np.abs(lhs - rhs)) < 1e-6
    div = state.divisor()
    for j, mu, eps in div.entries:
        l1, l2 = cos_sd.gap(j)
        assert l1 <= mu <= l2 and eps in (-1, 1)


def test_newton_contraction_monotone(cos_sd):
    sys_ = build_system(cos_sd, 2)
    assert contraction_check(sys_, radius=0.5) < 1 / 6
    state = newton_divisor_solve(cos_sd, 2, system=sys_)
    assert all(b < a for a, b in zip(state.history, state.history[1:]))


def test_newton_closed_gaps():
    sd = compute_spectrum(zero_potential(1), 3)
    state = newton_divisor_solve(sd, 2, target=0.0)
    assert np.all(state.sigma == 0) and state.iterations <= 1
    with pytest.raises(DegenerateGapError):
        newton_divisor_solve(sd, 2, target=1.0)


def test_newton_divergence(cos_sd):
    with pytest.raises(DivergenceError) as info:
        newton_divisor_solve(cos_sd, 2, target=4.0)
    assert len(info.value.trace) >= 1


def test_tied_spectrum_flat():
    table = translate_tied_spectrum(zero_potential(1), np.linspace(0, 2 * np.pi, 5), 3)
    assert np.allclose(table, np.arange(1, 4) ** 2 / 4, atol=1e-10)


def test_tied_spectrum_interlacing(random_sds):
    rng = np.random.default_rng(5)
    spec = random_spec(rng)
    sd = random_sds[0]
    table = translate_tied_spectrum(spec, np.linspace(0, 2 * np.pi, 9), 6, spectral=sd)
    for j in range(1, 7):
        l1, l2 = sd.gap(j)
        assert np.all((table[:, j - 1] >= l1 - 1e-12) & (table[:, j - 1] <= l2 + 1e-12))


def test_tied_spectrum_sweep_reaches_edges():
    spec = cosine_potential({1: 0.3}, 1)
    sd = spectrum_for_divisor(spec, 2)
    s = np.linspace(0, 2 * np.pi, 129)
    mu = translate_tied_spectrum(spec, s, 1, spectral=sd)[:, 0]
    assert mu[0] == pytest.approx(mu[-1], abs=1e-10)
    l1, l2 = sd.gap(1)
    for target, pick in ((l1, np.argmin), (l2, np.argmax)):
        i = pick(mu)
        fine = np.linspace(s[i] - s[1], s[i] + s[1], 201)
        m = translate_tied_spectrum(spec, fine, 1, spectral=sd)[:, 0]
        assert abs(pick_value(m, pick) - target) < 1e-6


def pick_value(values, pick):
    return values[pick(values)]


def test_recover_constant():
    rec = recover_potential(constant_potential(0.4, 1), 64, 6)
    assert np.max(np.abs(rec.q_recovered - 0.4)) < 1e-3


def test_recover_cosine_and_mean():
    spec = cosine_potential({1: 0.2}, 1)
    rec = recover_potential(spec, 64, 6)
    assert rec.max_error < 5e-2
    assert np.mean(rec.q_recovered) == pytest.approx(spec.a0 / 2, abs=1e-3)


def test_recover_random_mean_and_derivative_form():
    spec = random_spec(np.random.default_rng(21), modes=3, scale=0.2)
    rec = recover_potential(spec, 64, 8)
    assert np.nanmean(rec.q_recovered) == pytest.approx(spec.a0 / 2, abs=1e-3)
    assert np.max(np.abs(rec.q_derivative_form - (rec.q_true - spec.a0 / 2))) < 1e-3
