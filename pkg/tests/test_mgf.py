import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isokit import mgf
from isokit.kernels import killed_potential, potential
from isokit.sample import RngStream, mean_and_se, sample_gaussian

from strategies import spd_matrices

K2U = np.array([[2, 1], [1, 2]]) / 3


def test_scalar_closed_forms():
    c, lam, u = 0.8, 0.5, 0.7
    assert mgf.gauss_square_mgf([[c]], [lam]) == pytest.approx((1 - lam * c) ** -0.5)
    # E exp(lam (G + u)^2 / 2) for G ~ N(0, c)
    want = (1 - lam * c) ** -0.5 * math.exp(lam * u * u / (2 * (1 - lam * c)))
    assert mgf.shifted_square_mgf([[c]], [lam], u) == pytest.approx(want)
    assert mgf.start_mgf([[c]], [lam], 0) == pytest.approx(1 / (1 - c * lam))


def test_zero_load_is_one(k2, c3):
    u = potential(k2)
    z = np.zeros(2)
    assert mgf.gauss_square_mgf(u, z, [1.0, 2.0]) == 1.0
    assert mgf.start_mgf(u, z, "a") == 1.0
    assert mgf.bridge_mgf(u, z, "a", "b") == pytest.approx(1 / 3)
    k = killed_potential(c3, "0")
    assert mgf.rayknight_mgf(k, np.zeros(3), 2.0) == 1.0
    assert mgf.rayknight_mgf(k, [0.1, 0.2, 0.3], 0.0) == 1.0
    assert mgf.excursion_mgf_exponent(k, [0.1, 0.2, 0.3], 0.0) == 0.0


def test_load_mapping_and_errors(k2):
    u = potential(k2)
    assert mgf.gauss_square_mgf(u, {"a": 0.3}) == mgf.gauss_square_mgf(u, [0.3, 0.0])
    with pytest.raises(mgf.LoadError):
        mgf.gauss_square_mgf(u, [1.0, 1.0])
    with pytest.raises(mgf.LoadError):
        mgf.cbar(u, [1.0 - 1e-7, 1.0 - 1e-7])
    with pytest.raises(ValueError):
        mgf.gauss_square_mgf(u, [0.1])


def test_taylor_series_converges_to_determinant():
    lam = [0.1, 0.1]
    assert mgf.spectral_radius(K2U, lam) == pytest.approx(0.1)
    exact = mgf.gauss_square_mgf(K2U, lam)
    assert mgf.square_mgf_taylor(K2U, lam, 8) == pytest.approx(exact, rel=1e-8)


def test_taylor_truncation_error_scales_like_next_order():
    # relative error of the degree-8 truncation behaves like rho^9
    errs = []
    for rho in (0.05, 0.1):
        lam = [rho, rho]
        exact = mgf.gauss_square_mgf(K2U, lam)
        errs.append(abs(mgf.square_mgf_taylor(K2U, lam, 8) - exact) / exact)
    assert errs[0] / errs[1] == pytest.approx(0.5**9, rel=0.05)


def test_taylor_coefficients_are_exact():
    # the degree-d truncation differs from degree d-1 by exactly the degree-d
    # term of the determinant expansion; compare via a tiny load
    lam = np.array([1e-3, 2e-3])
    exact = mgf.gauss_square_mgf(K2U, lam)
    assert mgf.square_mgf_taylor(K2U, lam, 4) == pytest.approx(exact, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(spd_matrices(3), st.floats(0.05, 0.6))
def test_log_det_equals_loop_trace_series(c, rho):
    shape = np.array([1.0, 0.5, 0.25])
    lam = shape * rho / mgf.spectral_radius(c, shape)
    assert math.log(mgf.gauss_square_mgf(c, lam)) == pytest.approx(mgf.log_det_series(c, lam), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(spd_matrices(3), st.floats(0.05, 0.8))
def test_resolvent_and_series_agree(c, rho):
    shape = np.array([0.2, 1.0, 0.6])
    lam = shape * rho / mgf.spectral_radius(c, shape)
    np.testing.assert_allclose(mgf.cbar(c, lam), mgf.cbar_series(c, lam), atol=1e-11)
    for i in range(3):
        assert mgf.start_mgf(c, lam, i) == pytest.approx(mgf.start_mgf_series(c, lam, i), abs=1e-11)
        assert mgf.bridge_mgf(c, lam, i, 2) == pytest.approx(mgf.bridge_mgf_series(c, lam, i, 2), abs=1e-11)
        assert mgf.bridge_mgf(c, lam, i, 2) == pytest.approx(mgf.bridge_mgf_precision(c, lam, i, 2), abs=1e-10)
        assert mgf.bridge_mgf(c, lam, i, 2) == pytest.approx(mgf.bridge_mgf(c, lam, 2, i), abs=1e-12)


def test_start_mgf_matches_moment_series(k2):
    # degree-d moment truncation equals the first d+1 terms of the resolvent
    # series, so the remaining gap is exactly the series tail
    u = potential(k2)
    lam = np.array([0.2, 0.1])
    m = u.entries * lam[None, :]
    e = np.array([1.0, 0.0])
    partial, term = 0.0, np.ones(2)
    for d in range(10):
        partial += float(e @ term)
        term = m @ term
        assert mgf.start_mgf_moment_series(u, lam, "a", d) == pytest.approx(partial, abs=1e-14)
    tail = mgf.start_mgf(u, lam, "a") - partial
    rho = mgf.spectral_radius(u, lam)
    assert 0 < tail < 2 * rho**10 / (1 - rho)


def test_power_series_tail_bound_is_honest():
    m = np.array([[0.5, 0.4], [0.0, 0.5]])  # non-normal, norm close to 1
    left, right = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    terms, bound = mgf.power_series(m, left, right, tol=1e-6)
    exact = float(left @ np.linalg.solve(np.eye(2) - m, right))
    assert abs(math.fsum(terms) - exact) <= bound
    assert bound < 1e-6


def test_rayknight_forms(c3):
    k = killed_potential(c3, "0")
    lam = [0.0, 0.3, 0.3]
    r = mgf.rayknight_mgf(k, lam, 1.0)
    assert r == pytest.approx(mgf.rayknight_mgf_series(k, lam, 1.0), abs=1e-10)
    assert r == pytest.approx(math.exp(mgf.excursion_mgf_exponent(k, lam)), abs=1e-10)
    assert r == pytest.approx(mgf.rayknight_gaussian_ratio(k, lam, 1.0), abs=1e-10)
    h = mgf.h_sequence(k, lam)
    assert h[0] == pytest.approx(sum(lam))
    # the base state carries local time t exactly
    assert mgf.rayknight_mgf(k, [0.2, 0, 0], 1.5) == pytest.approx(math.exp(0.3))


def test_excursion_exponent_first_order(c3):
    k = killed_potential(c3, "0")
    lam = np.array([0.0, 0.2, 0.1])
    d = 1e-6
    assert mgf.excursion_mgf_exponent(k, lam, d) / d == pytest.approx(lam.sum(), rel=1e-5)


def test_interlacement_check(k2):
    u = potential(k2)
    lhs, rhs = mgf.interlacement_mgf_check(u, [1.0, 1.0], 0.5, 0.2)
    assert lhs == pytest.approx(rhs, abs=1e-10)
    assert mgf.interlacement_mgf_check(u, [1.0, 1.0], 0.0, 0.2) == pytest.approx((1.0, 1.0))
    assert mgf.interlacement_mgf_check(u, [1.0, 1.0], 0.5, 0.0) == pytest.approx((1.0, 1.0))
    with pytest.raises(mgf.LoadError):
        mgf.interlacement_mgf_check(u, [1.0, 1.0], 0.5, 1.5)


def test_gauss_square_mgf_monte_carlo():
    c = np.array([[1.0, 0.3, 0.1], [0.3, 0.7, 0.2], [0.1, 0.2, 0.5]])
    shape = np.array([1.0, 0.6, 0.3])
    lam = shape * 0.25 / mgf.spectral_radius(c, shape)
    u = np.array([0.4, -0.2, 0.1])
    g = sample_gaussian(c, 1_000_000, RngStream(11, (1,)))
    est, se = mean_and_se(np.exp((g * g / 2 + g * u) @ lam))
    assert abs(est - mgf.gauss_square_mgf(c, lam, u)) <= 3 * se
