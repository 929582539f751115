import math

import numpy as np
import pytest

from isokit import moments as mo
from isokit.kernels import inverse_lt_laplace, killed_potential, potential
from isokit.model import ChainModel
from isokit.sample import (
    RngStream,
    SamplerError,
    bridge_dynamics,
    fields_to_csv,
    mean_and_se,
    sample_bridge,
    sample_bridge_local_times,
    sample_gaussian,
    sample_halfint_soup_field,
    sample_inverse_lt_field,
    sample_inverse_lt_fields,
    sample_local_times,
    sample_path,
    sample_poisson_functional,
)


def _within(values, target, sigmas=3.0):
    est, se = mean_and_se(values)
    assert abs(est - target) <= sigmas * se, (est, target, se)


def single_state(kill=1.5, m=1.0):
    return ChainModel(("s",), [m], [[0.0]], [kill], symmetric=True)


# ------------------------------------------------------------------ streams


def test_stream_determinism():
    a = RngStream(5, (1, 2)).generator().random(4)
    b = RngStream(5, (1, 2)).generator().random(4)
    c = RngStream(5, (1, 3)).generator().random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert RngStream(5).child("x").stream == RngStream(5).child("x").stream


def test_thread_count_does_not_change_results(k2):
    rng = RngStream(3)
    one = sample_local_times(k2, "a", 40_000, rng, threads=1)
    four = sample_local_times(k2, "a", 40_000, rng, threads=4)
    np.testing.assert_array_equal(one, four)


# ----------------------------------------------------------------- Gaussian


def test_gaussian_identity():
    g = sample_gaussian(np.eye(3), 200_000, RngStream(1))
    _within(g[:, 0] ** 2, 1.0)
    _within(g[:, 1] * g[:, 2], 0.0)


def test_gaussian_covariance_k2(k2):
    u = potential(k2)
    g = sample_gaussian(u, 1_000_000, RngStream(2))
    for i in range(2):
        for j in range(2):
            _within(g[:, i] * g[:, j], u.entries[i, j], sigmas=4.0)


def test_gaussian_rejects_bad_covariance():
    with pytest.raises(SamplerError, match="PSD"):
        sample_gaussian(np.array([[1.0, 2.0], [2.0, 1.0]]), 10, RngStream(0))
    with pytest.raises(SamplerError, match="symmetric"):
        sample_gaussian(np.array([[1.0, 0.5], [0.0, 1.0]]), 10, RngStream(0))
    # singular but PSD is fine
    g = sample_gaussian(np.array([[0.0, 0.0], [0.0, 1.0]]), 10, RngStream(0))
    np.testing.assert_array_equal(g[:, 0], 0.0)


# -------------------------------------------------------------------- paths


def test_sample_path_structure(nonsym3):
    rng = np.random.default_rng(4)
    for _ in range(200):
        path, field = sample_path(nonsym3, "p", rng)
        assert path.cause == "killed"
        assert all(h > 0 for _, h in path.steps)
        idx = [nonsym3.idx(s) for s, _ in path.steps]
        assert all(nonsym3.rates[a, b] > 0 for a, b in zip(idx, idx[1:]))
        # additivity: the field is the sum of per-step contributions
        want = np.zeros(3)
        for s, h in path.steps:
            want[nonsym3.idx(s)] += h / nonsym3.m[nonsym3.idx(s)]
        np.testing.assert_allclose(field, want, rtol=1e-14)
        assert path.lifetime == pytest.approx(sum(h for _, h in path.steps))


def test_single_state_local_time_is_exponential():
    kappa = 1.5
    L = sample_local_times(single_state(kappa), "s", 100_000, RngStream(6))[:, 0]
    _within(L, 1 / kappa)
    _within(L**2, 2 / kappa**2)
    # P(L > 1/kappa) = e^{-1}
    _within((L > 1 / kappa).astype(float), math.exp(-1))


def test_k2_local_time_moments(k2):
    L = sample_local_times(k2, "a", 100_000, RngStream(7))
    _within(L[:, 0], 2 / 3)
    _within(L[:, 0] ** 2, 8 / 9)
    _within(L[:, 0] * L[:, 1], mo.lt_moment_start(potential(k2), "a", ["a", "b"]))


def test_recurrent_path_rejected(c3):
    with pytest.raises(SamplerError):
        sample_path(c3, "0", RngStream(0))
    with pytest.raises(SamplerError):
        sample_local_times(c3, "0", 5, RngStream(0))


# ------------------------------------------------------------------- bridges


def test_bridge_dynamics_is_a_generator(nonsym3):
    h, rates, kill = bridge_dynamics(nonsym3, "r")
    q = nonsym3.generator()
    # diagonal is unchanged: sum of new jump rates plus new killing
    np.testing.assert_allclose(rates.sum(axis=1) + kill, -np.diag(q), atol=1e-12)
    assert kill[nonsym3.idx("r")] > 0 and np.count_nonzero(kill) == 1


def test_k2_bridge_moments(k2):
    u = potential(k2)
    L = sample_bridge_local_times(k2, "a", "b", 100_000, RngStream(8))
    norm = u.value("a", "b")
    _within(L[:, 1], mo.lt_moment_bridge(u, "a", "b", ["b"]) / norm)
    _within(L[:, 0] * L[:, 1], mo.lt_moment_bridge(u, "a", "b", ["a", "b"]) / norm)


def test_nonsymmetric_bridge_moments(nonsym3):
    u = potential(nonsym3)
    L = sample_bridge_local_times(nonsym3, "q", "p", 100_000, RngStream(9))
    norm = u.value("q", "p")
    for pts in (["p"], ["r"], ["q", "r"], ["p", "p"]):
        vals = np.prod([L[:, u.idx(s)] for s in pts], axis=0)
        _within(vals, mo.lt_moment_bridge(u, "q", "p", pts) / norm)


def test_single_state_bridge_second_moment():
    model = single_state(2.0)
    u = potential(model).value("s", "s")
    L = sample_bridge_local_times(model, "s", "s", 100_000, RngStream(10))[:, 0]
    _within(L**2, 2 * u**2)
    assert sample_bridge(model, "s", "s", RngStream(1)).shape == (1,)


def test_bridge_unreachable_target():
    rates = np.array([[0.0, 1.0], [0.0, 0.0]])
    model = ChainModel(("a", "b"), [1.0, 1.0], rates, [1.0, 1.0])
    with pytest.raises(SamplerError, match="unreachable"):
        sample_bridge_local_times(model, "b", "a", 10, RngStream(0))


# ---------------------------------------------------------------- tau fields


def test_tau_field_zero_level(c3):
    f = sample_inverse_lt_field(c3, "0", 0.0, RngStream(0))
    np.testing.assert_array_equal(f, 0.0)


def test_tau_field_moments(c3):
    fields, life = sample_inverse_lt_fields(c3, "0", 1.0, 100_000, RngStream(12))
    np.testing.assert_array_equal(fields[:, 0], 1.0)
    _within(fields[:, 1], 1.0)
    _within(fields[:, 1] * fields[:, 2], 1 + 2 / 3)
    _within(np.exp(-life), inverse_lt_laplace(c3, "0", 1.0, 1.0))
    assert np.all(life >= 1.0)  # m = 1, so tau(t) >= L^{z0} = t


def test_tau_field_truncation_is_exact(c3):
    # unpinned occupation at z0 already equals t up to rounding
    t = 0.37
    fields, life = sample_inverse_lt_fields(c3, "0", t, 2000, RngStream(13))
    np.testing.assert_allclose(life, fields.sum(axis=1), rtol=1e-12)


def test_tau_field_needs_recurrence(k2):
    with pytest.raises(SamplerError):
        sample_inverse_lt_fields(k2, "a", 1.0, 10, RngStream(0))


# -------------------------------------------------------------- soups, Poisson


def test_halfint_soup(k2):
    u = potential(k2)
    f2 = sample_halfint_soup_field(u, 2, 100_000, RngStream(14))
    _within(f2[:, 0], 2 / 3)
    f1 = sample_halfint_soup_field(u, 1, 400_000, RngStream(15))
    est, se = mean_and_se((f1[:, 0] - f1[:, 0].mean()) * (f1[:, 1] - f1[:, 1].mean()))
    assert abs(est - 1 / 18) <= 3 * se
    single = sample_halfint_soup_field(np.array([[0.8]]), 1, 100_000, RngStream(16))
    _within(single[:, 0], 0.4)
    with pytest.raises(SamplerError):
        sample_halfint_soup_field(u, 0, 10, RngStream(0))


def test_poisson_sampler():
    assert not sample_poisson_functional([1.0, 2.0], 0.0, 1000, RngStream(0)).any()
    n = sample_poisson_functional([1.0], 2.0, 200_000, RngStream(17))[:, 0].astype(float)
    _within(n, 2.0)
    _within((n - 2.0) ** 2, 2.0)
    n1 = sample_poisson_functional([1.0], 1.0, 1_000_000, RngStream(18))[:, 0]
    _within(np.exp(n1.astype(float)), math.exp(math.e - 1))
    with pytest.raises(SamplerError):
        sample_poisson_functional([1.0], -1.0, 10, RngStream(0))
    with pytest.raises(SamplerError):
        sample_poisson_functional([np.inf], 1.0, 10, RngStream(0))


def test_rayknight_sampled_moments_match_engine(c3):
    k = killed_potential(c3, "0")
    fields, _ = sample_inverse_lt_fields(c3, "0", 0.6, 100_000, RngStream(19))
    _within(fields[:, 2] ** 2, mo.rayknight_lhs_moment(k, 0.6, ["2", "2"]))


def test_csv_dump():
    text = fields_to_csv(("a", "b"), np.array([[1.0, 2.0], [3.0, 4.5]]))
    assert text.splitlines() == ["trial,a,b", "0,1.0,2.0", "1,3.0,4.5"]
