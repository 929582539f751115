import json

import numpy as np
import pytest

from isokit import moments, verify
from isokit.kernels import from_matrix
from isokit.sample import RngStream
from isokit.verify import (
    VerifyError,
    exact_report,
    mc_report,
    reports_to_csv,
    reports_to_json,
    verify_dynkin,
    verify_eisenbaum,
    verify_interlacement,
    verify_permanental_gaussian_pairing,
    verify_poisson_facts,
    verify_rayknight,
    verify_soup_isomorphism,
)


def _all_pass(reports):
    bad = [r.line() for r in reports if not r.passed]
    assert not bad, "\n".join(bad[:10])
    assert reports


def _find(reports, route, **params):
    for r in reports:
        if r.route == route and all(r.params.get(k) == v for k, v in params.items()):
            return r
    raise LookupError(route)


def test_report_pass_rules():
    assert exact_report("i", "r", {}, 1.0, 1.0 + 5e-11).passed
    assert exact_report("i", "r", {}, 1e6, 1e6 * (1 + 5e-9)).passed  # relative gate
    assert not exact_report("i", "r", {}, 1.0, 1.0 + 1e-6).passed
    assert exact_report("i", "r", {}, 0.0, 0.0).rel_err == 0.0
    assert mc_report("i", "r", {}, 1.0, 0.1, 1.29).passed
    assert not mc_report("i", "r", {}, 1.0, 0.1, 1.31).passed
    with pytest.raises(VerifyError):
        verify.Tolerance(abs=1e-20)


def test_dynkin_k2(k2):
    reps = verify_dynkin(k2, "a", "a", 3)
    _all_pass(reps)
    empty = _find(reps, "moment", points=[])
    assert empty.lhs == pytest.approx(2 / 3) and empty.rhs == pytest.approx(2 / 3)
    one = _find(reps, "moment", points=["a"])
    assert one.rhs == pytest.approx(3 * (2 / 3) ** 2 / 2)


def test_dynkin_preconditions(nonsym3, c3):
    with pytest.raises(VerifyError):
        verify_dynkin(nonsym3, "p", "q")
    with pytest.raises(VerifyError):
        verify_dynkin(c3, "0", "1")


def test_harness_detects_a_wrong_engine(k2, monkeypatch):
    real = moments.gauss_square_moment
    monkeypatch.setattr(moments, "gauss_square_moment", lambda C, pts: real(C, pts) * (1 + 0.01 * len(pts)))
    reps = verify_dynkin(k2, "a", "b", 2)
    assert any(not r.passed for r in reps)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_eisenbaum_k2(k2, s):
    _all_pass(verify_eisenbaum(k2, "b", s, 3))


def test_eisenbaum_needs_shift(k2):
    with pytest.raises(VerifyError):
        verify_eisenbaum(k2, "a", 0.0)


def test_rayknight_c3(c3):
    reps = verify_rayknight(c3, "0", 1.0, 3, mc_trials=100_000, rng=RngStream(7))
    _all_pass(reps)
    two = _find(reps, "excursion-moment", points=["1", "2"])
    assert two.lhs == pytest.approx(1 + 2 / 3)
    assert {r.route for r in reps} >= {
        "moment", "oracle", "excursion-moment", "tau-moment",
        "mgf-series", "mgf-excursion", "mgf-gaussian",
        "mc-moment", "mc-exponential", "mc-inverse-local-time",
    }


def test_rayknight_level_zero_is_gaussian(c3):
    reps = verify_rayknight(c3, "0", 0.0, 2)
    _all_pass(reps)
    r = _find(reps, "moment", points=["1", "2"])
    assert r.rhs == pytest.approx(moments.gauss_square_moment(np.array([[0, 0, 0], [0, 2, 1], [0, 1, 2]]) / 3, [1, 2]))


def test_rayknight_preconditions(k2, c3):
    with pytest.raises(VerifyError):
        verify_rayknight(k2, "a", 1.0)
    with pytest.raises(VerifyError):
        verify_rayknight(c3, "0", 1.0, 1, mc_trials=10)


@pytest.mark.parametrize("fixture", ["k2", "nonsym3"])
def test_soup(fixture, request):
    model = request.getfixturevalue(fixture)
    reps = verify_soup_isomorphism(model, max_order=3)
    _all_pass(reps)
    a = _find(reps, "moment", points=[], alpha=2.5)
    assert a.lhs == pytest.approx(2.5 * from_matrix(np.zeros(1)).entries.sum() + a.rhs)


def test_soup_rejects_recurrent(c3):
    with pytest.raises(VerifyError):
        verify_soup_isomorphism(c3)


def test_permanental(k2, nonsym3):
    _all_pass(verify_permanental_gaussian_pairing(k2, "a", "b"))
    reps = verify_permanental_gaussian_pairing(nonsym3, "p", "r")
    _all_pass(reps)
    assert len(reps) == 27  # all (j, k) with 1 <= j + k <= 6


def test_permanental_negative_product(k2, monkeypatch):
    neg = from_matrix(np.array([[1.0, -0.5], [0.5, 1.0]]), states=("a", "b"))
    monkeypatch.setattr(verify, "potential", lambda model: neg)
    with pytest.raises(VerifyError, match="negative"):
        verify_permanental_gaussian_pairing(k2, "a", "b")


def test_interlacement(k2):
    reps = verify_interlacement(k2, [1.0, 1.0], 0.5, 0.2)
    _all_pass(reps)
    _all_pass(verify_interlacement(k2, [1.0, 1.0], 0.0, 0.2, max_order=2))
    with pytest.raises(VerifyError):
        verify_interlacement(k2, [1.0, 1.0], 0.5, 2.0)
    with pytest.raises(VerifyError):
        verify_interlacement(k2, [1.0], 0.5, 0.2)


def test_poisson_facts():
    reps = verify_poisson_facts(rng=RngStream(7), samples=200_000)
    _all_pass(reps)
    assert [r.route for r in reps] == ["master-set", "master", "moment", "palm"]
    with pytest.raises(VerifyError):
        verify_poisson_facts()


def test_regression_prints_failing_models(monkeypatch, capsys):
    monkeypatch.setattr(verify, "verify_soup_isomorphism", lambda *a, **k: [exact_report("soup", "x", {}, 0, 1)])
    reps = verify.randomized_regression(1, count=1, orders=(1, 1, 1))
    assert any(not r.passed for r in reps)
    assert '"jump_rates"' in capsys.readouterr().err


def test_json_and_csv_writers(k2):
    reps = verify.timed(verify_dynkin, k2, "a", "b", 1)
    assert all(r.runtime is not None for r in reps)
    meta = {"seed": 1}
    text = reports_to_json(reps, meta)
    assert text == reports_to_json(reps, meta)
    obj = json.loads(text)
    assert obj["schema"] == "isokit-report/1"
    assert list(obj) == ["schema", "reports", "meta"]
    assert "runtime" not in obj["reports"][0]
    assert text.rstrip().splitlines()[-2].startswith(' "meta"')
    csv_text = reports_to_csv(reps, "# footer")
    assert csv_text.splitlines()[0].startswith("identity,route,params")
    assert csv_text.splitlines()[-1] == "# footer"
