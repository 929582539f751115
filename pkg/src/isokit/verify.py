"""Theorem harness: pair independent engines and emit structured reports.

Each ``verify_*`` function returns a list of :class:`VerificationReport`.
Exact checks pass when the absolute or relative error is within tolerance;
Monte Carlo checks pass when the estimate lies within three standard errors
of the analytic value.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mgf, moments
from .combinat import alpha_permanent
from .kernels import inverse_lt_laplace, killed_potential, potential, tau_potential
from .model import ChainModel, dumps_model, random_reversible_model
from .sample import (
    RngStream,
    mean_and_se,
    sample_gaussian,
    sample_inverse_lt_fields,
    sample_poisson_functional,
)

REPORT_SCHEMA = "isokit-report/1"
TOL_ABS = 1e-10
TOL_REL = 1e-8
MC_SIGMAS = 3.0
_REGRESSION_TAG = 20

IDENTITIES = ("dynkin", "eisenbaum", "rayknight", "soup", "permanental", "interlacement", "poisson")


class VerifyError(ValueError):
    """A precondition of a verification failed."""


@dataclass(frozen=True)
class Tolerance:
    abs: float = TOL_ABS
    rel: float = TOL_REL
    sigmas: float = MC_SIGMAS

    def __post_init__(self):
        eps = np.finfo(float).eps
        if self.abs < eps or self.rel < eps:
            raise VerifyError("tolerances must be at least machine epsilon")
        if not self.sigmas > 0:
            raise VerifyError("the Monte Carlo gate must be positive")


DEFAULT_TOL = Tolerance()


@dataclass
class VerificationReport:
    identity: str
    route: str
    params: dict
    lhs: float
    rhs: float
    abs_err: float
    rel_err: float
    tol_abs: float | None
    tol_rel: float | None
    mc_standard_error: float | None
    passed: bool
    runtime: float | None = field(default=None, compare=False)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime")
        return d

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f" se={self.mc_standard_error:.3e}" if self.mc_standard_error is not None else ""
        return (
            f"{verdict} {self.identity}/{self.route} {json.dumps(self.params, sort_keys=True)} "
            f"lhs={self.lhs:.12g} rhs={self.rhs:.12g} err={self.abs_err:.3e}{extra}"
        )


def _errors(lhs: float, rhs: float) -> tuple[float, float]:
    err = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs))
    return err, (err / scale if scale > 0 else 0.0)


def exact_report(identity, route, params, lhs, rhs, tol: Tolerance = DEFAULT_TOL):
    lhs, rhs = float(lhs), float(rhs)
    err, rel = _errors(lhs, rhs)
    ok = bool(err <= tol.abs or rel <= tol.rel)
    return VerificationReport(identity, route, params, lhs, rhs, err, rel, tol.abs, tol.rel, None, ok)


def mc_report(identity, route, params, estimate, se, target, tol: Tolerance = DEFAULT_TOL):
    estimate, target, se = float(estimate), float(target), float(se)
    err, rel = _errors(estimate, target)
    ok = bool(err <= tol.sigmas * se)
    return VerificationReport(identity, route, params, estimate, target, err, rel, None, None, se, ok)


def _subset_sum(k: int, term) -> float:
    """sum over subsets A of range(k) of term(A, complement of A)."""
    out = []
    for mask in range(1 << k):
        a = [i for i in range(k) if mask >> i & 1]
        b = [i for i in range(k) if not mask >> i & 1]
        out.append(term(a, b))
    return math.fsum(out)


def _pick(points, idx):
    return [points[i] for i in idx]


def _require_symmetric_transient(model: ChainModel, what: str):
    if not model.symmetric:
        raise VerifyError(f"{what} needs a symmetric model")
    if model.recurrent:
        raise VerifyError(f"{what} needs a transient model")


def default_loads(C, radii=(0.3, 0.2)) -> list[np.ndarray]:
    """Deterministic loads scaled to the given spectral radii of C Lam."""
    mat = C.entries if hasattr(C, "entries") else np.asarray(C)
    n = mat.shape[0]
    shapes = [np.ones(n), np.arange(1, n + 1, dtype=float) / n]
    out = []
    for shape, r in zip(shapes, radii):
        rho = mgf.spectral_radius(mat, shape)
        out.append(shape * (r / rho) if rho > 0 else shape * 0.0)
    return out


def _load_param(C, lam) -> dict:
    return {s: float(v) for s, v in zip(C.states, lam)}


# ------------------------------------------------------------------ Dynkin


def verify_dynkin(model: ChainModel, x, y, max_order: int = 4, loads=None, tol=DEFAULT_TOL):
    _require_symmetric_transient(model, "dynkin")
    u = potential(model)
    ix, iy = u.idx(x), u.idx(y)
    out = []
    for pts in moments.multisets(u.states, max_order):
        pts = list(pts)
        k = len(pts)
        lhs = _subset_sum(
            k,
            lambda a, b: moments.lt_moment_bridge(u, x, y, _pick(pts, a))
            * moments.gauss_square_moment(u, _pick(pts, b)),
        )
        rhs = moments.gauss_pair_square_moment(u, x, y, pts)
        params = {"x": str(x), "y": str(y), "points": pts}
        out.append(exact_report("dynkin", "moment", params, lhs, rhs, tol))
        factors = [[(1.0, (ix,))], [(1.0, (iy,))]] + [moments.square_factor(i) for i in u.indices(pts)]
        oracle = moments.gauss_poly_expectation(u, factors)
        out.append(exact_report("dynkin", "oracle", params, rhs, oracle, tol))
    for lam in loads if loads is not None else default_loads(u):
        params = {"x": str(x), "y": str(y), "load": _load_param(u, lam)}
        res = mgf.bridge_mgf(u, lam, x, y)
        out.append(exact_report("dynkin", "mgf-series", params, res, mgf.bridge_mgf_series(u, lam, x, y), tol))
        out.append(
            exact_report("dynkin", "mgf-gaussian", params, res, mgf.bridge_mgf_precision(u, lam, x, y), tol)
        )
    return out


# --------------------------------------------------------------- Eisenbaum


def verify_eisenbaum(model: ChainModel, x, s: float, max_order: int = 3, loads=None, tol=DEFAULT_TOL):
    _require_symmetric_transient(model, "eisenbaum")
    if s == 0:
        raise VerifyError("the shift s must be nonzero")
    u = potential(model)
    ix = u.idx(x)
    out = []
    for pts in moments.multisets(u.states, max_order):
        pts = list(pts)
        k = len(pts)
        idx = u.indices(pts)
        lhs = _subset_sum(
            k,
            lambda a, b: moments.lt_moment_start(u, x, _pick(pts, a))
            * moments.shifted_square_moment(u, s, _pick(pts, b)),
        )
        squares = [moments.square_factor(i, s) for i in idx]
        rhs = moments.gauss_poly_expectation(u, [[(1.0, ()), (1.0 / s, (ix,))]] + squares)
        params = {"x": str(x), "s": float(s), "points": pts}
        out.append(exact_report("eisenbaum", "moment", params, lhs, rhs, tol))
        shifted = moments.shifted_square_moment(u, s, pts)
        out.append(
            exact_report("eisenbaum", "oracle", params, shifted, moments.gauss_poly_expectation(u, squares), tol)
        )
    for lam in loads if loads is not None else default_loads(u):
        params = {"x": str(x), "s": float(s), "load": _load_param(u, lam)}
        res = mgf.start_mgf(u, lam, x)
        out.append(exact_report("eisenbaum", "mgf-series", params, res, mgf.start_mgf_series(u, lam, x), tol))
        # tilted Gaussian: E[(1 + G_x/s) e^{sum lam (G+s)^2/2}] / E[e^{sum lam (G+s)^2/2}]
        cb = mgf.cbar(u, lam)
        ratio = 1.0 + float((cb @ (np.asarray(lam) * s))[ix]) / s
        out.append(exact_report("eisenbaum", "mgf-gaussian", params, res, ratio, tol))
    return out


# -------------------------------------------------------------- Ray-Knight


def verify_rayknight(
    model: ChainModel,
    z0,
    t: float,
    max_order: int = 4,
    mc_trials: int = 0,
    rng: RngStream | None = None,
    loads=None,
    tau_mean: float = 0.7,
    threads: int = 1,
    tol=DEFAULT_TOL,
):
    if not model.recurrent:
        raise VerifyError("rayknight needs a recurrent model")
    if not model.symmetric:
        raise VerifyError("rayknight needs a symmetric model")
    if t < 0:
        raise VerifyError("level t must be nonnegative")
    uT0 = killed_potential(model, z0)
    s = math.sqrt(2 * t)
    out = []
    for pts in moments.multisets(uT0.states, max_order):
        pts = list(pts)
        k = len(pts)
        params = {"z0": str(z0), "t": float(t), "points": pts}
        lhs = _subset_sum(
            k,
            lambda a, b: moments.rayknight_lhs_moment(uT0, t, _pick(pts, a))
            * moments.gauss_square_moment(uT0, _pick(pts, b)),
        )
        rhs = moments.shifted_square_moment(uT0, s, pts)
        out.append(exact_report("rayknight", "moment", params, lhs, rhs, tol))
        oracle = moments.gauss_poly_expectation(uT0, [moments.square_factor(i, s) for i in uT0.indices(pts)])
        out.append(exact_report("rayknight", "oracle", params, rhs, oracle, tol))
        if k:
            direct = moments.rayknight_lhs_moment(uT0, t, pts)
            out.append(
                exact_report(
                    "rayknight", "excursion-moment", params, direct,
                    moments.rayknight_excursion_moment(uT0, t, pts), tol,
                )
            )
            # average over an exponential level against the tau-killed chain
            coeffs = moments.rayknight_polynomial(uT0, pts)
            avg = moments.rayknight_exponential_average(coeffs, tau_mean)
            tau_k = tau_potential(uT0, tau_mean)
            out.append(
                exact_report(
                    "rayknight", "tau-moment", dict(params, tau_mean=tau_mean), avg,
                    moments.lt_moment_start(tau_k, z0, pts), tol,
                )
            )
    for lam in loads if loads is not None else default_loads(uT0):
        params = {"z0": str(z0), "t": float(t), "load": _load_param(uT0, lam)}
        res = mgf.rayknight_mgf(uT0, lam, t)
        out.append(exact_report("rayknight", "mgf-series", params, res, mgf.rayknight_mgf_series(uT0, lam, t), tol))
        excursion = math.exp(t * mgf.excursion_mgf_exponent(uT0, lam))
        out.append(exact_report("rayknight", "mgf-excursion", params, res, excursion, tol))
        out.append(
            exact_report("rayknight", "mgf-gaussian", params, res, mgf.rayknight_gaussian_ratio(uT0, lam, t), tol)
        )
    if mc_trials:
        if rng is None:
            raise VerifyError("Monte Carlo route needs an RngStream")
        out.extend(_rayknight_mc(model, uT0, z0, t, mc_trials, rng, threads, tol))
    return out


def _rayknight_mc(model, uT0, z0, t, trials, rng, threads, tol):
    out = []
    fields, life = sample_inverse_lt_fields(model, z0, t, trials, rng.child("tau-field"), threads)
    k0 = model.idx(z0)
    others = [i for i in range(model.n) if i != k0]
    base = {"z0": str(z0), "t": float(t), "trials": int(trials)}
    for i in others:
        est, se = mean_and_se(fields[:, i])
        target = moments.rayknight_lhs_moment(uT0, t, [model.states[i]])
        out.append(mc_report("rayknight", "mc-moment", dict(base, points=[model.states[i]]), est, se, target, tol))
    for i, j in itertools.combinations_with_replacement(others, 2):
        pts = [model.states[i], model.states[j]]
        est, se = mean_and_se(fields[:, i] * fields[:, j])
        target = moments.rayknight_lhs_moment(uT0, t, pts)
        out.append(mc_report("rayknight", "mc-moment", dict(base, points=pts), est, se, target, tol))
    # e^{sum lam (L + eta^2/2)} against e^{sum lam (eta + sqrt(2t))^2/2}
    lam = np.zeros(model.n)
    lam[others] = 1.0
    lam *= 0.2 / mgf.spectral_radius(uT0, lam)
    eta = sample_gaussian(uT0, trials, rng.child("eta"), threads)
    vals = np.exp((fields + 0.5 * eta * eta) @ lam)
    est, se = mean_and_se(vals)
    target = mgf.shifted_square_mgf(uT0, lam, math.sqrt(2 * t))
    out.append(mc_report("rayknight", "mc-exponential", dict(base, load=_load_param(uT0, lam)), est, se, target, tol))
    beta = 1.0
    est, se = mean_and_se(np.exp(-beta * life))
    target = inverse_lt_laplace(model, z0, beta, t)
    out.append(mc_report("rayknight", "mc-inverse-local-time", dict(base, beta=beta), est, se, target, tol))
    return out


# -------------------------------------------------------------------- soup


def verify_soup_isomorphism(model: ChainModel, alphas=(0.5, 1.0, 2.5), x0=None, max_order: int = 4, tol=DEFAULT_TOL):
    if model.recurrent:
        raise VerifyError("soup isomorphism needs a transient model")
    u = potential(model)
    x0 = u.states[0] if x0 is None else str(x0)
    out = []
    for alpha in alphas:
        for pts in moments.multisets(u.states, max_order):
            pts = list(pts)
            k = len(pts)
            params = {"alpha": float(alpha), "x0": x0, "points": pts}
            lhs = moments.soup_field_moment(u, alpha, [x0] + pts, route="permanent")
            rhs = alpha * _subset_sum(
                k,
                lambda a, b: moments.lt_moment_bridge(u, x0, x0, _pick(pts, a))
                * moments.soup_field_moment(u, alpha, _pick(pts, b), route="partition"),
            )
            out.append(exact_report("soup", "moment", params, lhs, rhs, tol))
            part = moments.soup_field_moment(u, alpha, [x0] + pts, route="partition")
            out.append(exact_report("soup", "permanent", params, lhs, part, tol))
    return out


# ------------------------------------------------------------- permanental


def verify_permanental_gaussian_pairing(model: ChainModel, x, y, max_total: int = 6, tol=DEFAULT_TOL):
    if model.recurrent:
        raise VerifyError("permanental pairing needs a transient model")
    u = potential(model)
    uxy, uyx = u.value(x, y), u.value(y, x)
    prod = uxy * uyx
    if prod < 0:
        raise VerifyError(f"u(x,y) u(y,x) = {prod:.3e} is negative")
    cov = np.array([[u.value(x, x), math.sqrt(prod)], [math.sqrt(prod), u.value(y, y)]])
    out = []
    for total in range(1, max_total + 1):
        for j in range(total, -1, -1):
            k = total - j
            lhs = alpha_permanent(u, [x] * j + [y] * k, 0.5)
            rhs = moments.gauss_moment(cov, [0] * (2 * j) + [1] * (2 * k)) / 2**total
            params = {"x": str(x), "y": str(y), "j": j, "k": k}
            out.append(exact_report("permanental", "moment", params, lhs, rhs, tol))
    return out


# ----------------------------------------------------------- interlacement


def verify_interlacement(model: ChainModel, nu, t: float, delta: float, max_order: int = 3, tol=DEFAULT_TOL):
    _require_symmetric_transient(model, "interlacement")
    u = potential(model)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (u.n,) or np.any(nu < 0):
        raise VerifyError("nu must be a nonnegative weight per state")
    try:
        lhs, rhs = mgf.interlacement_mgf_check(u, nu, t, delta)
    except mgf.LoadError as exc:
        raise VerifyError(str(exc)) from exc
    base = {"nu": _load_param(u, nu), "t": float(t)}
    out = [exact_report("interlacement", "mgf", dict(base, delta=float(delta)), lhs, rhs, tol)]
    # measure family: nu itself and every point mass
    family = {"nu": nu}
    for i, st in enumerate(u.states):
        e = np.zeros(u.n)
        e[i] = 1.0
        family[f"delta_{st}"] = e
    s = math.sqrt(2 * t)
    for names in moments.multisets(list(family), max_order, min_order=1):
        meas = [family[n] for n in names]
        k = len(meas)
        lhs = _subset_sum(
            k,
            lambda a, b: moments.interlacement_field_moment(u, t, _pick(meas, a))
            * moments.wick_square_moment(u, _pick(meas, b)),
        )
        rhs = moments.interlacement_gaussian_moment(u, t, meas)
        params = dict(base, measures=list(names))
        out.append(exact_report("interlacement", "moment", params, lhs, rhs, tol))
        oracle = moments.gauss_poly_expectation(u, [moments.wick_factor(u.entries, m, s, t) for m in meas])
        out.append(exact_report("interlacement", "oracle", params, rhs, oracle, tol))
    return out


# ----------------------------------------------------------------- Poisson


def verify_poisson_facts(
    weights=(1.0, 0.5),
    alpha: float = 1.0,
    rng: RngStream | None = None,
    samples: int = 1_000_000,
    tol=DEFAULT_TOL,
):
    """Master, moment and Palm formulas for a Poisson process on finitely many atoms."""
    if rng is None:
        raise VerifyError("Poisson checks need an RngStream")
    mu = np.asarray(weights, dtype=float)
    counts = sample_poisson_functional(mu, alpha, samples, rng.child("poisson")).astype(float)
    base = {"weights": [float(w) for w in mu], "alpha": float(alpha), "samples": int(samples)}
    out = []

    z = 0.5
    est, se = mean_and_se(np.exp(z * counts.sum(axis=1)))
    target = math.exp(alpha * (math.exp(z) - 1) * mu.sum())
    out.append(mc_report("poisson", "master-set", dict(base, z=z), est, se, target, tol))

    f = np.array([0.3, -0.5] + [0.1] * (len(mu) - 2))[: len(mu)]
    est, se = mean_and_se(np.exp(counts @ f))
    target = math.exp(alpha * float(mu @ (np.exp(f) - 1)))
    out.append(mc_report("poisson", "master", dict(base, f=f.tolist()), est, se, target, tol))

    f1 = np.linspace(1.0, 2.0, len(mu))
    f2 = np.linspace(0.5, -1.0, len(mu))
    est, se = mean_and_se((counts @ f1) * (counts @ f2))
    fs = [f1, f2]
    target = moments.poisson_moment([0, 1], alpha, lambda b: float(mu @ np.prod([fs[i] for i in b], axis=0)))
    out.append(mc_report("poisson", "moment", dict(base, f1=f1.tolist(), f2=f2.tolist()), est, se, target, tol))

    # Palm: E sum_w f(w) G(N) = alpha int f(w) E G(N + delta_w) mu(dw), G(N) = N(g)^2
    pf = np.linspace(1.0, 0.5, len(mu))
    g = np.linspace(0.7, -0.4, len(mu))
    est, se = mean_and_se((counts @ pf) * (counts @ g) ** 2)
    mean_g, var_g = alpha * float(mu @ g), alpha * float(mu @ (g * g))
    target = alpha * math.fsum(mu[i] * pf[i] * (var_g + (mean_g + g[i]) ** 2) for i in range(len(mu)))
    out.append(mc_report("poisson", "palm", dict(base, f=pf.tolist(), g=g.tolist()), est, se, target, tol))
    return out


# --------------------------------------------------------------- regression


def randomized_regression(seed: int, count: int = 20, orders=(4, 3, 4), tol=DEFAULT_TOL, log=None):
    """Exact checks on ``count`` random reversible models with 3 to 5 states."""
    root = RngStream(seed, (_REGRESSION_TAG,))
    out = []
    for trial in range(count):
        g = root.child(trial).generator()
        n = int(g.integers(3, 6))
        model = random_reversible_model(n, g, rate_range=(0.1, 2.0), kill_range=(0.2, 1.0))
        x, y = (model.states[int(i)] for i in g.integers(0, n, size=2))
        reports = verify_dynkin(model, x, y, orders[0], tol=tol)
        for s in (0.5, 1.0, 2.0):
            reports += verify_eisenbaum(model, x, s, orders[1], tol=tol)
        reports += verify_soup_isomorphism(model, x0=x, max_order=orders[2], tol=tol)
        for r in reports:
            r.params = dict(r.params, regression_trial=trial, n_states=n)
        if not all(r.passed for r in reports):
            print(f"regression trial {trial} failed on model:\n{dumps_model(model)}", file=log or sys.stderr)
        out.extend(reports)
    return out


def recurrent_regression(seed: int, sizes=(4, 5, 6), t: float = 1.0, max_order: int = 4, tol=DEFAULT_TOL):
    """Analytic Ray-Knight routes on random reversible recurrent cycles."""
    root = RngStream(seed, (_REGRESSION_TAG, 1))
    out = []
    for n in sizes:
        model = random_reversible_model(n, root.child(n).generator(), recurrent=True, cycle=True)
        reports = verify_rayknight(model, model.states[0], t, max_order, tol=tol)
        for r in reports:
            r.params = dict(r.params, cycle_states=n)
        out.extend(reports)
    return out


# ------------------------------------------------------------------ output


def timed(fn, *args, **kwargs) -> list[VerificationReport]:
    start = time.perf_counter()
    reports = fn(*args, **kwargs)
    per = (time.perf_counter() - start) / max(len(reports), 1)
    for r in reports:
        r.runtime = per
    return reports


def sort_reports(reports) -> list[VerificationReport]:
    """Stable order by identity name; routes keep their generation order."""
    return sorted(reports, key=lambda r: r.identity)


def reports_to_json(reports, meta: dict, include_runtime: bool = False) -> str:
    body = {
        "schema": REPORT_SCHEMA,
        "reports": [r.to_dict(include_runtime) for r in reports],
    }
    text = json.dumps(body, indent=1)
    # metadata goes on the final line, after every report
    return text[:-2] + ',\n "meta": ' + json.dumps(meta, sort_keys=True) + "\n}\n"


def reports_to_csv(reports, footer: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["identity", "route", "params", "lhs", "rhs", "abs_err", "rel_err", "mc_se", "pass"])
    for r in reports:
        se = "" if r.mc_standard_error is None else repr(r.mc_standard_error)
        w.writerow(
            [
                r.identity,
                r.route,
                json.dumps(r.params, sort_keys=True),
                repr(r.lhs),
                repr(r.rhs),
                repr(r.abs_err),
                repr(r.rel_err),
                se,
                "pass" if r.passed else "fail",
            ]
        )
    buf.write(footer.rstrip("\n") + "\n")
    return buf.getvalue()


__all__ = [
    "IDENTITIES",
    "REPORT_SCHEMA",
    "Tolerance",
    "VerificationReport",
    "VerifyError",
    "exact_report",
    "mc_report",
    "verify_dynkin",
    "verify_eisenbaum",
    "verify_rayknight",
    "verify_soup_isomorphism",
    "verify_permanental_gaussian_pairing",
    "verify_interlacement",
    "verify_poisson_facts",
    "randomized_regression",
    "recurrent_regression",
    "reports_to_json",
    "reports_to_csv",
    "sort_reports",
    "timed",
]
