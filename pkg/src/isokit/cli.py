"""Command-line front end: ``isokit verify | kernel | sample``.

Exit codes: 0 when every selected check passes, 1 when any check fails,
2 on usage or validation errors.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, sample, verify
from .kernels import KernelError, kernel_from_spec, potential
from .mgf import LoadError
from .model import ChainModel, ModelError, load_model
from .sample import RngStream, SamplerError

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
FIXTURES = ("k2.json", "c3.json", "nonsym3.json")
SAMPLERS = ("path", "bridge", "tau-field", "gaussian", "soup-halfint")
STOCHASTIC = {"rayknight", "poisson", "all"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("isokit") / "fixtures" / name))


def _model_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def footer(seed, hashes) -> str:
    seed_s = "-" if seed is None else str(seed)
    return f"# isokit {__version__} seed={seed_s} model-sha256={','.join(hashes) or '-'}"


def _write(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _state(model: ChainModel, name, default_index: int = 0) -> str:
    if name is None:
        return model.states[min(default_index, model.n - 1)]
    model.idx(name)  # raises ModelError for unknown names
    return str(name)


def _measure(model: ChainModel, text) -> np.ndarray:
    """Parse ``state=weight,...``; default is weight 1 on every state."""
    if text is None:
        return np.ones(model.n)
    nu = np.zeros(model.n)
    for item in text.split(","):
        name, sep, w = item.partition("=")
        try:
            nu[model.idx(name.strip())] = float(w)
        except ValueError:
            sep = ""
        if not sep:
            raise UsageError(f"measure entries look like state=weight, got {item!r}")
    return nu


# ------------------------------------------------------------------ verify


def _jobs_for_model(model: ChainModel, args, seed_stream: RngStream | None, tol):
    """(label, callable) pairs for the identities selected on one model."""
    want = verify.IDENTITIES if args.identity == "all" else (args.identity,)
    auto = args.identity == "all"
    jobs = []

    def add(name, fn):
        jobs.append((name, fn))

    transient_sym = model.symmetric and not model.recurrent
    if "dynkin" in want and (transient_sym or not auto):
        x = _state(model, args.x)
        y = _state(model, args.y) if args.y is not None else x
        add("dynkin", lambda: verify.verify_dynkin(model, x, y, args.order or 4, tol=tol))
    if "eisenbaum" in want and (transient_sym or not auto):
        x = _state(model, args.x)
        shifts = _floats(args.s) if args.s else [0.5, 1.0, 2.0]

        def eis():
            out = []
            for s in shifts:
                out += verify.verify_eisenbaum(model, x, s, args.order or 3, tol=tol)
            return out

        add("eisenbaum", eis)
    if "rayknight" in want and (model.recurrent or not auto):
        z0 = _state(model, args.z0)
        trials = 100_000 if args.trials is None else args.trials
        add(
            "rayknight",
            lambda: verify.verify_rayknight(
                model, z0, 1.0 if args.t is None else args.t, args.order or 4, trials,
                seed_stream.child("rayknight") if seed_stream else None,
                threads=args.threads, tol=tol,
            ),
        )
    if "soup" in want and (not model.recurrent or not auto):
        x0 = _state(model, args.x0 if args.x0 is not None else args.x)
        alphas = _floats(args.alpha) if args.alpha else [0.5, 1.0, 2.5]
        add("soup", lambda: verify.verify_soup_isomorphism(model, alphas, x0, args.order or 4, tol=tol))
    if "permanental" in want and (not model.recurrent or not auto):
        x = _state(model, args.x)
        y = _state(model, args.y, 1)
        add("permanental", lambda: verify.verify_permanental_gaussian_pairing(model, x, y, 6, tol=tol))
    if "interlacement" in want and (transient_sym or not auto):
        nu = _measure(model, args.nu)
        t = 0.5 if args.t is None else args.t
        add(
            "interlacement",
            lambda: verify.verify_interlacement(model, nu, t, args.delta, args.order or 3, tol=tol),
        )
    return jobs


def _poisson_job(args, seed_stream, tol):
    weights = _floats(args.weights) if args.weights else [1.0, 0.5]
    alpha = float(args.alpha) if args.alpha and "," not in args.alpha else 1.0
    samples = 1_000_000 if args.trials is None else args.trials
    return (
        "poisson",
        lambda: verify.verify_poisson_facts(weights, alpha, seed_stream.child("poisson"), samples, tol=tol),
    )


def cmd_verify(args) -> int:
    if args.identity in STOCHASTIC and args.seed is None:
        raise UsageError(f"--seed is required for --identity {args.identity}")
    tol = verify.Tolerance(args.tol_abs, args.tol_rel)
    seed_stream = RngStream(args.seed) if args.seed is not None else None
    jobs, hashes = [], []
    if args.model is None:
        if args.identity != "all":
            raise UsageError("--model is required unless --identity all")
        for name in FIXTURES:
            path = fixture_path(name)
            hashes.append(_model_hash(path))
            jobs += _jobs_for_model(load_model(path), args, seed_stream, tol)
        jobs.append(("dynkin", lambda: verify.randomized_regression(args.seed, tol=tol)))
        jobs.append(("rayknight", lambda: verify.recurrent_regression(args.seed, tol=tol)))
    else:
        model = load_model(args.model)
        hashes.append(_model_hash(args.model))
        jobs += _jobs_for_model(model, args, seed_stream, tol)
    if args.identity in ("poisson", "all"):
        jobs.append(_poisson_job(args, seed_stream, tol))
    if not jobs:
        raise UsageError(f"identity {args.identity!r} does not apply to this model")

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(lambda j: verify.timed(j[1]), jobs))
    else:
        results = [verify.timed(fn) for _, fn in jobs]
    reports = verify.sort_reports([r for rs in results for r in rs])

    meta = {
        "tool": "isokit",
        "version": __version__,
        "seed": args.seed,
        "model_sha256": hashes,
        "identity": args.identity,
    }
    prefix = args.out
    Path(prefix + ".json").write_text(verify.reports_to_json(reports, meta, args.runtime))
    Path(prefix + ".csv").write_text(verify.reports_to_csv(reports, footer(args.seed, hashes)))

    failed = [r for r in reports if not r.passed]
    if args.verbose:
        for r in reports:
            print(r.line())
    else:
        for r in failed:
            print(r.line())
    counts = {}
    for r in reports:
        ok, total = counts.get(r.identity, (0, 0))
        counts[r.identity] = (ok + r.passed, total + 1)
    for name, (ok, total) in counts.items():
        print(f"{name}: {ok}/{total} passed")
    print(f"wrote {prefix}.json and {prefix}.csv")
    return EXIT_FAIL if failed else EXIT_PASS


# ------------------------------------------------------------------ kernel


def cmd_kernel(args) -> int:
    model = load_model(args.model)
    k = kernel_from_spec(model, args.kind)
    _write(k.to_csv() + footer(None, [_model_hash(args.model)]) + "\n", args.out)
    return EXIT_PASS


# ------------------------------------------------------------------ sample


def cmd_sample(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required for sampling")
    if args.trials is None or args.trials < 0:
        raise UsageError("--trials must be a nonnegative integer")
    model = load_model(args.model)
    rng = RngStream(args.seed).child("sample", args.sampler)
    n, th = args.trials, args.threads
    if args.sampler == "path":
        rows = sample.sample_local_times(model, _state(model, args.x0), n, rng, th)
    elif args.sampler == "bridge":
        x = _state(model, args.x)
        rows = sample.sample_bridge_local_times(model, x, _state(model, args.y) if args.y else x, n, rng, th)
    elif args.sampler == "tau-field":
        t = 1.0 if args.t is None else args.t
        rows, _ = sample.sample_inverse_lt_fields(model, _state(model, args.z0), t, n, rng, th)
    elif args.sampler == "gaussian":
        rows = sample.sample_gaussian(_transient_potential(model), n, rng, th)
    else:
        rows = sample.sample_halfint_soup_field(_transient_potential(model), args.half_units, n, rng, th)
    text = sample.fields_to_csv(model.states, rows) + footer(args.seed, [_model_hash(args.model)]) + "\n"
    _write(text, args.out)
    return EXIT_PASS


def _transient_potential(model):
    if model.recurrent:
        raise SamplerError("the potential of a recurrent model is infinite")
    if not model.symmetric:
        raise SamplerError("Gaussian sampling needs a symmetric model")
    return potential(model)


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isokit", description="Verify finite-state isomorphism theorems.")
    p.add_argument("--version", action="version", version=f"isokit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="run theorem verifications")
    v.add_argument("--model", help="model JSON (omit with --identity all for the bundled suite)")
    v.add_argument("--identity", required=True, choices=[*verify.IDENTITIES, "all"])
    v.add_argument("--x")
    v.add_argument("--y")
    v.add_argument("--x0")
    v.add_argument("--z0")
    v.add_argument("--t", type=float)
    v.add_argument("--s", help="comma-separated shifts (eisenbaum)")
    v.add_argument("--alpha", help="comma-separated soup intensities, or the Poisson intensity")
    v.add_argument("--nu", help="interlacement measure as state=weight,...")
    v.add_argument("--delta", type=float, default=0.2)
    v.add_argument("--weights", help="Poisson atom masses, comma-separated")
    v.add_argument("--order", type=int)
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--threads", type=int, default=1)
    v.add_argument("--tol-abs", type=float, default=verify.TOL_ABS)
    v.add_argument("--tol-rel", type=float, default=verify.TOL_REL)
    v.add_argument("--out", default="isokit-report", help="output prefix for .json and .csv")
    v.add_argument("--runtime", action="store_true", help="include per-report runtimes in the JSON")
    v.add_argument("--verbose", action="store_true")
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("kernel", help="print a kernel as CSV")
    k.add_argument("--model", required=True)
    k.add_argument("--kind", required=True, help="potential | alpha:A | killed:Z0 | tau:Z0:A")
    k.add_argument("--out")
    k.set_defaults(func=cmd_kernel)

    s = sub.add_parser("sample", help="dump sampled fields as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--sampler", required=True, choices=SAMPLERS)
    s.add_argument("--x0")
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--z0")
    s.add_argument("--t", type=float)
    s.add_argument("--half-units", type=int, default=1)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"isokit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, KernelError, SamplerError, LoadError, verify.VerifyError) as exc:
        print(f"isokit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
