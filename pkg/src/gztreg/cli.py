"""
Command-line front end.

    gztreg fit         --config model.toml [--data d.csv] [--out dir] [--seed s]
    gztreg lrt         --config full.toml --null null.toml [--out dir]
    gztreg correlogram --config model.toml --covariate x [--strata 0,1,2,5]
    gztreg simulate    --design study1 --n 200 --seed 1 --out dir
    gztreg selfcheck

Exit codes: 0 success, 1 usage or parse error, 2 non-convergence,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, gzt, inference, likelihood, simulate
from .errors import (BadDesignError, ConfigError, DataFormatError, GZTError,
                     InconsistentTypesError, MissingCovariateError, NoConvergenceError,
                     NotNestedError)
from .model import ParameterVector

log = logging.getLogger("gztreg")

EXIT_OK, EXIT_USAGE, EXIT_NOCONV, EXIT_NUMERIC = 0, 1, 2, 3

_USAGE_ERRORS = (ConfigError, DataFormatError, NotNestedError, MissingCovariateError,
                 InconsistentTypesError, BadDesignError)

# AR(0.5) 3x3: reference Jacobian of vecl(R) with respect to gamma
AR05_JACOBIAN = np.array([[0.7358, 0.1875, 0.0142],
                          [0.1875, 0.9103, 0.1875],
                          [0.0142, 0.1875, 0.7358]])
AR_NEG_SIGNS = np.array([[1, -1, 1], [-1, 1, -1], [1, -1, 1]])


def _fmt(x):
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# artifacts

def write_estimates(fit, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "block", "estimate", "std_error", "z", "p"])
        for i, (name, block, est, se) in enumerate(fit.coefficients()):
            try:
                z, p = inference.wald(fit, i)
            except GZTError:
                z, p = np.nan, np.nan
            w.writerow([name, block, _fmt(est), _fmt(se), _fmt(z), _fmt(p)])


def write_trace(fit, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loglik", "step"])
        for row in fit.trace:
            w.writerow([row["iteration"], _fmt(row["loglik"]), _fmt(row["step"])])


def fit_summary(fit):
    return {
        "loglik": fit.loglik,
        "aic": inference.aic(fit),
        "bic": inference.bic(fit),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "score_norm": fit.score_norm,
        "n_groups": fit.n_groups,
        "n_obs": fit.n_obs,
        "n_params": fit.n_params,
        "fingerprint": fit.fingerprint,
        "beta": fit.params.beta.tolist(),
        "alpha": fit.params.alpha.tolist(),
        "lam": fit.params.lam.tolist(),
    }


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _load(args, path=None):
    cfg = dataio.load_config(path or args.config, data=args.data,
                             out=getattr(args, "out", None), seed=args.seed)
    return cfg, cfg.load_dataset()


def _initial(args, data):
    if not getattr(args, "init", None):
        return None
    with open(args.init) as fh:
        d = json.load(fh)
    try:
        return ParameterVector(d["beta"], d["alpha"], d["lam"]).check(data)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{args.init}: bad initial values ({exc})") from exc


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args):
    cfg, data = _load(args)
    result = likelihood.fit(data, _initial(args, data), cfg.fit_options())
    out = dataio.ensure_dir(cfg.out)
    write_estimates(result, out / "estimates.csv")
    write_trace(result, out / "trace.csv")
    _write_json(fit_summary(result), out / "fit.json")
    print(f"loglik {result.loglik:.10g}  AIC {inference.aic(result):.6g}  "
          f"BIC {inference.bic(result):.6g}  iterations {result.iterations}  "
          f"converged {result.converged}")
    for name, block, est, se in result.coefficients():
        print(f"  {block:<12s} {name:<28s} {est: .6f}  ({se:.6f})")
    return EXIT_OK if result.converged else EXIT_NOCONV


def cmd_lrt(args):
    cfg_full, data_full = _load(args, args.config)
    cfg_null, data_null = _load(args, args.null)
    jobs = [(data_full, cfg_full), (data_null, cfg_null)]
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fits = list(pool.map(lambda j: likelihood.fit(j[0], None, j[1].fit_options()), jobs))
    else:
        fits = [likelihood.fit(d, None, c.fit_options()) for d, c in jobs]
    full, null = fits
    res = inference.lrt(full, null)
    print(f"statistic {res.statistic:.10g}  df {res.df}  p-value {res.p_value:.6g}")
    out = dataio.ensure_dir(cfg_full.out)
    _write_json({"statistic": res.statistic, "df": res.df, "p_value": res.p_value,
                 "loglik_full": full.loglik, "loglik_null": null.loglik,
                 "converged": [full.converged, null.converged]}, out / "lrt.json")
    return EXIT_OK if full.converged and null.converged else EXIT_NOCONV


def _parse_strata(text):
    try:
        edges = [float(s) for s in text.split(",")]
    except ValueError:
        raise ConfigError(f"--strata expects comma-separated numbers, got {text!r}") from None
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ConfigError("--strata needs at least two increasing edges")
    return list(zip(edges[:-1], edges[1:]))


def cmd_correlogram(args):
    cfg, data = _load(args)
    result = likelihood.fit(data, None, cfg.fit_options())
    strata = _parse_strata(args.strata) if args.strata else None
    table = inference.gzt_correlogram(data, result, args.covariate, strata)
    out = dataio.ensure_dir(cfg.out)
    table.to_csv(out / "correlogram.csv")
    for (lo, hi), m, k in zip(table.strata, table.means, table.pair_counts):
        print(f"  ({lo:.4g}, {hi:.4g}]  mean {m: .4f}  pairs {k}")
    return EXIT_OK if result.converged else EXIT_NOCONV


def cmd_simulate(args):
    kw = dict(kind=args.design, n=args.n, seed=args.seed or 0, error=args.error,
              df=args.df, t_scale=args.t_scale, case=args.case, family=args.family,
              rho=args.rho, m=args.m)
    design = simulate.SimDesign(**kw)
    sim = simulate.generate(design)
    out = dataio.ensure_dir(args.out or "out")
    dataio.write_dataset_csv(sim.dataset, out / "data.csv")
    dataio.write_truth(out / "truth.json", sim.truth, design)
    model = dict(data="data.csv", **simulate.model_config(design))
    (out / "model.toml").write_text(dataio.dump_config(model))
    print(f"wrote {sim.dataset.n_groups} groups, {sim.dataset.n_obs} observations to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# self-check battery

def _check_round_trip():
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for m in range(2, 11):
        for _ in range(20):
            R = simulate.random_correlation(m, rng)
            worst = max(worst, float(np.max(np.abs(gzt.gzt_inverse(gzt.gzt_forward(R)) - R))))
    return worst <= 1e-8, f"max error {worst:.2e}"


def _check_jacobian():
    J = gzt.gzt_jacobian(simulate.family_correlation("ar1", 0.5, 3))
    err = float(np.max(np.abs(J - AR05_JACOBIAN)))
    Jn = gzt.gzt_jacobian(simulate.family_correlation("ar1", -0.5, 3))
    signs_ok = bool(np.array_equal(np.sign(Jn), AR_NEG_SIGNS))
    return err <= 5e-4 and signs_ok, f"max deviation {err:.2e}, AR(-0.5) signs {'ok' if signs_ok else 'wrong'}"


def _check_score():
    sim = simulate.generate(simulate.SimDesign("study1", n=15, seed=7))
    data = sim.dataset
    omega = sim.truth.flat()
    dims = sim.truth.dims
    analytic = likelihood.score(sim.truth, data)
    h = 1e-5
    numeric = np.empty_like(omega)
    for i in range(omega.size):
        e = np.zeros_like(omega)
        e[i] = h
        lp = likelihood.log_likelihood(ParameterVector.from_flat(omega + e, dims), data)
        lm = likelihood.log_likelihood(ParameterVector.from_flat(omega - e, dims), data)
        numeric[i] = (lp - lm) / (2 * h)
    rel = float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
    return rel <= 1e-5, f"max relative error {rel:.2e}"


SELFCHECKS = (("round trip", _check_round_trip),
              ("AR(0.5) Jacobian", _check_jacobian),
              ("finite-difference score", _check_score))


def run_selfcheck(checks=SELFCHECKS):
    """Run the diagnostic battery; returns [(name, passed, detail)]."""
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results


def cmd_selfcheck(args):
    results = run_selfcheck()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="CSV data file (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker thread cap")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gztreg", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common], help="fit a model")
    f.add_argument("--config", required=True)
    f.add_argument("--init", help="fit.json whose estimates start the iteration")
    f.set_defaults(func=cmd_fit)

    lr = sub.add_parser("lrt", parents=[common], help="likelihood ratio test")
    lr.add_argument("--config", required=True, help="full model config")
    lr.add_argument("--null", required=True, help="null model config")
    lr.set_defaults(func=cmd_lrt)

    c = sub.add_parser("correlogram", parents=[common], help="GZT-correlogram table")
    c.add_argument("--config", required=True)
    c.add_argument("--covariate", required=True)
    c.add_argument("--strata", help="comma-separated bin edges; default 3 quantile bins")
    c.set_defaults(func=cmd_correlogram)

    s = sub.add_parser("simulate", parents=[common], help="write a simulated dataset")
    s.add_argument("--design", default="study1", choices=simulate._KINDS)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--error", default="gaussian", choices=("gaussian", "t"))
    s.add_argument("--df", type=float, default=5.0)
    s.add_argument("--t-scale", default="covariance", choices=("covariance", "scale"),
                   help="t errors: D R D is the covariance or the scale matrix")
    s.add_argument("--case", default="I", choices=("I", "II", "III", "IV"))
    s.add_argument("--family", default="exchangeable")
    s.add_argument("--rho", type=float, default=0.5)
    s.add_argument("--m", type=int, default=3)
    s.set_defaults(func=cmd_simulate)

    sc = sub.add_parser("selfcheck", parents=[common], help="run the diagnostic battery")
    sc.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None):
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    if not argv:
        argv = ["selfcheck"]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (GZTError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
