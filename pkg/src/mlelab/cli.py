"""Command line entry point ``mle-lab``.

Exit codes: 0 all checks pass, 1 configuration error, 2 a check failed,
3 quality gate (boundary-MLE rate above 5% at some n).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import scipy
from scipy.integrate import quad

from . import __version__
from .distance_lab import (check_B, check_D0, check_D1, hellinger_report, lambda_bound,
                           remainder_envelope)
from .errors import ConfigError, DomainError, MleLabError
from .expfam_appendix import (FergusonParams, ferguson_density, ferguson_limit_gap,
                              find_product_subset, is_product_witness,
                              linear_statistic_residual)
from .families import get_family
from .family_core import (check_interval, choose_delta, expected_envelope, fisher_information,
                          identity_checks)
from .mc_harness import (ExperimentConfig, effective_workers, nonuniform_profile, rate_fit,
                         run_experiment, tail_probability)
from .mle_engine import bracket_violations, simulate_brackets, wilson_interval
from .rng import child_stream

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_GATE = 0, 1, 2, 3
BOUNDARY_GATE = 0.05
CSV_COLUMNS = ["config_hash", "family", "n", "replications", "d_K", "dkw_band",
               "boundary_rate", "max_scaled_gap", "slope", "intercept", "r_squared"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise ConfigError(f"--param {key} must be numeric") from None
    return out


def _row(status: str, name: str, value, detail: str = "") -> str:
    v = f"{value:.4g}" if isinstance(value, float) else str(value)
    return f"{status:<5} {name:<26} {v:>14}  {detail}"


def default_b_grid(family, theta0: float, points: int = 40) -> np.ndarray:
    lo, hi = family.parameter_space
    if math.isinf(lo) and math.isinf(hi):
        s = 10.0 * family.scale_hint
        return np.linspace(theta0 - s, theta0 + s, 2 * points + 1)
    if math.isinf(hi):
        return lo + (theta0 - lo) * np.geomspace(0.25, 25.0, points)
    if math.isinf(lo):
        return hi - (hi - theta0) * np.geomspace(0.25, 25.0, points)
    w = hi - lo
    return np.linspace(lo + 0.05 * w, hi - 0.05 * w, points)


# --------------------------------------------------------------------------
# commands

def cmd_verify_family(args) -> int:
    family = get_family(args.family, **_params(args.param))
    theta0 = args.theta0
    delta = choose_delta(family, theta0) if args.delta is None else args.delta
    check_interval(family, theta0, delta)
    rows, verdicts, ok = [], {}, True

    for c in identity_checks(family, theta0, delta, seed=args.seed):
        ok &= c.passed
        rows.append(_row("PASS" if c.passed else "FAIL", c.name, c.value, f"tol {c.tolerance:.1e}"))

    info = fisher_information(family, theta0)
    margin = info - delta * expected_envelope(family, theta0, delta)
    rows.append(_row("INFO", "E(U - delta R*)", margin,
                     "positive: delta small enough" if margin > 0 else "delta larger than needed"))

    if args.b_grid:
        lo, hi, m = args.b_grid
        m = int(m)
        grid = np.geomspace(lo, hi, m) if lo > 0 else np.linspace(lo, hi, m)
    else:
        grid = default_b_grid(family, theta0)
    c1 = args.c1 if args.c1 is not None else 10.0 * info
    c2 = args.c2 if args.c2 is not None else info
    vb = check_B(family, theta0, c1, c2, args.alpha, grid)
    vd0 = check_D0(family, theta0)
    vd1 = check_D1(family, theta0, args.gamma)
    for v, detail in ((vb, f"c1={c1:.3g} c2={c2:.3g} alpha={args.alpha:g} "
                           f"grid [{grid[0]:.3g}, {grid[-1]:.3g}] witness "
                           f"{vb.witness_constants['witness_theta']:.4g}"),
                      (vd0, f"inf H/d^2 = {vd0.witness_constants['ratio_inf']:.4g}"),
                      (vd1, f"gamma={args.gamma:g} sup={vd1.witness_constants['sup']:.4g} "
                            f"witness {vd1.witness_constants['witness_theta']:.4g}")):
        ok &= v.holds_on_grid
        verdicts[v.condition] = v.to_dict()
        rows.append(_row("PASS" if v.holds_on_grid else "FAIL", f"condition {v.condition}",
                         "holds" if v.holds_on_grid else "fails", detail))

    if family.log_concave:
        lp = lambda_bound(family, theta0, delta)
        lm = lambda_bound(family, theta0, -delta)
        good = max(lp, lm) < 1.0
        ok &= good
        rows.append(_row("PASS" if good else "FAIL", "lambda+/lambda-", max(lp, lm),
                         f"lambda+={lp:.6g} lambda-={lm:.6g}"))
        if good:
            rows.append(_row("INFO", "2 lambda^100", remainder_envelope(lp, lm, 100)))

    print(f"{family.name} theta0={theta0:g} delta={delta:g}")
    print("\n".join(rows))
    if args.json:
        Path(args.json).write_text(json.dumps(verdicts, indent=2))
    return EXIT_OK if ok else EXIT_CHECK


def _results_csv(config, result, fit, profiles) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    h = config.config_hash()
    for rep in result.reports:
        w.writerow([h, config.family, rep.n, rep.replications, repr(rep.d_K), repr(rep.dkw_band),
                    repr(rep.boundary_rate), repr(profiles[rep.n].max_scaled_gap),
                    "" if fit is None else repr(fit.slope),
                    "" if fit is None else repr(fit.intercept),
                    "" if fit is None else repr(fit.r_squared)])
    return buf.getvalue()


def cmd_rate(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    config = ExperimentConfig.from_dict(raw)
    workers = effective_workers(config.workers)

    t0 = time.time()
    result = run_experiment(config)
    profiles = {r.n: nonuniform_profile(r, config.omega) for r in result.reports}
    fit = rate_fit([(r.n, r.d_K) for r in result.reports]) if len(result.reports) >= 4 else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = config.config_hash()

    (out / "results.csv").write_text(_results_csv(config, result, fit, profiles))
    profile = {"config_hash": h, "family": config.family, "theta0": config.theta0,
               "delta": result.delta, "fisher_info": result.fisher_info,
               "reports": [r.to_dict() for r in result.reports],
               "max_scaled_gap": {str(n): p.max_scaled_gap for n, p in profiles.items()},
               "rate_fit": None if fit is None else {"slope": fit.slope,
                                                    "intercept": fit.intercept,
                                                    "r_squared": fit.r_squared,
                                                    "points": fit.points}}
    (out / "profile.json").write_text(json.dumps(profile, indent=2))
    manifest = {"config_hash": h, "config": config.to_dict(), "master_seed": config.master_seed,
                "workers_used": workers,
                "versions": {"mlelab": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__, "python": sys.version.split()[0]},
                "wall_clock_seconds": time.time() - t0,
                "outputs": [str(out / "results.csv"), str(out / "profile.json")]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    for r in result.reports:
        print(f"n={r.n:<6d} d_K={r.d_K:.5f} band={r.dkw_band:.5f} "
              f"boundary={r.boundary_rate:.4f} max_scaled_gap={profiles[r.n].max_scaled_gap:.4f}")
    if fit is not None:
        print(f"slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r_squared:.4f}")
    if any(r.boundary_rate > BOUNDARY_GATE for r in result.reports):
        print("quality gate: boundary-MLE rate above 5%", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def cmd_bracket_demo(args) -> int:
    family = get_family(args.family, **_params(args.param))
    delta = choose_delta(family, args.theta0) if args.delta is None else args.delta
    a = simulate_brackets(family, args.theta0, delta, args.n, args.replications, args.seed)
    viol = int(bracket_violations(a).sum())
    m = args.replications
    print(f"{family.name} theta0={args.theta0:g} delta={delta:g} n={args.n} replications={m}")
    print(f"bracket violations: {viol}")
    g = a["in_G"]
    for name, mask in (("G", g), ("G and B", g & (a["in_B1"] | a["in_B2"])),
                       ("G and B1", g & a["in_B1"]), ("B2", a["in_B2"])):
        c = int(mask.sum())
        lo, hi = wilson_interval(c, m)
        print(f"P({name:<8}) = {c / m:.5f}  [{lo:.5f}, {hi:.5f}]")
    if np.all(a["rstar_bar"] == 0):
        spread = np.nanmax(np.abs(np.r_[a["t_plus"] - a["theta_dev"], a["t_minus"] - a["theta_dev"]]))
        print(f"max |T+- - (theta_hat - theta0)| = {spread:.3g}")
    return EXIT_OK if viol == 0 else EXIT_CHECK


def cmd_hellinger_table(args) -> int:
    family = get_family(args.family, **_params(args.param))
    thetas = args.thetas or list(default_b_grid(family, args.theta0, 6))
    ok = True
    print(f"{'theta':>10} {'H closed':>14} {'H quadrature':>14} {'J':>12} {'gap':>10}")
    for t in thetas:
        r = hellinger_report(family, float(t), args.theta0)
        ok &= r.abs_gap <= args.tol
        hc = "-" if r.h_closed is None else f"{r.h_closed:.10f}"
        print(f"{r.theta:>10.4g} {hc:>14} {r.h_quad:>14.10f} {r.affinity_j:>12.8f} {r.abs_gap:>10.2e}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_tail(args) -> int:
    family = get_family(args.family, **_params(args.param))
    rep = tail_probability(family, args.theta0, args.delta, args.n_grid, args.replications,
                           args.seed, workers=effective_workers(1))
    lam = None
    if family.log_concave:
        lam = (lambda_bound(family, args.theta0, args.delta),
               lambda_bound(family, args.theta0, -args.delta))
    ok = True
    for r in rep.rows:
        line = f"n={r.n:<6d} P_hat={r.p_hat:.6f} [{r.ci_low:.6f}, {r.ci_high:.6f}]"
        if lam is not None and max(lam) < 1:
            env = remainder_envelope(lam[0], lam[1], r.n)
            ok &= r.p_hat <= env
            line += f" envelope={env:.6g}"
        print(line)
    if rep.fit_slope is not None:
        print(f"ln P_hat ~ {rep.fit_intercept:.4f} + {rep.fit_slope:.4f} n")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_appendix_checks(args) -> int:
    results = []
    p = FergusonParams(3.0, 0.7)
    mass, _ = quad(lambda u: ferguson_density(p, u), -np.inf, np.inf, epsabs=1e-12,
                   epsrel=1e-12, limit=500)
    results.append(("ferguson_normalization", abs(mass - 1), abs(mass - 1) <= 1e-8))
    gap = ferguson_limit_gap(1e4)
    results.append(("ferguson_normal_limit_gap", gap, gap <= 0.01))

    def samples(fam, theta, count):
        return [fam.sampler(theta, 30, child_stream(args.seed, 30, i)) for i in range(count)]

    ident = lambda v: v
    pois = get_family("poisson")
    r = linear_statistic_residual(pois, ident, ident, samples(pois, 2.0, 20))
    results.append(("linear_residual_poisson", r, r <= 1e-8))
    norm = get_family("normal_location")
    r = linear_statistic_residual(norm, ident, ident, samples(norm, 0.0, 20))
    results.append(("linear_residual_normal", r, r <= 1e-8))
    cau = get_family("cauchy_location")
    r = linear_statistic_residual(cau, ident, ident, samples(cau, 0.0, 50))
    results.append(("linear_residual_cauchy", r, r > 0.01))

    std = lambda rng, m: rng.standard_normal(m)
    half = lambda x: x[0] > 0
    w = find_product_subset(half, [std, std], 2, child_stream(args.seed, 1))
    results.append(("product_subset_halfspace", 4.0, is_product_witness(half, w.y1, w.y2)))
    print("\n".join(_row("PASS" if ok else "FAIL", name, float(v)) for name, v, ok in results))
    return EXIT_OK if all(ok for *_, ok in results) else EXIT_CHECK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mle-lab", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"mle-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, family=True):
        if family:
            sp.add_argument("family", help="family identifier, e.g. poisson or cauchy_location")
            sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                            help="family parameter (repeatable)")
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")

    v = sub.add_parser("verify-family", help="identity checks and conditions B, D0, D1")
    common(v)
    v.add_argument("--theta0", type=float, required=True)
    v.add_argument("--delta", type=float)
    v.add_argument("--gamma", type=float, default=0.25, help="exponent for condition D1")
    v.add_argument("--c1", type=float, help="condition B constant (default 10 I(theta0))")
    v.add_argument("--c2", type=float, help="condition B constant (default I(theta0))")
    v.add_argument("--alpha", type=float, default=2.0, help="condition B exponent")
    v.add_argument("--b-grid", type=float, nargs=3, metavar=("LO", "HI", "N"),
                   help="grid for condition B (geometric when LO > 0)")
    v.add_argument("--json", help="write condition verdicts to this file")
    v.set_defaults(func=cmd_verify_family)

    r = sub.add_parser("rate", help="Monte Carlo rate experiment from a JSON config",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="results.csv columns: " + ", ".join(CSV_COLUMNS))
    r.add_argument("config", help="JSON file with the ExperimentConfig fields")
    r.add_argument("--out", default="mle_lab_out", help="output directory")
    r.add_argument("--seed", type=int, help="override master_seed")
    r.add_argument("--workers", type=int, help="override workers")
    r.set_defaults(func=cmd_rate)

    b = sub.add_parser("bracket-demo", help="bracketing statistics over seeded replicates")
    common(b)
    b.add_argument("--theta0", type=float, required=True)
    b.add_argument("--delta", type=float)
    b.add_argument("--n", type=int, default=200)
    b.add_argument("--replications", type=int, default=10_000)
    b.set_defaults(func=cmd_bracket_demo)

    h = sub.add_parser("hellinger-table", help="closed-form versus quadrature Hellinger distances")
    common(h)
    h.add_argument("--theta0", type=float, required=True)
    h.add_argument("--thetas", type=float, nargs="+")
    h.add_argument("--tol", type=float, default=1e-8)
    h.set_defaults(func=cmd_hellinger_table)

    t = sub.add_parser("tail", help="frequency of |theta_hat - theta0| > delta")
    common(t)
    t.add_argument("--theta0", type=float, required=True)
    t.add_argument("--delta", type=float, required=True)
    t.add_argument("--n-grid", type=int, nargs="+", default=[4, 9, 16, 25])
    t.add_argument("--replications", type=int, default=100_000)
    t.set_defaults(func=cmd_tail)

    a = sub.add_parser("appendix-checks", help="Ferguson densities, linear statistics, product sets")
    common(a, family=False)
    a.set_defaults(func=cmd_appendix_checks)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"mle-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DomainError) as exc:
        print(f"mle-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MleLabError as exc:
        print(f"mle-lab: check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
