"""Command-line front end.

Subcommands:
  generate       draw a synthetic lattice by Gibbs sampling and save it
  fit            replicate a Monte Carlo likelihood fit, write CSV + figures
  exact          exact maximum likelihood by full enumeration
  mpl            pseudo-likelihood point estimate
  binomial-demo  closed-form sanity study on the binomial model
  clt-check      sampling-distribution check against the exact sandwich value

Exit codes: 0 success, 2 configuration error, 3 numerical failure.

A config file (INI, section [mcml]) can pre-set any long flag; values given
on the command line win.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .estimators import IsremcConfig
from .experiments import (ADAPTIVE_ISREMC, ADAPTIVE_ITERS, BENCHMARK_BURNIN,
                          BENCHMARK_SAMPLES, ExperimentConfig, exact_loglik_at,
                          fit_replications, format_summary, generate_lattice,
                          read_lattice, summarize, write_lattice,
                          write_records_csv)
from .model import AutologisticLattice, Binomial
from .optimizer import NewtonConfig, exact_mle, mpl_estimate


def _float_pair(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcml",
        description="Monte Carlo maximum likelihood for autologistic lattices",
    )
    parser.add_argument("--config", help="INI file with a [mcml] section of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a lattice from the model by Gibbs")
    p.add_argument("--d", type=int, default=10, help="lattice side length")
    p.add_argument("--theta", type=_float_pair, default=(-1.0, 0.75),
                   help="true parameters as t0,t1")
    p.add_argument("--sweeps", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="lattice file to write")

    p = sub.add_parser("fit", help="replicated Monte Carlo likelihood fit")
    p.add_argument("--data", help="lattice file with the observation")
    p.add_argument("--suffstat-only", type=_float_pair, metavar="T0,T1",
                   help="fit from the two summary statistics alone")
    p.add_argument("--d", type=int, help="lattice side (required with --suffstat-only)")
    p.add_argument("--algo", choices=("benchmark", "adaptive"), default="benchmark")
    p.add_argument("--start", default="mpl",
                   help="mpl, zero, or explicit t0,t1 (default mpl)")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path for per-replication results")
    p.add_argument("--burnin", type=int, default=BENCHMARK_BURNIN,
                   help="benchmark: discarded initial sweeps")
    p.add_argument("--samples", type=int, default=BENCHMARK_SAMPLES,
                   help="benchmark: retained sweeps")
    p.add_argument("--iters", type=int, default=ADAPTIVE_ITERS,
                   help="adaptive: number of estimate/update rounds")
    p.add_argument("--l", type=int, default=ADAPTIVE_ISREMC.l,
                   help="adaptive: independent proposals per round")
    p.add_argument("--r", type=int, default=ADAPTIVE_ISREMC.r,
                   help="adaptive: resampled chain starts per round")
    p.add_argument("--s", type=int, default=ADAPTIVE_ISREMC.s,
                   help="adaptive: burn-in sweeps per chain")
    p.add_argument("--n", type=int, default=ADAPTIVE_ISREMC.n,
                   help="adaptive: retained sweeps per chain")
    p.add_argument("--newton-iters", type=int, default=20)
    p.add_argument("--no-damping", action="store_true",
                   help="take raw ascent steps without any line search")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true",
                   help="zero the wall_ms column for byte-stable reruns")
    p.add_argument("--no-plots", action="store_true", help="skip figure files")

    p = sub.add_parser("exact", help="exact maximum likelihood by enumeration")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--data", help="lattice file")
    group.add_argument("--suffstat-only", type=_float_pair, metavar="T0,T1")
    group.add_argument("--y", type=int, help="binomial success count")
    p.add_argument("--d", type=int, help="lattice side (with --suffstat-only)")
    p.add_argument("--n", type=int, help="binomial trial count (with --y)")

    p = sub.add_parser("mpl", help="maximum pseudo-likelihood estimate")
    p.add_argument("--data", required=True, help="lattice file")

    p = sub.add_parser("binomial-demo",
                       help="instrumental-density comparison on the binomial model")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--y", type=int, default=14)
    p.add_argument("--m", type=int, default=5000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path for per-replication fits")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("clt-check",
                       help="compare replicated fits with the exact sandwich value")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--y", type=int, default=14)
    p.add_argument("--m", type=int, default=10000)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path for per-replication fits")
    p.add_argument("--no-plots", action="store_true")

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list) -> list:
    """Fold [mcml] section values in as defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    path = Path(known.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    ini = configparser.ConfigParser()
    ini.read(path)
    if "mcml" not in ini:
        raise ConfigError(f"{path} has no [mcml] section")
    extra = []
    for key, value in ini["mcml"].items():
        flag = "--" + key.replace("_", "-")
        if flag == "--config":
            continue
        if value.strip().lower() in ("true", "yes", "on"):
            extra.append(flag)
        elif value.strip().lower() in ("false", "no", "off"):
            continue
        else:
            # the = form survives values that start with a dash, e.g. -1.0,0.75
            extra.append(f"{flag}={value}")
    # defaults go after the subcommand, before explicit flags
    for i, tok in enumerate(argv):
        if not tok.startswith("-") and tok in ("generate", "fit", "exact", "mpl",
                                               "binomial-demo", "clt-check"):
            return argv[:i + 1] + extra + argv[i + 1:]
    return argv + extra


def cmd_generate(args) -> int:
    model = AutologisticLattice(args.d)
    y = generate_lattice(args.d, args.theta, args.sweeps, args.seed)
    write_lattice(args.out, y)
    t = model.t(y)
    print(f"wrote {args.out}")
    print(f"suffstat: ones={int(t[0])} pairs={int(t[1])}")
    return 0


def cmd_fit(args) -> int:
    if (args.data is None) == (args.suffstat_only is None):
        raise ConfigError("exactly one of --data or --suffstat-only is required")
    if args.suffstat_only is not None:
        if args.d is None:
            raise ConfigError("--suffstat-only needs --d for the lattice side")
        data = np.asarray(args.suffstat_only, dtype=np.float64)
        d = args.d
    else:
        data = read_lattice(args.data)
        d = data.shape[0]
        if args.d is not None and args.d != d:
            raise ConfigError(f"--d {args.d} disagrees with lattice file side {d}")
    start = args.start if args.start in ("mpl", "zero") else _float_pair(args.start)
    newton = NewtonConfig(max_iters=args.newton_iters,
                          line_search=not args.no_damping)
    config = ExperimentConfig(
        d=d, algo=args.algo, start=start, reps=args.reps,
        master_seed=args.seed, burn_in=args.burnin, samples=args.samples,
        iters=args.iters, isremc=IsremcConfig(args.l, args.r, args.s, args.n),
        newton=newton, suffstat_only=args.suffstat_only is not None,
        record_timing=not args.no_timing, workers=args.workers,
    )
    records = fit_replications(config, data)
    write_records_csv(args.out, records)
    print(f"wrote {args.out}")
    print(format_summary(summarize(records)))
    if not args.no_plots:
        _fit_figures(args, config, data, records)
    return 0


def _fit_figures(args, config, data, records) -> None:
    from .report import save_gap_boxplot, save_theta_scatter

    stem = Path(args.out).with_suffix("")
    conv = [r for r in records if r.converged]
    if not conv:
        return
    thetas = np.array([[r.theta0_hat, r.theta1_hat] for r in conv])
    model = config.model()
    theta_star = None
    try:
        t_obs = (data.astype(np.float64) if data.ndim == 1 else
                 model.t(data).astype(np.float64))
        star = exact_mle(model, t_obs)
        if star.converged:
            theta_star = star.theta_hat
            gaps = star.loglik_at_hat - np.array([r.exact_loglik for r in conv])
            box = save_gap_boxplot({args.algo: gaps}, f"{stem}_gaps.png")
            print(f"wrote {box}")
    except NumericalError:
        pass
    scatter = save_theta_scatter({args.algo: thetas}, theta_star,
                                 f"{stem}_theta.png")
    print(f"wrote {scatter}")


def cmd_exact(args) -> int:
    if args.y is not None:
        if args.n is None:
            raise ConfigError("--y needs --n for the trial count")
        model = Binomial(args.n)
        t_obs = model.t(args.y).astype(np.float64)
    elif args.suffstat_only is not None:
        if args.d is None:
            raise ConfigError("--suffstat-only needs --d for the lattice side")
        model = AutologisticLattice(args.d)
        t_obs = np.asarray(args.suffstat_only, dtype=np.float64)
    else:
        y = read_lattice(args.data)
        model = AutologisticLattice(y.shape[0])
        t_obs = model.t(y).astype(np.float64)
    fit = exact_mle(model, t_obs)
    if not fit.converged:
        raise NumericalError(fit.message or "exact maximization failed")
    theta = fit.theta_hat
    if model.dim == 1:
        print(f"theta_hat: {_fmt(theta[0])}")
    else:
        print(f"theta_hat: {_fmt(theta[0])},{_fmt(theta[1])}")
    print(f"loglik: {_fmt(fit.loglik_at_hat)}")
    return 0


def cmd_mpl(args) -> int:
    y = read_lattice(args.data)
    fit = mpl_estimate(y)
    if not fit.converged:
        raise NumericalError(fit.message or "pseudo-likelihood maximization failed")
    print(f"theta_hat: {_fmt(fit.theta_hat[0])},{_fmt(fit.theta_hat[1])}")
    return 0


def cmd_binomial_demo(args) -> int:
    from .asymptotics import exact_sandwich, optimal_h, schwarz_bound
    from .estimators import compact, is_atoms
    from .optimizer import McLogLik, newton_maximize
    from .samplers import BinomialTheta, BinomialUniform, make_rng, rep_seed

    if not 0 < args.y < args.n:
        raise ConfigError(f"--y must be strictly between 0 and --n, got {args.y}")
    model = Binomial(args.n)
    theta_star = np.array([math.log(args.y / (args.n - args.y))])
    t_obs = np.array([float(args.y)])
    densities = [
        ("uniform", BinomialUniform(args.n)),
        ("target", BinomialTheta(args.n, theta_star)),
        ("optimal", optimal_h(model, theta_star)),
    ]
    print(f"exact theta: {_fmt(theta_star[0])}")
    print(f"variance floor: {_fmt(schwarz_bound(model, theta_star))}")
    labels, traces = [], []
    rows = []
    cfg = NewtonConfig(max_iters=60, grad_tol=1e-9)
    for label, h in densities:
        sw = exact_sandwich(model, theta_star, h)
        rng = make_rng(rep_seed(args.seed, len(labels)))
        fits = np.empty(args.reps)
        for i in range(args.reps):
            atoms = compact(is_atoms(model, h, args.m, rng))
            fit = newton_maximize(McLogLik(t_obs, atoms), theta_star, cfg)
            fits[i] = fit.theta_hat[0]
            rows.append((label, i, fits[i]))
        mc_var = args.m * fits.var(ddof=1)
        print(f"{label}: sandwich trace {_fmt(sw.trace_sigma)}  "
              f"empirical {_fmt(mc_var)}")
        labels.append(label)
        traces.append(sw.trace_sigma)
    with open(args.out, "w") as fh:
        fh.write("density,rep,theta_hat\n")
        for label, i, v in rows:
            fh.write(f"{label},{i},{_fmt(v)}\n")
    print(f"wrote {args.out}")
    if not args.no_plots:
        from .report import save_variance_bars
        fig = save_variance_bars(labels, traces,
                                 str(Path(args.out).with_suffix("")) + "_variance.png")
        print(f"wrote {fig}")
    return 0


def cmd_clt_check(args) -> int:
    from .experiments import clt_experiment

    records, report = clt_experiment(
        args.out, args.seed, n=args.n, y_obs=args.y, m=args.m, reps=args.reps)
    print(f"wrote {args.out}")
    print(f"replications: {report.n_reps}  non-converged: {report.n_failed}")
    print(f"sandwich variance: {_fmt(report.sigma[0, 0])}")
    print(f"empirical variance: {_fmt(report.empirical[0, 0])}")
    print(f"relative error: {_fmt(report.rel_err)}")
    stat, crit = report.anderson[0]
    print(f"normality statistic: {_fmt(stat)} (1% critical value {_fmt(crit)})")
    verdict = report.valid and report.normal_ok and report.rel_err < 0.15
    print(f"verdict: {'ok' if verdict else 'FAILED'}")
    if not args.no_plots:
        from .report import save_clt_histogram
        z = report.scaled[:, 0] / math.sqrt(report.sigma[0, 0])
        fig = save_clt_histogram(z, str(Path(args.out).with_suffix("")) + "_hist.png")
        print(f"wrote {fig}")
    return 0 if verdict else 3


_COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "exact": cmd_exact,
    "mpl": cmd_mpl,
    "binomial-demo": cmd_binomial_demo,
    "clt-check": cmd_clt_check,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse reports usage errors as code 2
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
