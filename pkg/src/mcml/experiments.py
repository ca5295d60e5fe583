"""Replication harness: configs, per-run records, CSV persistence, file IO.

Determinism contract: a record's content is a pure function of the
experiment config and the master seed.  Every replication gets its own
generator derived via ``rep_seed``, so worker count and scheduling cannot
change any byte of the output CSV.  Wall-clock timing is the one
intentionally non-reproducible field; ``record_timing=False`` zeroes it for
byte-stable reruns.

CSV schema (fixed order, header always present):
  rep, seed, theta0_hat, theta1_hat, exact_loglik, iterations, converged, wall_ms
Floats are serialized with 17 significant digits and round-trip exactly;
``theta1_hat`` and ``exact_loglik`` are nan where not applicable.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .estimators import IsremcConfig, PsiBox
from .model import AutologisticLattice, Binomial
from .optimizer import (ExactLogLik, NewtonConfig, adap_mcml, benchmark_mcml,
                        exact_mle, mpl_estimate)
from .samplers import make_rng, rep_seed, run_gibbs

CSV_COLUMNS = ("rep", "seed", "theta0_hat", "theta1_hat", "exact_loglik",
               "iterations", "converged", "wall_ms")

# study defaults at the d=10 reference scale
BENCHMARK_BURNIN = 1000
BENCHMARK_SAMPLES = 39000
ADAPTIVE_ITERS = 20
ADAPTIVE_ISREMC = IsremcConfig(l=1000, r=1, s=100, n=900)


@dataclass(frozen=True)
class ExperimentConfig:
    """One replication study: model, algorithm, start rule, sizes, seed."""

    d: int | None = None              # lattice side (exclusive with n)
    n: int | None = None              # binomial count
    algo: str = "benchmark"           # benchmark | adaptive
    start: str | tuple = "mpl"        # mpl | zero | explicit components
    reps: int = 1
    master_seed: int = 0
    burn_in: int = BENCHMARK_BURNIN
    samples: int = BENCHMARK_SAMPLES
    iters: int = ADAPTIVE_ITERS
    isremc: IsremcConfig = ADAPTIVE_ISREMC
    newton: NewtonConfig = NewtonConfig()
    psi_half_width: float = 10.0
    suffstat_only: bool = False
    record_timing: bool = True
    workers: int = 1

    def __post_init__(self):
        if (self.d is None) == (self.n is None):
            raise ConfigError("exactly one of lattice side d or binomial n required")
        if self.algo not in ("benchmark", "adaptive", "exact", "mpl"):
            raise ConfigError(f"unknown algorithm {self.algo!r}")
        if self.reps < 1 or self.workers < 1:
            raise ConfigError("replications and workers must be >= 1")
        if self.suffstat_only and self.algo in ("adaptive", "mpl"):
            raise ConfigError(
                f"{self.algo} fitting needs the full lattice to build its "
                "instrumental density; supply a lattice file or use the "
                "benchmark algorithm"
            )
        if self.suffstat_only and self.start == "mpl":
            raise ConfigError(
                "the pseudo-likelihood start needs the full lattice; give an "
                "explicit start or use zero"
            )

    def model(self):
        return AutologisticLattice(self.d) if self.d is not None else Binomial(self.n)


@dataclass
class RunRecord:
    rep: int
    seed: int
    theta0_hat: float
    theta1_hat: float
    exact_loglik: float
    iterations: int
    converged: bool
    wall_ms: int
    # diagnostics carried in memory only; the CSV schema stays fixed
    n_clamped: int = 0
    n_fallback: int = 0

    def row(self) -> str:
        return ",".join([
            str(self.rep), str(self.seed),
            _fmt(self.theta0_hat), _fmt(self.theta1_hat), _fmt(self.exact_loglik),
            str(self.iterations), str(int(self.converged)), str(self.wall_ms),
        ])


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _resolve_start(config: ExperimentConfig, model, data) -> np.ndarray:
    if isinstance(config.start, str) and config.start == "zero":
        return np.zeros(model.dim)
    if isinstance(config.start, str) and config.start == "mpl":
        if not isinstance(model, AutologisticLattice) or config.suffstat_only:
            raise ConfigError("mpl start requires a full observed lattice")
        fit = mpl_estimate(data)
        if not fit.converged:
            raise NumericalError(f"pseudo-likelihood start failed: {fit.message}")
        return fit.theta_hat
    start = np.asarray(config.start, dtype=np.float64).reshape(-1)
    if start.shape != (model.dim,):
        raise ConfigError(f"start point must have {model.dim} components")
    return start


def exact_loglik_at(model, t_obs: np.ndarray, theta: np.ndarray) -> float:
    """Exact log-likelihood at theta when the oracle is feasible, else nan."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.isfinite(theta).all():
        return math.nan
    try:
        return ExactLogLik(model, t_obs)(theta)[0]
    except NumericalError:
        return math.nan


def run_one(config: ExperimentConfig, data, rep: int,
            start: np.ndarray | None = None) -> RunRecord:
    """Execute a single replication; pure function of (config, data, rep)."""
    model = config.model()
    if start is None and config.algo in ("benchmark", "adaptive"):
        start = _resolve_start(config, model, data)
    seed = rep_seed(config.master_seed, rep)
    rng = make_rng(seed)
    t_obs = _t_obs(model, data, config)
    tic = time.perf_counter()
    if config.algo == "benchmark":
        fit = benchmark_mcml(model, t_obs, start, config.burn_in, config.samples,
                             config.newton, rng)
    elif config.algo == "adaptive":
        box = PsiBox.default(model.dim, config.psi_half_width)
        fit = adap_mcml(model, data, start, config.iters, config.isremc, box,
                        config.newton, rng)
    elif config.algo == "exact":
        fit = exact_mle(model, t_obs, config.newton)
    else:
        fit = mpl_estimate(np.asarray(data))
    wall_ms = int(round((time.perf_counter() - tic) * 1000)) if config.record_timing else 0
    theta = fit.theta_hat
    loglik = exact_loglik_at(model, t_obs, theta)
    theta1 = float(theta[1]) if model.dim > 1 else math.nan
    return RunRecord(rep, seed, float(theta[0]), theta1, loglik,
                     fit.iterations, fit.converged, wall_ms,
                     n_clamped=fit.n_clamped, n_fallback=fit.n_fallback)


def _t_obs(model, data, config: ExperimentConfig) -> np.ndarray:
    if isinstance(model, AutologisticLattice):
        arr = np.asarray(data)
        if config.suffstat_only or arr.ndim == 1:
            return arr.astype(np.float64).reshape(2)
        return model.t(arr).astype(np.float64)
    return model.t(int(np.asarray(data).reshape(-1)[0])).astype(np.float64)


def _run_one_star(args) -> RunRecord:
    return run_one(*args)


def fit_replications(config: ExperimentConfig, data) -> list[RunRecord]:
    """All replications of one study, in replication order."""
    model = config.model()
    start = None
    if config.algo in ("benchmark", "adaptive"):
        start = _resolve_start(config, model, data)
    if config.workers == 1:
        return [run_one(config, data, rep, start) for rep in range(config.reps)]
    jobs = [(config, data, rep, start) for rep in range(config.reps)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        records = list(pool.map(_run_one_star, jobs))
    return records


def write_records_csv(path, records) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rec in records:
            fh.write(rec.row() + "\n")


def read_records_csv(path) -> list[RunRecord]:
    records = []
    with _open_input(path) as fh:
        header = fh.readline().strip()
        if header != ",".join(CSV_COLUMNS):
            raise ConfigError(f"unexpected CSV header in {path}: {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(CSV_COLUMNS):
                raise ConfigError(f"malformed CSV row in {path}: {line!r}")
            records.append(RunRecord(
                rep=int(parts[0]), seed=int(parts[1]),
                theta0_hat=float(parts[2]), theta1_hat=float(parts[3]),
                exact_loglik=float(parts[4]), iterations=int(parts[5]),
                converged=bool(int(parts[6])), wall_ms=int(parts[7]),
            ))
    return records


def summarize(records) -> dict:
    """Location/spread of the fitted parameters over converged replications."""
    conv = [r for r in records if r.converged]
    out = {"n": len(records), "n_converged": len(conv)}
    if conv:
        th0 = np.array([r.theta0_hat for r in conv])
        th1 = np.array([r.theta1_hat for r in conv])
        ll = np.array([r.exact_loglik for r in conv])
        for name, arr in (("theta0", th0), ("theta1", th1), ("exact_loglik", ll)):
            out[name] = {
                "mean": float(np.mean(arr)),
                "median": float(np.median(arr)),
                "sd": float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0,
            }
    return out


def format_summary(summary: dict) -> str:
    lines = [f"replications: {summary['n']}  converged: {summary['n_converged']}"]
    for name in ("theta0", "theta1", "exact_loglik"):
        if name in summary:
            s = summary[name]
            lines.append(
                f"{name}: mean {_fmt(s['mean'])}  median {_fmt(s['median'])}"
                f"  sd {_fmt(s['sd'])}"
            )
    return "\n".join(lines)


# ----------------------------------------------------------------------
# lattice file format: first line "d=<int>", then d rows of d chars in {0,1}


def write_lattice(path, y: np.ndarray) -> None:
    y = np.asarray(y)
    d = y.shape[0]
    if y.shape != (d, d) or not np.isin(y, (0, 1)).all():
        raise ConfigError(f"not a square binary lattice: shape {y.shape}")
    with open(path, "w") as fh:
        fh.write(f"d={d}\n")
        for row in y:
            fh.write("".join("1" if v else "0" for v in row) + "\n")


def _open_input(path):
    try:
        return open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def read_lattice(path) -> np.ndarray:
    with _open_input(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("d="):
            raise ConfigError(f"lattice file must start with 'd=<int>', got {header!r}")
        try:
            d = int(header[2:])
        except ValueError as exc:
            raise ConfigError(f"bad lattice header {header!r}") from exc
        if d < 1:
            raise ConfigError(f"lattice side must be >= 1, got {d}")
        rows = []
        for i in range(d):
            line = fh.readline().strip()
            if len(line) != d or set(line) - {"0", "1"}:
                raise ConfigError(f"lattice row {i} must be {d} chars of 0/1, got {line!r}")
            rows.append([int(ch) for ch in line])
    return np.array(rows, dtype=np.int8)


def generate_lattice(d: int, theta_true, sweeps: int, seed: int) -> np.ndarray:
    """Gibbs run from the all-zero lattice; the draw used as synthetic data."""
    if sweeps < 1:
        raise ConfigError(f"sweeps must be >= 1, got {sweeps}")
    rng = make_rng(seed)
    start = np.zeros((d, d), dtype=np.int8)
    final, _ = run_gibbs(np.asarray(theta_true, dtype=np.float64), start, sweeps, rng)
    return final


# ----------------------------------------------------------------------
# reusable pipelines (shared by the command-line front end and the tests,
# so reruns under one master seed are byte-for-byte comparable)


def unbiasedness_experiment(path, master_seed: int, *, d: int = 3,
                            theta=(-1.0, 0.75),
                            psis=((-1.07, 0.66), (0.0, 0.0)),
                            configs=(IsremcConfig(200, 2, 20, 80),
                                     IsremcConfig(100, 1, 0, 50)),
                            reps: int = 5000) -> list[dict]:
    """Monte Carlo check that incremental estimates average to exact c(theta).

    Writes one CSV row per increment and returns one summary dict per
    (psi, config) combination with the deviation in standard-error units.
    """
    from .estimators import atoms_eval, isremc_increment
    from .samplers import GibbsKernel, PseudoLikelihood

    model = AutologisticLattice(d)
    theta = np.asarray(theta, dtype=np.float64)
    exact_c = math.exp(model.exact_log_norm(theta))
    y_ref = generate_lattice(d, theta, 200, rep_seed(master_seed, 10**6))
    results = []
    with open(path, "w") as fh:
        fh.write("psi0,psi1,l,r,s,n,rep,c_hat\n")
        combo = 0
        for psi in psis:
            psi = np.asarray(psi, dtype=np.float64)
            h = PseudoLikelihood(psi, y_ref)
            kernel = GibbsKernel(psi)
            for cfg in configs:
                rng = make_rng(rep_seed(master_seed, combo))
                vals = np.empty(reps)
                for i in range(reps):
                    inc = isremc_increment(model, psi, cfg, kernel, h, rng)
                    vals[i] = atoms_eval(inc, theta)[0]
                    fh.write(f"{_fmt(psi[0])},{_fmt(psi[1])},{cfg.l},{cfg.r},"
                             f"{cfg.s},{cfg.n},{i},{_fmt(vals[i])}\n")
                se = float(vals.std(ddof=1) / math.sqrt(reps))
                results.append({
                    "psi": tuple(psi), "config": cfg, "mean": float(vals.mean()),
                    "se": se, "exact": exact_c,
                    "z": float((vals.mean() - exact_c) / se),
                })
                combo += 1
    return results


def clt_experiment(path, master_seed: int, *, n: int = 20, y_obs: int = 14,
                   m: int = 10000, reps: int = 2000,
                   record_timing: bool = False):
    """Sampling-distribution check of the importance-sampling MCML fit.

    Per replication: m uniform draws, fit theta_hat, record it; the report
    compares the covariance of sqrt(m)(theta_hat - theta*) with the exact
    sandwich value and runs the 1%-level normality check.

    Returns (records, CltReport); rows go to ``path`` in the standard schema.
    """
    from .asymptotics import CltReport, exact_sandwich
    from .estimators import compact, is_atoms
    from .optimizer import McLogLik, newton_maximize
    from .samplers import BinomialUniform
    from scipy import stats as scipy_stats

    model = Binomial(n)
    if not 0 < y_obs < n:
        raise ConfigError(f"y_obs={y_obs} gives no interior maximizer")
    theta_star = np.array([math.log(y_obs / (n - y_obs))])
    t_obs = np.array([float(y_obs)])
    h = BinomialUniform(n)
    sw = exact_sandwich(model, theta_star, h)
    cfg = NewtonConfig(max_iters=60, grad_tol=1e-9)
    records = []
    scaled = []
    for rep in range(reps):
        seed = rep_seed(master_seed, rep)
        rng = make_rng(seed)
        tic = time.perf_counter()
        atoms = compact(is_atoms(model, h, m, rng))
        fit = newton_maximize(McLogLik(t_obs, atoms), theta_star, cfg)
        wall_ms = int(round((time.perf_counter() - tic) * 1000)) if record_timing else 0
        loglik = exact_loglik_at(model, t_obs, fit.theta_hat)
        records.append(RunRecord(rep, seed, float(fit.theta_hat[0]), math.nan,
                                 loglik, fit.iterations, fit.converged, wall_ms))
        if fit.converged:
            scaled.append(math.sqrt(m) * (fit.theta_hat - theta_star))
    write_records_csv(path, records)
    scaled = np.asarray(scaled)
    n_failed = reps - len(scaled)
    empirical = (scaled.T @ scaled) / len(scaled)
    rel_err = float(np.abs(empirical - sw.sigma).max() / np.abs(sw.sigma).max())
    z = scaled[:, 0] / math.sqrt(sw.sigma[0, 0])
    res = scipy_stats.anderson(z, dist="norm")
    crit = float(res.critical_values[-1])
    report = CltReport(sw.sigma, empirical, rel_err,
                       [(float(res.statistic), crit)],
                       bool(res.statistic < crit), reps, n_failed,
                       n_failed <= 0.05 * reps, scaled)
    return records, report
