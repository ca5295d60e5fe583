"""Sandwich-covariance machinery and empirical limit-theorem validation.

For enumerable outcome spaces the asymptotic covariance of the Monte Carlo
maximum-likelihood estimator is exactly computable: with

  D = hessian of the limit log-likelihood at theta* = -Var_{pi}(t),
  xi(y) = (t(y) - tau) pi(y) / h(y),  tau = E_pi t,
  V = Var_{Y ~ h}(xi) = sum_y (t-tau)(t-tau)^T pi(y)^2 / h(y),

sqrt(m)(theta_hat_m - theta*) is asymptotically N(0, D^{-1} V D^{-1}).
(xi here carries a 1/c scaling relative to the unnormalized-density form;
V is unchanged by pairing that with c^2 in the usual prefactor.)

``clt_validate`` and ``slln_validate`` check those statements empirically at
desk scale; ``optimal_h`` builds the variance-minimizing instrumental pmf,
proportional to |D^{-1} eta(y)| with eta(y) = (t(y) - tau) pi(y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .errors import DegenerateWeightsError, NumericalError
from .estimators import (Atoms, IsremcConfig, adapis_run, atoms_log_eval, compact,
                         is_atoms, isremc_increment, merge_running)
from .optimizer import McLogLik, NewtonConfig, newton_maximize
from .samplers import TabularDensity


@dataclass(frozen=True)
class SandwichCov:
    D: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    trace_sigma: float


def _enumerated_log_h(model, h):
    """log h over the model's enumerated support, vectorized when possible."""
    t, logmu, keys = model.enumerate_support()
    if hasattr(h, "log_density_many") and not hasattr(model, "decode"):
        return t, logmu, h.log_density_many(keys)
    decode = getattr(model, "decode", None)
    log_h = np.empty(len(keys))
    for i, k in enumerate(keys):
        y = decode(int(k)) if decode is not None else int(k)
        log_h[i] = h.log_density(y)
    return t, logmu, log_h


def eta_table(model, theta_star):
    """eta(y) = (t(y) - tau) pi(y) over the enumerated support.

    Scaled by 1/c relative to the unnormalized form; the score identity
    sum_y eta(y) = 0 is unaffected.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    t, logmu, _ = model.enumerate_support()
    log_c = model.exact_log_norm(theta_star)
    tau = model.exact_mean(theta_star)
    pi = np.exp(t @ theta_star + logmu - log_c)
    return (t - tau) * pi[:, None]


def xi_term(model, theta_star, h, y):
    """xi(y) = (t(y) - tau) pi(y) / h(y); E_h xi = 0 by the score identity."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    tau = model.exact_mean(theta_star)
    log_c = model.exact_log_norm(theta_star)
    t = model.t(y).astype(np.float64)
    log_pi = float(theta_star @ t) + model.log_base(y) - log_c
    log_h = h.log_density(y)
    if log_h == -math.inf:
        raise NumericalError("xi undefined where the instrumental density is zero")
    return (t - tau) * math.exp(log_pi - log_h)


def exact_sandwich(model, theta_star, h) -> SandwichCov:
    """Exact D, V and sigma = D^{-1} V D^{-1} by summation over outcomes.

    Outcomes where h is zero contribute infinite variance unless eta also
    vanishes there (the optimal-h case); that raises a diagnostic.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    D = -model.exact_cov(theta_star)
    eta = eta_table(model, theta_star)
    _, _, log_h = _enumerated_log_h(model, h)
    scale = np.abs(eta).max()
    V = np.zeros((model.dim, model.dim))
    for i in range(len(eta)):
        if log_h[i] == -math.inf:
            if np.abs(eta[i]).max() > 1e-14 * scale:
                raise NumericalError(
                    "infinite asymptotic variance: instrumental density is zero "
                    "at an outcome with nonzero score contribution"
                )
            continue
        V += np.outer(eta[i], eta[i]) * math.exp(-log_h[i])
    D_inv = np.linalg.inv(D)
    sigma = D_inv @ V @ D_inv
    return SandwichCov(D, V, sigma, float(np.trace(sigma)))


def optimal_h(model, theta_star) -> TabularDensity:
    """Variance-minimizing instrumental pmf, proportional to |D^{-1} eta(y)|.

    For the binomial model at its MLE this reduces to masses proportional to
    C(n,y) |y - y_obs| p^y (1-p)^(n-y), zero exactly at the observed value.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    D = -model.exact_cov(theta_star)
    eta = eta_table(model, theta_star)
    masses = np.linalg.norm(np.linalg.solve(D, eta.T), axis=0)
    if masses.sum() <= 0:
        raise DegenerateWeightsError("optimal instrumental pmf has all-zero masses")
    return TabularDensity.from_masses(model, masses)


def schwarz_bound(model, theta_star) -> float:
    """Lower bound (sum_y |D^{-1} eta(y)|)^2 on trace(D^{-1} V D^{-1})."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    D = -model.exact_cov(theta_star)
    eta = eta_table(model, theta_star)
    masses = np.linalg.norm(np.linalg.solve(D, eta.T), axis=0)
    return float(masses.sum() ** 2)


def lyapunov_moment(model, theta_star, h, alpha: float = 1.0) -> float:
    """E_h |xi|^(2+alpha) by enumeration; finite on finite spaces."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    eta = eta_table(model, theta_star)
    _, _, log_h = _enumerated_log_h(model, h)
    total = 0.0
    for i in range(len(eta)):
        norm = np.linalg.norm(eta[i])
        if norm == 0.0:
            continue
        if log_h[i] == -math.inf:
            raise NumericalError("moment undefined: h zero where eta is not")
        total += norm ** (2 + alpha) * math.exp(-(1 + alpha) * log_h[i])
    return total


# ----------------------------------------------------------------------
# Empirical validation of the limit theorems


@dataclass
class CltReport:
    sigma: np.ndarray
    empirical: np.ndarray
    rel_err: float
    anderson: list          # per component: (statistic, critical value at 1%)
    normal_ok: bool
    n_reps: int
    n_failed: int
    valid: bool
    scaled: np.ndarray = field(repr=False, default=None)


def _fit_theta_hat(model, t_obs, atoms, theta_star, cfg):
    result = newton_maximize(McLogLik(t_obs, compact(atoms)), theta_star, cfg)
    return result.theta_hat, result.converged


def clt_validate(model, estimator_kind: str, h_or_cfg, theta_star, m: int,
                 reps: int, rng, newton_cfg: NewtonConfig | None = None,
                 sigma: np.ndarray | None = None) -> CltReport:
    """Empirical check of the estimator's central limit theorem.

    Runs ``reps`` independent fits of theta_hat from m draws (or m merged
    incremental estimates for kind "isremc"), forms sqrt(m)(theta_hat -
    theta*), and compares the empirical covariance against the sandwich
    target, plus an Anderson-Darling normality check per component at the
    1% level.

    Args:
      estimator_kind: "is" (h_or_cfg is a fixed instrumental density),
        "adapis" (h_or_cfg is a dict with h_family, psi1, psi_star and an
        optional decay exponent: the instrumental parameter follows the
        deterministic sequence psi_star + (psi1 - psi_star) / j), or
        "isremc" (h_or_cfg is a dict with psi, h, kernel, isremc config and
        calibration size n_cal; the target V is itself estimated, so use the
        wider consistency tolerance).
      sigma: override the sandwich target (otherwise computed per kind).

    Replications whose inner fit fails to converge are excluded and counted;
    more than 5% failures marks the report invalid.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    t_obs = model.exact_mean(theta_star)  # makes theta* the limit maximizer
    cfg = newton_cfg or NewtonConfig(max_iters=60, grad_tol=1e-9)
    if estimator_kind == "is":
        h = h_or_cfg
        if sigma is None:
            sigma = exact_sandwich(model, theta_star, h).sigma
        draw = lambda r: is_atoms(model, h, m, r)
    elif estimator_kind == "adapis":
        setup = dict(h_or_cfg)
        h_family = setup["h_family"]
        psi_star = np.asarray(setup["psi_star"], dtype=np.float64)
        psi1 = np.asarray(setup.get("psi1", psi_star), dtype=np.float64)
        if sigma is None:
            sigma = exact_sandwich(model, theta_star, h_family(psi_star)).sigma

        def rule(j, psi, partial):
            # deterministic diminishing adaptation toward psi_star
            return psi_star + (psi1 - psi_star) / (j + 1)

        draw = lambda r: adapis_run(model, rule, m, r, psi1=psi1, h_family=h_family)
    elif estimator_kind == "isremc":
        from .optimizer import _isremc_pieces

        setup = dict(h_or_cfg)
        psi = np.asarray(setup["psi"], dtype=np.float64)
        inner: IsremcConfig = setup.get("isremc") or setup["cfg"]
        if "h" in setup and "kernel" in setup:
            h, kernel = setup["h"], setup["kernel"]
        else:
            # default instrumental pieces; lattice models need y_obs supplied
            h, kernel = _isremc_pieces(model, psi, setup.get("y_obs"))
        if sigma is None:
            n_cal = int(setup.get("n_cal", 2000))
            sigma = _isremc_sigma(model, theta_star, psi, inner, kernel, h,
                                  n_cal, rng)

        def draw(r):
            running = None
            for k in range(1, m + 1):
                inc = isremc_increment(model, psi, inner, kernel, h, r)
                running = compact(merge_running(running, inc, k))
            return running
    else:
        raise NumericalError(f"unknown estimator kind {estimator_kind!r}")

    dim = model.dim
    scaled = np.empty((reps, dim))
    n_failed = 0
    kept = 0
    for _ in range(reps):
        atoms = draw(rng)
        theta_hat, ok = _fit_theta_hat(model, t_obs, atoms, theta_star, cfg)
        if not ok:
            n_failed += 1
            continue
        scaled[kept] = math.sqrt(m) * (theta_hat - theta_star)
        kept += 1
    scaled = scaled[:kept]
    if kept < 2:
        raise NumericalError("too few converged replications for a CLT check")
    empirical = (scaled.T @ scaled) / kept  # second moment about the true zero mean
    denom = max(np.abs(sigma).max(), 1e-300)
    rel = np.abs(empirical - sigma) / np.maximum(np.abs(sigma), 0.1 * denom)
    rel_err = float(rel.max())
    anderson = []
    normal_ok = True
    for k in range(dim):
        z = scaled[:, k] / math.sqrt(sigma[k, k])
        res = scipy_stats.anderson(z, dist="norm")
        crit = float(res.critical_values[-1])  # 1% significance level
        anderson.append((float(res.statistic), crit))
        normal_ok = normal_ok and res.statistic < crit
    valid = n_failed <= 0.05 * reps
    return CltReport(sigma, empirical, rel_err, anderson, normal_ok,
                     reps, n_failed, valid, scaled)


def _isremc_sigma(model, theta_star, psi, inner, kernel, h, n_cal, rng):
    """Consistency target D^{-1} V_hat D^{-1} with V_hat estimated from
    independent incremental estimates at theta* (the exact V involves the
    estimator itself, so the target is calibrated, not closed-form)."""
    log_c = model.exact_log_norm(theta_star)
    tau = model.exact_mean(theta_star)
    D = -model.exact_cov(theta_star)
    xs = np.empty((n_cal, model.dim))
    for i in range(n_cal):
        inc = isremc_increment(model, psi, inner, kernel, h, rng)
        log_v, mean, _ = atoms_log_eval(inc, theta_star)
        xs[i] = math.exp(log_v - log_c) * (mean - tau)
    V_hat = (xs.T @ xs) / n_cal  # E xi = 0 exactly, so moment about zero
    D_inv = np.linalg.inv(D)
    return D_inv @ V_hat @ D_inv


@dataclass
class SllnReport:
    checkpoints: np.ndarray
    median_abs_err: np.ndarray
    band: float
    decreasing: bool
    final_within_band: bool

    @property
    def ok(self) -> bool:
        return self.decreasing and self.final_within_band

    @property
    def final_median_err(self) -> float:
        return float(self.median_abs_err[-1])


def slln_validate(increments: np.ndarray, exact_value: float,
                  schedule=None, band: float | None = None) -> SllnReport:
    """Check running means of conditionally unbiased increments settle on
    the exact value.

    Args:
      increments: (reps, M) array of scalar estimates.
      exact_value: the constant each increment is unbiased for.
      schedule: increasing checkpoint indices (defaults to 4 log-spaced).
      band: absolute tolerance at the final checkpoint; defaults to 4
        standard errors of the final running mean.

    The report flags whether the median absolute error never rises above its
    first-checkpoint value and whether the final median error is inside the
    band.
    """
    increments = np.asarray(increments, dtype=np.float64)
    reps, M = increments.shape
    if schedule is None:
        schedule = np.unique(np.geomspace(max(2, M // 16), M, 4).astype(int))
    schedule = np.asarray(schedule, dtype=int)
    running = np.cumsum(increments, axis=1) / np.arange(1, M + 1)
    errs = np.abs(running[:, schedule - 1] - exact_value)
    med = np.median(errs, axis=0)
    if band is None:
        band = 4.0 * increments.std(ddof=1) / math.sqrt(M)
    decreasing = bool(np.all(med <= med[0] + 1e-12))
    final_ok = bool(med[-1] <= band)
    return SllnReport(schedule, med, float(band), decreasing, final_ok)
