"""Maximization drivers for exact and Monte Carlo log-likelihoods.

All objectives share one contract: calling them at theta returns
(value, gradient, Hessian) with the Hessian of the objective itself
(negative semidefinite for the concave log-likelihoods here).  The Newton
driver ascends along (-H)^{-1} grad with backtracking, so every accepted
step is a non-decrease of the objective; disabling damping takes raw full
steps and is allowed to diverge, which the result reports instead of
raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .estimators import (Atoms, IsremcConfig, PsiBox, atoms_log_eval, compact,
                         isremc_increment, merge_running)
from .model import AutologisticLattice, Binomial, neighbor_counts
from .samplers import BinomialTheta, GibbsKernel, PseudoLikelihood, run_gibbs


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 20
    grad_tol: float = 1e-6
    damping: float = 1.0          # initial step scale in (0, 1]
    backtrack_factor: float = 0.5
    min_step: float = 1e-10
    line_search: bool = True      # False: raw full Newton steps, may diverge

    def __post_init__(self):
        if self.max_iters < 1 or self.grad_tol <= 0:
            raise ConfigError(f"invalid newton config {self}")
        if not 0 < self.damping <= 1 or not 0 < self.backtrack_factor < 1:
            raise ConfigError(f"invalid newton config {self}")


EXACT_NEWTON = NewtonConfig(max_iters=60, grad_tol=1e-8)
MC_NEWTON = NewtonConfig(max_iters=20, grad_tol=1e-6)


@dataclass
class FitResult:
    theta_hat: np.ndarray
    loglik_at_hat: float
    iterations: int
    converged: bool
    grad_norm: float
    trajectory: list = field(default_factory=list)
    n_fallback: int = 0
    n_clamped: int = 0
    message: str = ""
    atoms: object = None  # fitted surrogate's mixture, where one exists


@dataclass
class McLogLik:
    """Monte Carlo log-likelihood l_m(theta) = theta . t_obs - log c_hat(theta)."""

    suffstat_obs: np.ndarray
    norm: Atoms

    def __post_init__(self):
        self.suffstat_obs = np.asarray(self.suffstat_obs, dtype=np.float64)

    def __call__(self, theta: np.ndarray):
        log_c, mean, cov = atoms_log_eval(self.norm, theta)
        value = float(theta @ self.suffstat_obs) - log_c
        return value, self.suffstat_obs - mean, -cov


@dataclass
class ExactLogLik:
    """Exact log-likelihood theta . t_obs - log c(theta) via the model oracle."""

    model: object
    suffstat_obs: np.ndarray

    def __post_init__(self):
        self.suffstat_obs = np.asarray(self.suffstat_obs, dtype=np.float64)

    def __call__(self, theta: np.ndarray):
        log_c, mean, cov = self.model.exact_moments(theta)
        value = float(theta @ self.suffstat_obs) - log_c
        return value, self.suffstat_obs - mean, -cov


@dataclass
class PseudoLogLik:
    """Sum over sites of the conditional Bernoulli log-likelihood.

    A two-parameter logistic regression of each site on (1, occupied
    neighbors); concave with closed-form derivatives.
    """

    y_obs: np.ndarray

    def __post_init__(self):
        self.y_obs = np.asarray(self.y_obs, dtype=np.int8)
        self._y = self.y_obs.reshape(-1).astype(np.float64)
        self._x = np.stack(
            [np.ones(self._y.size), neighbor_counts(self.y_obs).reshape(-1)], axis=1
        )

    def __call__(self, theta: np.ndarray):
        a = self._x @ theta
        value = float(self._y @ a - np.logaddexp(0.0, a).sum())
        p = 1.0 / (1.0 + np.exp(-a))
        grad = (self._y - p) @ self._x
        w = p * (1.0 - p)
        hess = -(self._x * w[:, None]).T @ self._x
        return value, grad, hess


def _ascent_direction(grad: np.ndarray, hess: np.ndarray):
    """Newton direction (-H)^{-1} grad, or a scaled gradient fallback.

    Returns (direction, used_fallback).  Fallback triggers when -H is not
    positive definite, and scales the gradient so its largest component is
    at most 1.
    """
    try:
        chol = np.linalg.cholesky(-hess)
        direction = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        if np.all(np.isfinite(direction)):
            return direction, False
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(grad))))
    return grad / scale, True


def _step(obj, theta, value, grad, hess, cfg: NewtonConfig):
    """One damped ascent step.  Returns (theta_new, used_fallback, ok)."""
    direction, fallback = _ascent_direction(grad, hess)
    if not cfg.line_search:
        return theta + cfg.damping * direction, fallback, True
    step = cfg.damping
    while step >= cfg.min_step:
        cand = theta + step * direction
        cand_value = obj(cand)[0]
        # accept any non-decrease; the tiny slack absorbs roundoff
        if np.isfinite(cand_value) and cand_value >= value - 1e-12:
            return cand, fallback, True
        step *= cfg.backtrack_factor
    return theta, fallback, False


def newton_maximize(obj, theta0, cfg: NewtonConfig = MC_NEWTON) -> FitResult:
    """Damped Newton ascent of a concave objective.

    Args:
      obj: callable theta -> (value, grad, hess) with hess the objective's
        own Hessian (negative semidefinite when concave).
      theta0: start point.
      cfg: iteration/stopping configuration.

    Returns:
      FitResult; ``converged`` means the gradient sup-norm reached
      ``cfg.grad_tol``.  With line search every accepted iterate satisfies
      value_{k+1} >= value_k; without it the iteration may wander and is
      reported as non-converged rather than raising.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    value, grad, hess = obj(theta)
    if not np.isfinite(value):
        raise NumericalError(f"objective non-finite at start {theta}")
    trajectory = [(theta.copy(), value)]
    n_fallback = 0
    message = ""
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        if np.max(np.abs(grad)) <= cfg.grad_tol:
            iterations -= 1
            break
        new_theta, fallback, ok = _step(obj, theta, value, grad, hess, cfg)
        n_fallback += int(fallback)
        if not ok:
            message = "line search exhausted before reaching gradient tolerance"
            break
        theta = new_theta
        value, grad, hess = obj(theta)
        if not np.isfinite(value) or not np.all(np.isfinite(theta)):
            message = "objective or iterate became non-finite (diverged)"
            trajectory.append((theta.copy(), value))
            return FitResult(theta, value, iterations, False,
                             float("inf"), trajectory, n_fallback, 0, message)
        if cfg.line_search:
            assert value >= trajectory[-1][1] - 1e-12, "ascent step decreased objective"
        trajectory.append((theta.copy(), value))
    grad_norm = float(np.max(np.abs(grad)))
    converged = bool(grad_norm <= cfg.grad_tol)
    if not converged and not message:
        message = "iteration limit reached before gradient tolerance"
    return FitResult(theta, value, iterations, converged, grad_norm,
                     trajectory, n_fallback, 0, message)


def _suffstat_of(model, y_or_t) -> np.ndarray:
    """Accept either an outcome or an already-computed statistic vector."""
    arr = np.asarray(y_or_t)
    if isinstance(model, AutologisticLattice):
        if arr.ndim == 2:
            return model.t(arr).astype(np.float64)
        return arr.astype(np.float64).reshape(2)
    if arr.ndim == 0:
        return model.t(int(arr)).astype(np.float64)
    return arr.astype(np.float64).reshape(1)


def benchmark_mcml(model, y_obs, psi, s: int, m: int,
                   cfg: NewtonConfig = MC_NEWTON, rng=None) -> FitResult:
    """Non-adaptive MCML: one Gibbs chain at psi, then Newton on l_m.

    The chain starts from the all-zero lattice, discards s sweeps, and keeps
    m states as atoms (1/m) exp(-psi . t_u).  The resulting c_hat estimates
    c(theta)/c(psi); the dropped c(psi) shifts l_m by a constant and cannot
    move the maximizer, so ``loglik_at_hat`` is reported on that shifted
    scale.
    """
    if not isinstance(model, AutologisticLattice):
        raise ConfigError("benchmark fitting is defined for lattice models")
    if m < 1:
        raise ConfigError(f"chain length must be >= 1, got {m}")
    psi = np.asarray(psi, dtype=np.float64)
    t_obs = _suffstat_of(model, y_obs)
    start = np.zeros((model.d, model.d), dtype=np.int8)
    _, stats = run_gibbs(psi, start, s + m, rng)
    t = stats[s:].astype(np.float64)
    atoms = compact(Atoms(-math.log(m) - t @ psi, t, 1))
    result = newton_maximize(McLogLik(t_obs, atoms), psi, cfg)
    result.atoms = atoms
    return result


def _isremc_pieces(model, psi, y_obs):
    """Instrumental density and pi_psi-preserving kernel for one iteration."""
    if isinstance(model, AutologisticLattice):
        h = PseudoLikelihood(psi, y_obs)
        return h, GibbsKernel(psi)
    h = BinomialTheta(model.n, float(psi[0]))
    return h, _BinomialExactKernel(model, float(psi[0]))


class _BinomialExactKernel:
    """pi_psi is directly samplable for the binomial model, so the kernel
    draws fresh independent states (a perfectly mixing pi_psi-invariant
    kernel); burn-in is irrelevant and skipped without consuming draws."""

    def __init__(self, model, psi: float):
        self.model = model
        self.h = BinomialTheta(model.n, psi)

    def chain(self, y0, burn: int, keep: int, rng) -> np.ndarray:
        ys = self.h.sample_many(rng, keep)
        return np.asarray(ys, dtype=np.float64)[:, None]


def adap_mcml(model, y_obs, psi1, iters: int, cfg_isremc: IsremcConfig,
              psi_box: PsiBox | None = None, cfg: NewtonConfig = MC_NEWTON,
              rng=None) -> FitResult:
    """Adaptive MCML: incremental estimates at a moving instrumental psi.

    Each iteration draws one incremental estimate at psi_m, folds it into
    the running average c_hat_m, and moves psi by a single damped Newton
    ascent step on the current l_m, clamped into psi_box.  The returned fit
    maximizes the final l_m starting from the last psi.

    ``y_obs`` must be a full outcome (lattice or integer): the instrumental
    density is built from it.  ``loglik_at_hat`` is the Monte Carlo
    log-likelihood at the maximizer (absolute scale: the increments estimate
    c itself, not a ratio).
    """
    if iters < 1:
        raise ConfigError(f"iteration count must be >= 1, got {iters}")
    psi = np.asarray(psi1, dtype=np.float64).copy()
    if psi_box is None:
        psi_box = PsiBox.default(model.dim)
    t_obs = _suffstat_of(model, y_obs)
    running = None
    n_clamped = 0
    for m in range(1, iters + 1):
        h, kernel = _isremc_pieces(model, psi, y_obs)
        inc = isremc_increment(model, psi, cfg_isremc, kernel, h, rng)
        running = compact(merge_running(running, inc, m))
        obj = McLogLik(t_obs, running)
        value, grad, hess = obj(psi)
        psi, _, _ = _step(obj, psi, value, grad, hess, cfg)
        psi, clamped = psi_box.clamp(psi)
        n_clamped += int(clamped)
    result = newton_maximize(McLogLik(t_obs, running), psi, cfg)
    result.n_clamped = n_clamped
    result.atoms = running
    return result


def mpl_estimate(y_obs, cfg: NewtonConfig = EXACT_NEWTON) -> FitResult:
    """Maximum pseudo-likelihood estimate for an observed lattice.

    Perfect separation (for instance an all-zero or all-one lattice) makes
    the maximizer run to infinity; that is reported as a non-converged
    result with a diagnostic message, never as a fabricated value.
    """
    y_obs = np.asarray(y_obs, dtype=np.int8)
    obj = PseudoLogLik(y_obs)
    total = int(y_obs.sum())
    if total == 0 or total == y_obs.size:
        return FitResult(np.zeros(2), -math.inf, 0, False, float("inf"), [],
                         0, 0, "perfect separation: constant lattice has no "
                               "finite pseudo-likelihood maximizer")
    result = newton_maximize(obj, np.zeros(2), cfg)
    if not result.converged and np.max(np.abs(result.theta_hat)) > 20.0:
        result.message = ("pseudo-likelihood maximizer appears divergent "
                          "(separation in the site regression)")
    return result


def exact_mle(model, suffstat_obs, cfg: NewtonConfig = EXACT_NEWTON,
              theta0=None) -> FitResult:
    """Exact maximum likelihood via the normalizing-constant oracle.

    The MLE solves E_{pi_theta} t = t_obs; a statistic on the boundary of
    the achievable range has no finite solution, which is reported as a
    non-converged result with a diagnostic.
    """
    t_obs = _suffstat_of(model, suffstat_obs)
    boundary = _boundary_reason(model, t_obs)
    if boundary:
        return FitResult(np.zeros(model.dim), -math.inf, 0, False,
                         float("inf"), [], 0, 0, boundary)
    start = np.zeros(model.dim) if theta0 is None else np.asarray(theta0, float)
    result = newton_maximize(ExactLogLik(model, t_obs), start, cfg)
    if not result.converged and np.max(np.abs(result.theta_hat)) > 20.0:
        result.message = ("maximizer appears divergent; statistic may lie on "
                          "the boundary of the achievable set")
    return result


def _boundary_reason(model, t_obs: np.ndarray) -> str:
    if isinstance(model, Binomial):
        y = t_obs[0]
        if y <= 0 or y >= model.n:
            return (f"statistic {y:g} lies on the boundary of [0, {model.n}]; "
                    "no finite maximizer exists")
        return ""
    ones, pairs = t_obs
    if ones <= 0 or ones >= model.n_sites:
        return (f"site count {ones:g} lies on the boundary of "
                f"[0, {model.n_sites}]; no finite maximizer exists")
    if pairs <= 0 or pairs >= model.max_pairs:
        return (f"pair count {pairs:g} lies on the boundary of "
                f"[0, {model.max_pairs}]; no finite maximizer exists")
    return ""
