"""Monte Carlo estimators of the normalizing constant and its derivatives.

Every estimator here returns an :class:`Atoms` value: a positive mixture
c_hat(theta) = sum_j a_j exp(theta . t_j).  Storing the atoms (a_j, t_j)
instead of values on a theta grid makes c_hat, grad c_hat and hess c_hat
exactly evaluable at any theta, which is what Newton-Raphson on the Monte
Carlo log-likelihood needs.  log c_hat is convex in theta and its Hessian is
a covariance matrix under the normalized atom weights, hence positive
semidefinite everywhere.

Weight arithmetic stays in log space end to end; the value-domain
:func:`atoms_eval` is the only place an exp of an unshifted magnitude can
occur and it raises rather than returning inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, DegenerateWeightsError,
                     EvalOverflowError, NumericalError)

_LOG_DBL_MAX = math.log(np.finfo(np.float64).max)


@dataclass(frozen=True)
class Atoms:
    """Positive exponential mixture sum_j exp(log_w[j]) * exp(theta . t[j])."""

    log_w: np.ndarray
    t: np.ndarray
    m_effective: int = 1

    def __post_init__(self):
        object.__setattr__(self, "log_w", np.asarray(self.log_w, dtype=np.float64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))
        if self.log_w.ndim != 1 or self.t.ndim != 2 or len(self.log_w) != len(self.t):
            raise ConfigError("atoms need matching 1-d weights and 2-d stats")
        if len(self.log_w) == 0:
            raise NumericalError("empty atom set: estimate of c is identically 0")

    def __len__(self) -> int:
        return len(self.log_w)

    @property
    def dim(self) -> int:
        return self.t.shape[1]


@dataclass(frozen=True)
class IsremcConfig:
    """Sizes of one incremental estimate: l proposals, r chains, s burn-in, n kept."""

    l: int
    r: int
    s: int
    n: int

    def __post_init__(self):
        if self.l < 1 or self.r < 1 or self.s < 0 or self.n < 1:
            raise ConfigError(f"invalid isremc config {self}")


@dataclass(frozen=True)
class PsiBox:
    """Componentwise bounds keeping the instrumental parameter compact."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.float64))
        if not np.all(self.lower < self.upper):
            raise ConfigError("psi box needs lower < upper componentwise")

    @classmethod
    def default(cls, dim: int, half_width: float = 10.0):
        return cls(-half_width * np.ones(dim), half_width * np.ones(dim))

    def clamp(self, psi: np.ndarray):
        clipped = np.clip(psi, self.lower, self.upper)
        return clipped, bool(np.any(clipped != psi))


def atoms_log_eval(est: Atoms, theta: np.ndarray):
    """(log c_hat, grad log c_hat, hess log c_hat) at theta, max-shift stable.

    The gradient is the mean of t and the Hessian the covariance of t under
    the normalized weights p_j proportional to exp(log_w[j] + theta . t[j]),
    so the Hessian is positive semidefinite by construction.
    """
    if len(est) == 0:
        raise NumericalError("cannot evaluate an empty estimate (m = 0)")
    theta = np.asarray(theta, dtype=np.float64)
    z = est.log_w + est.t @ theta
    mx = z.max()
    if not np.isfinite(mx):
        raise NumericalError(f"non-finite atom exponent at theta={theta}")
    w = np.exp(z - mx)
    s = w.sum()
    p = w / s
    log_c = float(mx + np.log(s))
    mean = p @ est.t
    centered = est.t - mean
    cov = (centered * p[:, None]).T @ centered
    return log_c, mean, cov


def atoms_eval(est: Atoms, theta: np.ndarray):
    """Raw (value, gradient, Hessian) of c_hat at theta.

    Unlike the log-domain form this can overflow double precision for large
    theta . t; that raises with the offending exponent range attached.
    """
    log_c, mean, cov = atoms_log_eval(est, theta)
    if log_c > _LOG_DBL_MAX:
        z = est.t @ np.asarray(theta, dtype=np.float64)
        raise EvalOverflowError(
            f"c_hat overflows double: log value {log_c:.3g}, "
            f"theta.t range [{z.min():.3g}, {z.max():.3g}]"
        )
    value = math.exp(log_c)
    grad = value * mean
    hess = value * (cov + np.outer(mean, mean))
    return value, grad, hess


def compact(est: Atoms) -> Atoms:
    """Merge atoms with identical t, summing weights in log space.

    Evaluation at every theta is unchanged; the atom count is bounded by the
    number of distinct sufficient-statistic values.
    """
    uniq, inverse = np.unique(est.t, axis=0, return_inverse=True)
    if len(uniq) == len(est):
        return est
    log_w = np.full(len(uniq), -np.inf)
    order = np.argsort(inverse, kind="stable")
    start = 0
    z = est.log_w[order]
    groups = inverse[order]
    for i in range(len(uniq)):
        end = start
        while end < len(groups) and groups[end] == i:
            end += 1
        log_w[i] = _logsumexp(z[start:end])
        start = end
    return Atoms(log_w, uniq, est.m_effective)


def merge_running(est: Atoms | None, increment: Atoms, m: int) -> Atoms:
    """Running average c_m = ((m-1)/m) c_{m-1} + (1/m) increment, as atoms."""
    if m < 1:
        raise NumericalError(f"running-average index must be >= 1, got {m}")
    if m == 1 or est is None or len(est) == 0:
        return Atoms(increment.log_w.copy(), increment.t.copy(), 1)
    log_w = np.concatenate([
        est.log_w + math.log((m - 1) / m),
        increment.log_w - math.log(m),
    ])
    t = np.concatenate([est.t, increment.t])
    return Atoms(log_w, t, m)


def is_atoms(model, h, m: int, rng, vectorized: bool = True) -> Atoms:
    """Importance-sampling atoms from m i.i.d. draws of h.

    Each draw contributes the atom (mu(Y)/(m h(Y)), t(Y)); evaluating the
    result at theta gives the plain estimate (1/m) sum f_theta(Y_j)/h(Y_j).
    """
    if m < 1:
        raise NumericalError(f"importance sample size must be >= 1, got {m}")
    if vectorized and hasattr(h, "sample_many"):
        ys = h.sample_many(rng, m)
    else:
        ys = [h.sample(rng) for _ in range(m)]
    if vectorized and hasattr(h, "log_density_many"):
        ys = np.asarray(ys)
        log_h = h.log_density_many(ys)
        if np.any(log_h == -math.inf):
            j = int(np.argmax(log_h == -math.inf))
            raise DegenerateWeightsError(
                f"instrumental density is zero at a sampled outcome (draw {j})"
            )
        log_w = model.log_base_many(ys) - math.log(m) - log_h
        return Atoms(log_w, model.t_many(ys), 1)
    log_w = np.empty(m)
    t = np.empty((m, model.dim))
    for j, y in enumerate(ys):
        log_h = h.log_density(y)
        if log_h == -math.inf:
            raise DegenerateWeightsError(
                f"instrumental density is zero at a sampled outcome (draw {j})"
            )
        log_w[j] = model.log_base(y) - math.log(m) - log_h
        t[j] = model.t(y)
    return Atoms(log_w, t, 1)


def is_estimate(model, theta, h, m: int, rng) -> float:
    """Plain importance-sampling estimate of c(theta) from m draws of h."""
    est = is_atoms(model, h, m, rng)
    value, _, _ = atoms_eval(est, np.asarray(theta, dtype=np.float64))
    return value


def adapis_run(model, psi_update, m: int, rng, *, psi1, h_family) -> Atoms:
    """Sequential importance sampling with an adapted instrumental parameter.

    Args:
      model: model providing t and the base measure.
      psi_update: rule (j, psi_j, atoms so far) -> psi_{j+1}; it sees only
        the history, never the upcoming draw.
      m: number of draws.
      rng: numpy Generator.
      psi1: instrumental parameter for the first draw.
      h_family: map psi -> instrumental density.

    Returns:
      Atoms whose evaluation at theta is (1/m) sum_j f_theta(Y_j)/h_{psi_j}(Y_j).
    """
    if m < 1:
        raise NumericalError(f"adaptive run length must be >= 1, got {m}")
    psi = np.asarray(psi1, dtype=np.float64)
    log_w = np.empty(m)
    t = np.empty((m, model.dim))
    for j in range(m):
        h = h_family(psi)
        y = h.sample(rng)
        log_h = h.log_density(y)
        if log_h == -math.inf:
            raise DegenerateWeightsError(
                f"instrumental density is zero at a sampled outcome (draw {j})"
            )
        log_w[j] = model.log_base(y) - math.log(m) - log_h
        t[j] = model.t(y)
        partial = Atoms(log_w[:j + 1] + math.log(m) - math.log(j + 1), t[:j + 1], 1)
        psi = np.asarray(psi_update(j + 1, psi, partial), dtype=np.float64)
    return Atoms(log_w, t, 1)


def isremc_increment(model, psi, cfg: IsremcConfig, kernel, h, rng) -> Atoms:
    """One importance-sampling-with-resampling-and-MCMC incremental estimate.

    Steps: draw l proposals from h; weight them by f_psi/h; resample r start
    states multinomially by normalized weight; run the pi_psi-preserving
    kernel s burn-in plus n kept steps from each; return atoms
    (W_total/(l r n)) exp(-psi . t), t at every kept state.  The evaluation
    at any theta is unbiased for c(theta) whatever psi is.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if hasattr(h, "sample_many") and hasattr(h, "log_density_many"):
        ys = h.sample_many(rng, cfg.l)
        log_h = h.log_density_many(np.asarray(ys))
        if np.any(log_h == -math.inf):
            i = int(np.argmax(log_h == -math.inf))
            raise DegenerateWeightsError(
                f"instrumental density is zero at a sampled outcome (proposal {i})"
            )
        log_w = model.t_many(np.asarray(ys)) @ psi + model.log_base_many(np.asarray(ys)) - log_h
    else:
        ys = [h.sample(rng) for _ in range(cfg.l)]
        log_w = np.empty(cfg.l)
        for i, y in enumerate(ys):
            log_h = h.log_density(y)
            if log_h == -math.inf:
                raise DegenerateWeightsError(
                    f"instrumental density is zero at a sampled outcome (proposal {i})"
                )
            log_w[i] = float(psi @ model.t(y)) + model.log_base(y) - log_h
    log_w_total = _logsumexp(log_w)
    if log_w_total == -math.inf:
        raise DegenerateWeightsError("all importance weights are zero")
    probs = np.exp(log_w - log_w_total)
    probs /= probs.sum()
    picks = rng.choice(cfg.l, size=cfg.r, p=probs)
    t_rows = []
    for k in picks:
        t_rows.append(kernel.chain(ys[int(k)], cfg.s, cfg.n, rng))
    t = np.concatenate(t_rows, axis=0)
    base = log_w_total - math.log(cfg.l) - math.log(cfg.r) - math.log(cfg.n)
    log_a = base - t @ psi
    return Atoms(log_a, t, 1)


def _logsumexp(z: np.ndarray) -> float:
    if len(z) == 0:
        return -math.inf
    mx = z.max()
    if mx == -math.inf:
        return -math.inf
    return float(mx + np.log(np.exp(z - mx).sum()))
