"""Random-variate generation: Gibbs kernel, instrumental densities, rng plumbing.

Every sampler is bit-reproducible under a fixed seed.  Replications derive
their generators from a master seed through ``rep_seed``, so parallel fan-out
cannot change results regardless of scheduling.

Instrumental densities expose ``sample(rng)`` and ``log_density(y)`` with the
density exactly normalized as a pmf on the outcome space; importance weights
built from them therefore involve no unknown constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DegenerateWeightsError
from .model import neighbor_counts

# ----------------------------------------------------------------------
# rng plumbing


def rep_seed(master_seed: int, rep: int) -> int:
    """Derived 64-bit seed for replication ``rep``; independent of scheduling."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(rep),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))


# ----------------------------------------------------------------------
# Gibbs sampler for the autologistic lattice


@njit(cache=True)
def _gibbs_sweeps(state, th0, th1, u, stats):  # pragma: no cover - jit
    d = state.shape[0]
    for w in range(u.shape[0]):
        for i in range(d):
            for j in range(d):
                s = 0
                if i > 0:
                    s += state[i - 1, j]
                if i < d - 1:
                    s += state[i + 1, j]
                if j > 0:
                    s += state[i, j - 1]
                if j < d - 1:
                    s += state[i, j + 1]
                a = th0 + th1 * s
                p = 1.0 / (1.0 + np.exp(-a))
                state[i, j] = 1 if u[w, i, j] < p else 0
        ones = 0
        pairs = 0
        for i in range(d):
            for j in range(d):
                v = state[i, j]
                ones += v
                if i + 1 < d:
                    pairs += v * state[i + 1, j]
                if j + 1 < d:
                    pairs += v * state[i, j + 1]
        stats[w, 0] = ones
        stats[w, 1] = pairs


@njit(cache=True)
def _gibbs_sweeps_codes(state, th0, th1, u, stats, codes):  # pragma: no cover
    d = state.shape[0]
    for w in range(u.shape[0]):
        for i in range(d):
            for j in range(d):
                s = 0
                if i > 0:
                    s += state[i - 1, j]
                if i < d - 1:
                    s += state[i + 1, j]
                if j > 0:
                    s += state[i, j - 1]
                if j < d - 1:
                    s += state[i, j + 1]
                a = th0 + th1 * s
                p = 1.0 / (1.0 + np.exp(-a))
                state[i, j] = 1 if u[w, i, j] < p else 0
        ones = 0
        pairs = 0
        c = np.uint64(0)
        k = 0
        for i in range(d):
            for j in range(d):
                v = state[i, j]
                ones += v
                if i + 1 < d:
                    pairs += v * state[i + 1, j]
                if j + 1 < d:
                    pairs += v * state[i, j + 1]
                if v == 1:
                    c |= np.uint64(1) << np.uint64(k)
                k += 1
        stats[w, 0] = ones
        stats[w, 1] = pairs
        codes[w] = c


def gibbs_conditional(theta: np.ndarray, y: np.ndarray, site) -> float:
    """P(y_site = 1 | rest) = logistic(theta0 + theta1 * occupied neighbors)."""
    i, j = site
    d = y.shape[0]
    if not (0 <= i < d and 0 <= j < d):
        raise ConfigError(f"site {site} outside {d}x{d} lattice")
    s = 0
    if i > 0:
        s += y[i - 1, j]
    if i < d - 1:
        s += y[i + 1, j]
    if j > 0:
        s += y[i, j - 1]
    if j < d - 1:
        s += y[i, j + 1]
    a = float(theta[0]) + float(theta[1]) * s
    return 0.5 * (1.0 + math.tanh(0.5 * a))


def run_gibbs(theta, start, sweeps: int, rng, record_codes: bool = False):
    """Deterministic row-major scan Gibbs chain at theta.

    Args:
      theta: natural parameter (2,).
      start: initial lattice; copied, never mutated.
      sweeps: number of full-lattice sweeps.
      rng: numpy Generator; consumes exactly sweeps*d*d uniforms.
      record_codes: additionally return the packed bit code of each state
        (row-major, bit k = site k), only valid for d*d <= 64.

    Returns:
      (final lattice, per-sweep suff stats (sweeps, 2) int64[, codes uint64]).

    Uniforms are drawn in bounded chunks; the chunking is invisible to the
    stream, so results depend only on (theta, start, sweeps, seed).
    """
    state = np.array(start, dtype=np.int8, copy=True)
    d = state.shape[0]
    if state.shape != (d, d):
        raise ConfigError(f"lattice must be square, got {state.shape}")
    if record_codes and d * d > 64:
        raise ConfigError("state codes only available for d*d <= 64")
    th0, th1 = float(theta[0]), float(theta[1])
    stats = np.empty((sweeps, 2), dtype=np.int64)
    codes = np.empty(sweeps, dtype=np.uint64) if record_codes else None
    chunk = max(1, (1 << 20) // (d * d))
    done = 0
    while done < sweeps:
        k = min(chunk, sweeps - done)
        u = rng.random((k, d, d))
        if record_codes:
            _gibbs_sweeps_codes(state, th0, th1, u,
                                stats[done:done + k], codes[done:done + k])
        else:
            _gibbs_sweeps(state, th0, th1, u, stats[done:done + k])
        done += k
    if record_codes:
        return state, stats, codes
    return state, stats


def gibbs_sweep(theta, y, rng) -> np.ndarray:
    """One full sweep; returns a new lattice, input untouched."""
    final, _ = run_gibbs(theta, y, 1, rng)
    return final


class GibbsKernel:
    """Markov kernel preserving pi_psi: burn-in then averaged sweeps."""

    def __init__(self, psi):
        self.psi = np.asarray(psi, dtype=np.float64)

    def chain(self, y0, burn: int, keep: int, rng) -> np.ndarray:
        _, stats = run_gibbs(self.psi, y0, burn + keep, rng)
        return stats[burn:].astype(np.float64)


class IdentityKernel:
    """Degenerate kernel: repeats the start state (preserves every law)."""

    def __init__(self, model):
        self.model = model

    def chain(self, y0, burn: int, keep: int, rng) -> np.ndarray:
        t = self.model.t(y0).astype(np.float64)
        return np.tile(t, (keep, 1))


# ----------------------------------------------------------------------
# Instrumental densities


@dataclass
class PseudoLikelihood:
    """Product density with site fields taken from the observed lattice.

    Site r is an independent Bernoulli with success probability
    logistic(psi0 + psi1 * (occupied neighbors of r in y_obs)); the product
    form makes the normalization exact site-by-site.
    """

    psi: np.ndarray
    y_obs: np.ndarray
    _logp1: np.ndarray = field(init=False, repr=False)
    _logp0: np.ndarray = field(init=False, repr=False)
    _p1: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.float64)
        self.y_obs = np.asarray(self.y_obs, dtype=np.int8)
        a = self.psi[0] + self.psi[1] * neighbor_counts(self.y_obs)
        self._logp1 = -np.logaddexp(0.0, -a)
        self._logp0 = -np.logaddexp(0.0, a)
        self._p1 = np.exp(self._logp1)

    @property
    def d(self) -> int:
        return self.y_obs.shape[0]

    def sample(self, rng) -> np.ndarray:
        u = rng.random(self.y_obs.shape)
        return (u < self._p1).astype(np.int8)

    def sample_many(self, rng, count: int) -> np.ndarray:
        u = rng.random((count,) + self.y_obs.shape)
        return (u < self._p1[None, :, :]).astype(np.int8)

    def log_density(self, y) -> float:
        y = np.asarray(y)
        if y.shape != self.y_obs.shape:
            raise ConfigError(f"lattice shape {y.shape} != {self.y_obs.shape}")
        return float(np.where(y == 1, self._logp1, self._logp0).sum())

    def log_density_many(self, ys) -> np.ndarray:
        ys = np.asarray(ys)
        return np.where(ys == 1, self._logp1[None], self._logp0[None]).sum(axis=(1, 2))


def pseudolik_sample(psi, y_obs, rng) -> np.ndarray:
    return PseudoLikelihood(psi, y_obs).sample(rng)


def pseudolik_log_density(psi, y_obs, y) -> float:
    return PseudoLikelihood(psi, y_obs).log_density(y)


@dataclass
class BinomialUniform:
    """Uniform pmf on {0..n}."""

    n: int

    def sample(self, rng) -> int:
        return int(rng.integers(0, self.n + 1))

    def sample_many(self, rng, count: int) -> np.ndarray:
        return rng.integers(0, self.n + 1, size=count)

    def log_density(self, y) -> float:
        if 0 <= int(y) <= self.n:
            return -math.log(self.n + 1)
        return -math.inf

    def log_density_many(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.int64)
        out = np.full(len(ys), -math.inf)
        ok = (ys >= 0) & (ys <= self.n)
        out[ok] = -math.log(self.n + 1)
        return out


@dataclass
class BinomialTheta:
    """pi_psi itself: Binomial(n, logistic(psi)) as a normalized pmf."""

    n: int
    psi: float

    def __post_init__(self):
        self.psi = float(np.asarray(self.psi).reshape(-1)[0])

    @property
    def p(self) -> float:
        return 0.5 * (1.0 + math.tanh(0.5 * self.psi))

    def sample(self, rng) -> int:
        return int(rng.binomial(self.n, self.p))

    def sample_many(self, rng, count: int) -> np.ndarray:
        return rng.binomial(self.n, self.p, size=count)

    def log_density(self, y) -> float:
        y = int(y)
        if not 0 <= y <= self.n:
            return -math.inf
        logc = math.lgamma(self.n + 1) - math.lgamma(y + 1) - math.lgamma(self.n - y + 1)
        return logc + y * self.psi - self.n * np.logaddexp(0.0, self.psi)

    def log_density_many(self, ys) -> np.ndarray:
        return np.array([self.log_density(y) for y in np.asarray(ys)])


class BinomialOptimal:
    """Minimum-asymptotic-variance pmf for the binomial toy model.

    Masses are proportional to C(n,y) |y - y_obs| p^y (1-p)^(n-y) with
    p = logistic(theta); the pmf is exactly zero at y = y_obs.
    """

    def __init__(self, n: int, y_obs: int, theta):
        theta = float(np.asarray(theta).reshape(-1)[0])
        if not 0 <= y_obs <= n:
            raise ConfigError(f"y_obs={y_obs} outside 0..{n}")
        ys = np.arange(n + 1)
        logbin = (math.lgamma(n + 1)
                  - np.array([math.lgamma(y + 1) + math.lgamma(n - y + 1) for y in ys]))
        logmass = logbin + ys * theta - n * np.logaddexp(0.0, theta)
        mass = np.abs(ys - y_obs) * np.exp(logmass - logmass.max())
        tot = mass.sum()
        if tot <= 0.0:
            raise ConfigError("optimal instrumental pmf has all-zero masses")
        self.n = n
        self.y_obs = int(y_obs)
        self.pmf = mass / tot
        with np.errstate(divide="ignore"):
            self._log_pmf = np.log(self.pmf)

    def sample(self, rng) -> int:
        return int(rng.choice(self.n + 1, p=self.pmf))

    def sample_many(self, rng, count: int) -> np.ndarray:
        return rng.choice(self.n + 1, size=count, p=self.pmf)

    def log_density(self, y) -> float:
        y = int(y)
        if not 0 <= y <= self.n:
            return -math.inf
        return float(self._log_pmf[y])

    def log_density_many(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.int64)
        out = np.full(len(ys), -math.inf)
        ok = (ys >= 0) & (ys <= self.n)
        out[ok] = self._log_pmf[ys[ok]]
        return out


def binomial_sample(h, rng) -> int:
    return h.sample(rng)


class TabularDensity:
    """Explicit pmf over an enumerated finite outcome space.

    Outcomes are stored as integer keys (packed lattice codes or binomial
    values); ``decode``/``encode`` translate between keys and outcomes.
    """

    def __init__(self, keys, log_pmf, decode=None, encode=None):
        self.keys = np.asarray(keys)
        self.log_pmf = np.asarray(log_pmf, dtype=np.float64)
        if self.keys.shape != self.log_pmf.shape:
            raise ConfigError("keys and log_pmf must have equal length")
        self.pmf = np.exp(self.log_pmf)
        s = self.pmf.sum()
        if not np.isfinite(s) or abs(s - 1.0) > 1e-8:
            raise ConfigError(f"tabular pmf sums to {s}, not 1")
        self._decode = decode if decode is not None else (lambda k: int(k))
        self._encode = encode if encode is not None else (lambda y: int(y))
        self._index = {int(k): i for i, k in enumerate(self.keys)}

    @classmethod
    def from_masses(cls, model, masses, keys=None):
        masses = np.asarray(masses, dtype=np.float64)
        if np.any(masses < 0) or masses.sum() <= 0:
            raise DegenerateWeightsError("pmf masses must be nonnegative, not all zero")
        if keys is None:
            _, _, keys = model.enumerate_support()
        with np.errstate(divide="ignore"):
            log_pmf = np.log(masses / masses.sum())
        decode = getattr(model, "decode", None)
        encode = getattr(model, "encode", None)
        return cls(keys, log_pmf, decode=decode, encode=encode)

    @classmethod
    def exact_target(cls, model, theta):
        """pi_theta itself on an enumerable space (zero-variance oracle)."""
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        t, logmu, keys = model.enumerate_support()
        lw = t @ theta + logmu
        log_pmf = lw - model.exact_log_norm(theta)
        decode = getattr(model, "decode", None)
        encode = getattr(model, "encode", None)
        return cls(keys, log_pmf, decode=decode, encode=encode)

    def sample(self, rng):
        i = int(rng.choice(len(self.keys), p=self.pmf))
        return self._decode(self.keys[i])

    def sample_many(self, rng, count: int):
        idx = rng.choice(len(self.keys), size=count, p=self.pmf)
        return [self._decode(self.keys[i]) for i in idx]

    def log_density(self, y) -> float:
        i = self._index.get(self._encode(y))
        if i is None:
            return -math.inf
        return float(self.log_pmf[i])
