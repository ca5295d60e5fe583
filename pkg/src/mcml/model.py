"""Exponential-family models and exact normalizing-constant oracles.

Two models share the density form f_theta(y) = exp(theta . t(y)) relative to
a base measure mu on a finite outcome space:

* ``AutologisticLattice(d)``: y is a d x d binary lattice, t(y) counts
  occupied sites and occupied 4-neighbor pairs (unordered, free boundary),
  mu is counting measure.
* ``Binomial(n)``: y is an integer in {0..n}, t(y) = (y,), and the (n choose y)
  factor is absorbed into mu.

The normalizing constant c(theta) = sum_y exp(theta . t(y)) mu(y) is exactly
computable here: in closed form for the binomial, by transfer-matrix dynamic
programming over rows for lattices up to a feasibility cap, and by brute-force
enumeration for d <= 4 as an independent cross-check.  The same recursions
yield the exact mean and covariance of t under pi_theta, i.e. the gradient
and Hessian of log c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InfeasibleExactError

TRANSFER_CAP = 12
BRUTE_CAP = 4

# Column blocks keep the transfer-matrix temporaries near (2^d x block) floats
# instead of (2^d x 2^d) at d = 11, 12.
_BLOCK_ENTRIES = 1 << 21


def suff_stat(y: np.ndarray) -> np.ndarray:
    """Sufficient statistic (ones, pairs) of a binary lattice.

    ``pairs`` counts each unordered horizontally or vertically adjacent
    occupied pair exactly once; the boundary is free (no wraparound).
    """
    y = np.asarray(y)
    ones = int(y.sum())
    pairs = int((y[1:, :] * y[:-1, :]).sum() + (y[:, 1:] * y[:, :-1]).sum())
    return np.array([ones, pairs], dtype=np.int64)


def neighbor_counts(y: np.ndarray) -> np.ndarray:
    """Per-site number of occupied 4-neighbors (free boundary)."""
    y = np.asarray(y)
    s = np.zeros(y.shape, dtype=np.int64)
    s[1:, :] += y[:-1, :]
    s[:-1, :] += y[1:, :]
    s[:, 1:] += y[:, :-1]
    s[:, :-1] += y[:, 1:]
    return s


@dataclass(frozen=True)
class AutologisticLattice:
    """d x d binary lattice with singleton and pairwise natural parameters."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"lattice side must be >= 1, got {self.d}")

    @property
    def dim(self) -> int:
        return 2

    @property
    def n_sites(self) -> int:
        return self.d * self.d

    @property
    def max_pairs(self) -> int:
        return 2 * self.d * (self.d - 1)

    def t(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (self.d, self.d):
            raise ConfigError(f"expected a {self.d}x{self.d} lattice, got shape {y.shape}")
        return suff_stat(y)

    def t_many(self, ys: np.ndarray) -> np.ndarray:
        ys = np.asarray(ys)
        ones = ys.sum(axis=(1, 2))
        pairs = (ys[:, 1:, :] * ys[:, :-1, :]).sum(axis=(1, 2)) + (
            ys[:, :, 1:] * ys[:, :, :-1]
        ).sum(axis=(1, 2))
        return np.stack([ones, pairs], axis=1).astype(np.float64)

    def log_base(self, y: np.ndarray) -> float:
        return 0.0

    def log_base_many(self, ys: np.ndarray) -> np.ndarray:
        return np.zeros(len(ys))

    def exact_log_norm(self, theta: np.ndarray) -> float:
        return self._transfer(theta)[0]

    def exact_mean(self, theta: np.ndarray) -> np.ndarray:
        return self._transfer(theta)[1]

    def exact_cov(self, theta: np.ndarray) -> np.ndarray:
        return self._transfer(theta)[2]

    def exact_moments(self, theta: np.ndarray):
        return self._transfer(theta)

    def _row_tables(self):
        d = self.d
        codes = np.arange(1 << d, dtype=np.uint32)
        ones = np.bitwise_count(codes).astype(np.float64)
        inrow = np.bitwise_count(codes & (codes >> 1)).astype(np.float64)
        return codes, ones, inrow

    def _transfer(self, theta: np.ndarray):
        """Exact (log c, E t, Var t) by row-by-row dynamic programming.

        Row states are the 2^d bit patterns of one lattice row.  The partial
        sum over the first k rows is carried as log A(z) for each terminal
        row state z, together with the conditional first and second moments
        of t restricted to those rows.  Appending a row updates the moments
        as mixtures under the normalized transition weights, so the final
        mean and covariance are exact rather than finite differences.
        """
        theta = np.asarray(theta, dtype=np.float64)
        _check_theta(theta, 2)
        d = self.d
        if d > TRANSFER_CAP:
            raise InfeasibleExactError(
                f"exact lattice computation capped at d={TRANSFER_CAP}, got d={d}"
            )
        th0, th1 = theta
        codes, ones, inrow = self._row_tables()
        S = 1 << d
        base = th0 * ones + th1 * inrow
        log_a = base.copy()
        m0 = ones.copy()
        m1 = inrow.copy()
        s00 = ones * ones
        s01 = ones * inrow
        s11 = inrow * inrow
        block = max(1, min(S, _BLOCK_ENTRIES // S))
        for _ in range(1, d):
            new = [np.empty(S) for _ in range(6)]
            for lo in range(0, S, block):
                z = codes[lo:lo + block]
                cross = np.bitwise_count(
                    codes[:, None] & z[None, :]
                ).astype(np.float64)
                sc = log_a[:, None] + th1 * cross
                mx = sc.max(axis=0)
                p = np.exp(sc - mx[None, :])
                colsum = p.sum(axis=0)
                p /= colsum[None, :]
                pk = p * cross
                # conditional moments of the previous rows given new row z,
                # plus the new row's own contribution to t
                d0 = ones[lo:lo + block]
                d1 = inrow[lo:lo + block]
                pm0 = m0 @ p
                pm1 = m1 @ p
                k1 = pk.sum(axis=0)
                new[0][lo:lo + block] = mx + np.log(colsum) + base[lo:lo + block]
                new[1][lo:lo + block] = pm0 + d0
                new[2][lo:lo + block] = pm1 + d1 + k1
                new[3][lo:lo + block] = s00 @ p + 2.0 * d0 * pm0 + d0 * d0
                new[4][lo:lo + block] = (
                    s01 @ p + m0 @ pk + d1 * pm0 + d0 * (pm1 + d1 + k1)
                )
                new[5][lo:lo + block] = (
                    s11 @ p + 2.0 * (d1 * pm1 + m1 @ pk)
                    + d1 * d1 + 2.0 * d1 * k1 + (pk * cross).sum(axis=0)
                )
            log_a, m0, m1, s00, s01, s11 = new
        mx = log_a.max()
        w = np.exp(log_a - mx)
        tot = w.sum()
        q = w / tot
        log_c = float(mx + np.log(tot))
        mean = np.array([q @ m0, q @ m1])
        second = np.array([[q @ s00, q @ s01], [q @ s01, q @ s11]])
        cov = second - np.outer(mean, mean)
        return log_c, mean, cov

    def enumerate_support(self):
        """All outcomes for d <= BRUTE_CAP: (t table, log mu, packed codes)."""
        d = self.d
        if d > BRUTE_CAP:
            raise InfeasibleExactError(
                f"enumeration capped at d={BRUTE_CAP}, got d={d}"
            )
        n = d * d
        codes = np.arange(1 << n, dtype=np.uint64)
        bits = (codes[:, None] >> np.arange(n, dtype=np.uint64)[None, :]) & 1
        grids = bits.astype(np.int8).reshape(-1, d, d)
        ones = grids.sum(axis=(1, 2))
        pairs = (grids[:, 1:, :] * grids[:, :-1, :]).sum(axis=(1, 2)) + (
            grids[:, :, 1:] * grids[:, :, :-1]
        ).sum(axis=(1, 2))
        t = np.stack([ones, pairs], axis=1).astype(np.float64)
        return t, np.zeros(len(codes)), codes

    def decode(self, code: int) -> np.ndarray:
        """Inverse of encode: packed integer -> lattice (row-major bits)."""
        n = self.d * self.d
        bits = (int(code) >> np.arange(n)) & 1
        return bits.astype(np.int8).reshape(self.d, self.d)

    def encode(self, y: np.ndarray) -> int:
        flat = np.asarray(y).reshape(-1).astype(np.uint64)
        return int((flat << np.arange(flat.size, dtype=np.uint64)).sum())

    def brute_log_norm(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        _check_theta(theta, 2)
        t, _, _ = self.enumerate_support()
        lw = t @ theta
        mx = lw.max()
        return float(mx + np.log(np.exp(lw - mx).sum()))

    def brute_moments(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        _check_theta(theta, 2)
        t, _, _ = self.enumerate_support()
        lw = t @ theta
        mx = lw.max()
        w = np.exp(lw - mx)
        q = w / w.sum()
        log_c = float(mx + np.log(w.sum()))
        mean = q @ t
        cov = (t * q[:, None]).T @ t - np.outer(mean, mean)
        return log_c, mean, cov


@dataclass(frozen=True)
class Binomial:
    """Toy model f_theta(y) = exp(theta*y) against base measure (n choose y)."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"binomial n must be >= 1, got {self.n}")

    @property
    def dim(self) -> int:
        return 1

    def t(self, y) -> np.ndarray:
        return np.array([y], dtype=np.int64)

    def t_many(self, ys) -> np.ndarray:
        return np.asarray(ys, dtype=np.float64)[:, None]

    def log_base(self, y) -> float:
        y = int(y)
        if not 0 <= y <= self.n:
            raise ConfigError(f"binomial outcome {y} outside 0..{self.n}")
        return math.lgamma(self.n + 1) - math.lgamma(y + 1) - math.lgamma(self.n - y + 1)

    def log_base_many(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.int64)
        if ys.min() < 0 or ys.max() > self.n:
            raise ConfigError("binomial outcome outside 0..n")
        return (math.lgamma(self.n + 1)
                - _lgamma_vec(ys + 1) - _lgamma_vec(self.n - ys + 1))

    def exact_log_norm(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        _check_theta(theta, 1)
        # c(theta) = (1 + e^theta)^n
        return float(self.n * np.logaddexp(0.0, theta[0]))

    def exact_mean(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        _check_theta(theta, 1)
        p = _sigmoid(theta[0])
        return np.array([self.n * p])

    def exact_cov(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        _check_theta(theta, 1)
        p = _sigmoid(theta[0])
        return np.array([[self.n * p * (1.0 - p)]])

    def exact_moments(self, theta: np.ndarray):
        return self.exact_log_norm(theta), self.exact_mean(theta), self.exact_cov(theta)

    def enumerate_support(self):
        ys = np.arange(self.n + 1)
        t = ys[:, None].astype(np.float64)
        logmu = np.array([self.log_base(y) for y in ys])
        return t, logmu, ys


_lgamma_vec = np.vectorize(math.lgamma, otypes=[np.float64])


def _sigmoid(a: float) -> float:
    return 0.5 * (1.0 + math.tanh(0.5 * a))


def _check_theta(theta: np.ndarray, dim: int) -> None:
    if theta.shape != (dim,):
        raise ConfigError(f"theta must have shape ({dim},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ConfigError(f"theta must be finite, got {theta}")


def log_unnorm_density(model, theta: np.ndarray, y) -> float:
    """log f_theta(y) = theta . t(y); base-measure factors live in mu, not here."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    _check_theta(theta, model.dim)
    return float(theta @ model.t(y))


def exact_log_norm(model, theta: np.ndarray) -> float:
    return model.exact_log_norm(np.asarray(theta, dtype=np.float64))


def exact_mean_suffstat(model, theta: np.ndarray) -> np.ndarray:
    return model.exact_mean(np.asarray(theta, dtype=np.float64))


def exact_cov_suffstat(model, theta: np.ndarray) -> np.ndarray:
    return model.exact_cov(np.asarray(theta, dtype=np.float64))
