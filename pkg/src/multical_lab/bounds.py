"""Concentration and online-to-batch transfer terms, with Monte Carlo coverage checks.

The universal constants left abstract in the analysis are explicit keyword
arguments: ``C`` for the variance-adaptive Freedman bound and ``c_star`` for
the light/heavy bucket threshold ``tau = c_star L / T``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from scipy import optimize, stats

from .core import ValidationError, stream

FREEDMAN_C = 4.0


def azuma_transfer(K: int, n_groups: int, T: int) -> float:
    """``2 sqrt(8 log N / T)`` with ``N = max(e, |G| 2^K)``."""
    if K < 0 or n_groups < 1 or T < 1:
        raise ValidationError("need K >= 0, |G| >= 1 and T >= 1")
    log_n = max(1.0, math.log(n_groups) + K * math.log(2))
    return 2 * math.sqrt(8 * log_n / T)


def freedman_deviation(pi: float, b: float, L: float, T: int, C: float = FREEDMAN_C) -> float:
    """``C (sqrt(pi L / T) + b L / T)``."""
    if not 0 <= pi <= 1 or b < 1 or L < 1 or T < 1:
        raise ValidationError("need pi in [0, 1], b >= 1, L >= 1, T >= 1")
    return C * (math.sqrt(pi * L / T) + b * L / T)


def freedman_failure_probability(L: float, T: int) -> float:
    """``2 (ceil(log2 T) + 1) e^{-L}``, capped at 1."""
    return min(1.0, 2 * (math.ceil(math.log2(T)) + 1) * math.exp(-L))


def minimal_c_star(C: float = FREEDMAN_C) -> float:
    """Smallest ``c`` with ``C (sqrt(3/c) + 3/c) <= 1/2``.

    This is what keeps ``hat pi_k`` within a factor ``[1/2, 3/2]`` of ``pi_k`` on
    every heavy bucket when the Freedman bound is applied at level ``3L``.
    """
    # x = sqrt(3/c) solves x + x^2 = 1/(2C)
    x = (-1 + math.sqrt(1 + 2 / C)) / 2
    return 3 / x**2


@dataclass(frozen=True)
class TransferReport:
    K: int
    n_groups: int
    T: int
    p: float
    L: float
    azuma_term: float
    freedman_term: float
    light_bucket_term: float
    heavy_bucket_term: float
    lp_term: float
    empirical_multiplier: float
    failure_probability: float
    C: float
    c_star: float
    c_prime: float
    vacuous: bool

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def lp_log_term(K: int, n_groups: int, T: int) -> float:
    """``L = log(4 K |G| T)``."""
    return math.log(4 * K * n_groups * T)


def lp_transfer_terms(
    K: int, n_groups: int, T: int, p: float, C: float = FREEDMAN_C, c_star: float | None = None
) -> tuple[float, float, float, float]:
    """``(heavy, light, empirical multiplier, C')`` for the swap L_p online-to-batch bound.

    On the high-probability event,
    ``SMC_p(Q_S) <= mult * hat SMC_p + heavy + light`` with ``mult = 4^{p-1}``,
    ``light = c_star K L / T`` and, writing ``C' = C (sqrt 3 + 6/sqrt c_star)``,
    ``heavy = 2^{p-1} C'^p (KL/T)^{p/2}`` for ``p <= 2`` and
    ``heavy = 2^{p-1} C'^p c_star^{1-p/2} KL/T`` for ``p >= 2``.
    """
    if p < 1:
        raise ValidationError("p must be at least 1")
    if K < 1 or n_groups < 1 or T < 1:
        raise ValidationError("need K, |G|, T >= 1")
    c_star = minimal_c_star(C) if c_star is None else c_star
    L = lp_log_term(K, n_groups, T)
    kl = K * L / T
    c_prime = C * (math.sqrt(3) + 6 / math.sqrt(c_star))
    if p <= 2:
        heavy = 2 ** (p - 1) * c_prime**p * kl ** (p / 2)
    else:
        heavy = 2 ** (p - 1) * c_prime**p * c_star ** (1 - p / 2) * kl
    return heavy, c_star * kl, 4 ** (p - 1), c_prime


def lp_transfer(K: int, n_groups: int, T: int, p: float, C: float = FREEDMAN_C, c_star: float | None = None) -> float:
    heavy, light, _, _ = lp_transfer_terms(K, n_groups, T, p, C, c_star)
    return heavy + light


def transfer_report(
    K: int, n_groups: int, T: int, p: float = 1.0, C: float = FREEDMAN_C, c_star: float | None = None, pi: float = 1.0
) -> TransferReport:
    c_star = minimal_c_star(C) if c_star is None else c_star
    heavy, light, mult, c_prime = lp_transfer_terms(K, n_groups, T, p, C, c_star)
    L = lp_log_term(K, n_groups, T)
    lp = heavy + light
    return TransferReport(
        K=K, n_groups=n_groups, T=T, p=p, L=L,
        azuma_term=azuma_transfer(K, n_groups, T),
        freedman_term=freedman_deviation(pi, 2.0, max(L, 1.0), T, C),
        light_bucket_term=light, heavy_bucket_term=heavy, lp_term=lp,
        empirical_multiplier=mult, failure_probability=min(1.0, 1 / T),
        C=C, c_star=c_star, c_prime=c_prime, vacuous=lp >= 1,
    )


# --------------------------------------------------------------------------- Monte Carlo coverage


@dataclass(frozen=True)
class CoverageReport:
    """Exceedance count against a theoretical tail, judged by a one-sided 99% binomial quantile."""

    trials: int
    exceedances: int
    tail: float
    limit: int

    @property
    def rate(self) -> float:
        return self.exceedances / self.trials

    @property
    def passed(self) -> bool:
        return self.exceedances <= self.limit

    def to_json(self) -> dict[str, Any]:
        return {**asdict(self), "rate": self.rate, "passed": self.passed}


def _coverage(exceed: int, trials: int, tail: float) -> CoverageReport:
    tail = min(1.0, tail)
    return CoverageReport(trials, int(exceed), tail, int(stats.binom.ppf(0.99, trials, tail)))


def azuma_tail(T: int, eta: float) -> float:
    """One-sided tail ``exp(-T eta^2 / 8)`` for differences bounded by 2."""
    return math.exp(-T * eta**2 / 8)


def validate_azuma(trials: int, T: int, eta: float, seed: int, martingale: str = "rademacher") -> CoverageReport:
    """Fraction of simulated ``(1/T) sum M_t >= eta`` against ``exp(-T eta^2 / 8)``.

    ``rademacher``: ``M_t = 2 eps_t``.  ``predictable``: ``M_t = 2 eps_t s_t`` with a
    history-dependent scale ``s_t = 1`` if the running sum is nonnegative, else ``1/2``.
    """
    if trials < 100:
        raise ValidationError("need at least 100 trials")
    if martingale not in ("rademacher", "predictable"):
        raise ValidationError(f"unknown martingale {martingale!r}")
    rng = stream("azuma", seed, trials, T)
    s = np.zeros(trials)
    for _ in range(T):
        eps = rng.integers(0, 2, size=trials) * 2.0 - 1.0
        scale = 1.0 if martingale == "rademacher" else np.where(s >= 0, 1.0, 0.5)
        s += 2.0 * eps * scale
    return _coverage(int(np.count_nonzero(s / T >= eta)), trials, azuma_tail(T, eta))


def validate_freedman(trials: int, T: int, L: float, seed: int, b: float = 2.0, C: float = FREEDMAN_C) -> CoverageReport:
    """Monte Carlo of the variance-adaptive bound with a predictable variance process.

    ``Z_t = +-b`` with probability ``u_t / (2 b^2)`` each and ``0`` otherwise, so
    ``E[Z_t^2 | past] = u_t``.  The variance level ``u_t`` is predictable: it
    steps down a dyadic ladder while the running sum stays positive, which
    spreads ``pi`` across the peeling intervals.
    """
    if trials < 100:
        raise ValidationError("need at least 100 trials")
    rng = stream("freedman", seed, trials, T)
    s = np.zeros(trials)
    usum = np.zeros(trials)
    level = rng.integers(0, 8, size=trials).astype(float)
    for _ in range(T):
        u = 2.0**-level
        usum += u
        r = rng.random(trials)
        p_side = u / (2 * b * b)
        s += np.where(r < p_side, b, np.where(r < 2 * p_side, -b, 0.0))
        level = np.clip(level + np.where(s > 0, 1.0, -1.0), 0, 12)
    pi = usum / T
    bound = C * (np.sqrt(pi * L / T) + b * L / T)
    exceed = int(np.count_nonzero(np.abs(s / T) > bound))
    return _coverage(exceed, trials, freedman_failure_probability(L, T))


def freedman_level_for(target: float, T: int) -> float:
    """``L`` at which the failure probability equals ``target``."""
    return float(optimize.brentq(lambda L: freedman_failure_probability(L, T) - target, 1.0, 200.0))
