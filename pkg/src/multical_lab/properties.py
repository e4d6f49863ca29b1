"""Elicitable properties (mean, expectile, quantile) and their regularity witnesses.

Each property carries an identification function ``V(v, y)`` and a one-parameter
family of label laws ``D_t`` whose property value is ``t``.  The witness
constants ``c`` (sign strength) and ``C_KL`` (KL curvature) are computed here
and stored on the :class:`PropertySpec`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import optimize

from .core import ConditionalLabelLaw, ValidationError

DEFAULT_INTERVAL = (0.25, 0.75)
# (lambda, y) grid used before local refinement of quantile constants
CONSTANT_GRID = 401
_SERIES_EPS = 1e-6


class IncompatibleLawError(ValueError):
    """The property's expected identification is not available for this label law."""


@dataclass(frozen=True)
class PropertySpec:
    """A property with its witness interval ``I_0`` and computed witness constants."""

    kind: str
    level: float | None
    interval: tuple[float, float]
    c_gamma: float
    c_kl: float
    details: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "expectile", "quantile"):
            raise ValidationError(f"unknown property kind {self.kind!r}")
        lo, hi = self.interval
        if not 0 < lo < hi < 1:
            raise ValidationError("witness interval must be a nondegenerate closed subset of (0, 1)")
        if not self.c_gamma > 0 or not math.isfinite(self.c_kl):
            raise ValidationError("witness constants must satisfy c > 0 and C_KL < inf")

    @property
    def name(self) -> str:
        return self.kind if self.level is None else f"{self.kind}:{self.level:g}"

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "level": self.level,
            "interval": list(self.interval),
            "c_gamma": self.c_gamma,
            "c_kl": self.c_kl,
            "details": dict(self.details),
        }


# --------------------------------------------------------------------------- mean


@functools.lru_cache(maxsize=None)
def mean_property(interval: tuple[float, float] = DEFAULT_INTERVAL) -> PropertySpec:
    lo, hi = interval
    # Bernoulli KL <= (p - p')^2 / (p'(1 - p')); the denominator is smallest at an endpoint
    delta = min(lo * (1 - lo), hi * (1 - hi))
    return PropertySpec("mean", None, (float(lo), float(hi)), 1.0, 1.0 / delta, {"delta": delta})


# --------------------------------------------------------------------------- expectile


def expectile_bernoulli_p(tau: float, t: np.ndarray | float) -> np.ndarray | float:
    """Success probability of the Bernoulli law whose tau-expectile is ``t``."""
    return (1 - tau) * t / (tau + (1 - 2 * tau) * t)


def _expectile_p_prime(tau: float, t: np.ndarray | float) -> np.ndarray | float:
    return tau * (1 - tau) / (tau + (1 - 2 * tau) * t) ** 2


def _grid_then_refine(fn, lo: float, hi: float, n: int = CONSTANT_GRID, maximize: bool = False):
    """Global min (or max) of a scalar function on ``[lo, hi]``: dense grid, then bounded refine."""
    sign = -1.0 if maximize else 1.0
    xs = np.linspace(lo, hi, n)
    vals = sign * np.asarray(fn(xs), dtype=float)
    j = int(np.argmin(vals))
    a, b = xs[max(j - 1, 0)], xs[min(j + 1, n - 1)]
    best_x, best = xs[j], vals[j]
    if b > a:
        res = optimize.minimize_scalar(
            lambda x: sign * float(fn(np.array([x]))[0]), bounds=(a, b), method="bounded",
            options={"xatol": 1e-13},
        )
        if res.fun < best:
            best_x, best = float(res.x), float(res.fun)
    return float(best_x), sign * float(best)


@functools.lru_cache(maxsize=None)
def expectile_property(tau: float) -> PropertySpec:
    if not 0 < tau < 1:
        raise ValidationError("expectile level must lie in (0, 1)")
    lo, hi = DEFAULT_INTERVAL
    _, lip = _grid_then_refine(lambda t: _expectile_p_prime(tau, t), lo, hi, maximize=True)
    _, eta = _grid_then_refine(
        lambda t: np.minimum(expectile_bernoulli_p(tau, t), 1 - expectile_bernoulli_p(tau, t)), lo, hi
    )
    return PropertySpec(
        "expectile",
        float(tau),
        DEFAULT_INTERVAL,
        min(tau, 1 - tau),
        lip**2 / (eta * (1 - eta)),
        {"lipschitz": lip, "eta": eta, "grid_points": CONSTANT_GRID},
    )


# --------------------------------------------------------------------------- truncated exponential


def log_partition(lam: np.ndarray | float) -> np.ndarray | float:
    """``A(lam) = log int_0^1 exp(lam z) dz``."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < 1e-4
    safe = np.where(small, 1.0, lam)
    big = np.where(
        safe > 0,
        safe + np.log(-np.expm1(-safe) / safe),
        np.log(np.expm1(safe) / safe),
    )
    series = lam / 2 + lam**2 / 24 - lam**4 / 2880
    out = np.where(small, series, big)
    return out[()] if out.ndim == 0 else out


def truncexp_mean(lam: np.ndarray | float) -> np.ndarray | float:
    """``A'(lam)``: mean of the truncated exponential law on [0, 1]."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < 1e-4
    safe = np.where(small, 1.0, lam)
    big = 1.0 / -np.expm1(-safe) - 1.0 / safe
    out = np.where(small, 0.5 + lam / 12 - lam**3 / 720, big)
    return out[()] if out.ndim == 0 else out


def truncexp_cdf(lam: float, v: np.ndarray | float) -> np.ndarray | float:
    """``F_lam(v) = (e^{lam v} - 1) / (e^lam - 1)`` clipped to [0, 1] outside the unit interval."""
    v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    if abs(lam) < _SERIES_EPS:
        out = v + lam * v * (v - 1) / 2
    else:
        out = np.expm1(lam * v) / np.expm1(lam)
    return out[()] if np.ndim(out) == 0 else out


def truncexp_inverse_cdf(lam: float, u: np.ndarray | float) -> np.ndarray | float:
    u = np.asarray(u, dtype=float)
    if abs(lam) < _SERIES_EPS:
        out = u - lam * u * (u - 1) / 2
    else:
        out = np.log1p(u * np.expm1(lam)) / lam
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def truncexp_density(lam: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
    return np.exp(np.asarray(lam) * np.asarray(y) - log_partition(lam))


def truncexp_kl(lam: float, lam2: float) -> float:
    """``KL(D_lam || D_lam2) = A(lam2) - A(lam) - (lam2 - lam) A'(lam)``."""
    return float(log_partition(lam2) - log_partition(lam) - (lam2 - lam) * truncexp_mean(lam))


# --------------------------------------------------------------------------- quantile


def _t_q(q: float, lam: np.ndarray | float) -> np.ndarray | float:
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < _SERIES_EPS
    safe = np.where(small, 1.0, lam)
    # t_q(lam) = K(lam)/lam with K the Bernoulli(q) cumulant generating function
    big = np.log1p(q * np.expm1(safe)) / safe
    series = q + q * (1 - q) * lam / 2 + q * (1 - q) * (1 - 2 * q) * lam**2 / 6
    out = np.where(small, series, big)
    return out[()] if out.ndim == 0 else out


def _t_q_prime(q: float, lam: np.ndarray | float) -> np.ndarray | float:
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < 1e-4
    safe = np.where(small, 1.0, lam)
    kappa = np.log1p(q * np.expm1(safe))
    # K'(lam) = q e^lam / (1 + q (e^lam - 1)), written to avoid overflow
    kprime = q / (q + (1 - q) * np.exp(-safe))
    big = (kprime * safe - kappa) / safe**2
    a1 = q * (1 - q) / 2
    a2 = q * (1 - q) * (1 - 2 * q) / 6
    a3 = q * (1 - q) * (1 - 6 * q + 6 * q * q) / 24
    out = np.where(small, a1 + 2 * a2 * lam + 3 * a3 * lam**2, big)
    return out[()] if out.ndim == 0 else out


def _witness_half_width(q: float, lam_max: float = 200.0, step: float = 1e-3) -> float:
    """Largest ``L`` with ``t_q'`` inside ``[t_q'(0)/2, 2 t_q'(0)]`` on ``[-L, L]``."""
    base = q * (1 - q) / 2
    lams = np.arange(0.0, lam_max + step, step)
    ok = np.ones_like(lams, dtype=bool)
    for sgn in (1.0, -1.0):
        d = _t_q_prime(q, sgn * lams)
        ok &= (d >= base / 2) & (d <= 2 * base)
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return float(lam_max)
    j = int(bad[0])
    lo, hi = lams[j - 1], lams[j]

    def margin(x: float) -> float:
        worst = np.inf
        for sgn in (1.0, -1.0):
            d = float(_t_q_prime(q, sgn * x))
            worst = min(worst, d - base / 2, 2 * base - d)
        return worst

    return float(optimize.brentq(margin, lo, hi, xtol=1e-14))


@functools.lru_cache(maxsize=None)
def quantile_property(q: float) -> PropertySpec:
    if not 0 < q < 1:
        raise ValidationError("quantile level must lie in (0, 1)")
    half = _witness_half_width(q)
    interval = (float(_t_q(q, -half)), float(_t_q(q, half)))
    _, ell = _grid_then_refine(lambda x: _t_q_prime(q, x), -half, half)
    _, big_l = _grid_then_refine(lambda x: _t_q_prime(q, x), -half, half, maximize=True)
    # density extremes over the compact (lambda, y) box; for fixed lambda the
    # density is monotone in y, so the inner optimum sits at y = 0 or y = 1
    lam_grid = np.linspace(-half, half, CONSTANT_GRID)
    y_grid = np.linspace(0.0, 1.0, CONSTANT_GRID)
    dens = truncexp_density(lam_grid[:, None], y_grid[None, :])

    def edge_min(x):
        return np.minimum(truncexp_density(x, 0.0), truncexp_density(x, 1.0))

    def edge_max(x):
        return np.maximum(truncexp_density(x, 0.0), truncexp_density(x, 1.0))

    _, c_min = _grid_then_refine(edge_min, -half, half)
    _, c_max = _grid_then_refine(edge_max, -half, half, maximize=True)
    c_min = min(c_min, float(dens.min()))
    c_max = max(c_max, float(dens.max()))
    return PropertySpec(
        "quantile",
        float(q),
        interval,
        c_min,
        1.0 / (8 * ell**2),
        {
            "lambda_max": half,
            "ell": ell,
            "L": big_l,
            "density_min": c_min,
            "density_max": c_max,
            "grid_points": CONSTANT_GRID,
        },
    )


def quantile_reparam(q: float, lam: float) -> float:
    """q-quantile of the truncated exponential law with natural parameter ``lam``."""
    spec = quantile_property(q)
    half = spec.details["lambda_max"]
    if abs(lam) > half * (1 + 1e-12):
        raise ValidationError(f"lambda={lam} outside witness range [-{half}, {half}]")
    return float(_t_q(q, lam))


def quantile_reparam_inverse(q: float, t: float) -> float:
    """Natural parameter whose q-quantile is ``t``, by bisection to 1e-12."""
    return _quantile_inverse_cached(float(q), float(t))


@functools.lru_cache(maxsize=4096)
def _quantile_inverse_cached(q: float, t: float) -> float:
    spec = quantile_property(q)
    lo_t, hi_t = spec.interval
    if not lo_t - 1e-15 <= t <= hi_t + 1e-15:
        raise ValidationError(f"t={t} outside quantile witness interval [{lo_t}, {hi_t}]")
    half = spec.details["lambda_max"]
    lo, hi = -half, half
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if _t_q(q, mid) < t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------- dispatch


def parse_property(text: str) -> PropertySpec:
    """``"mean"``, ``"expectile:0.3"`` or ``"quantile:0.5"``."""
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind == "mean":
        return mean_property()
    if kind == "expectile":
        return expectile_property(float(arg) if arg else 0.5)
    if kind == "quantile":
        return quantile_property(float(arg) if arg else 0.5)
    raise ValidationError(f"unknown property {text!r}")


def spec_from_json(obj: dict[str, Any]) -> PropertySpec:
    if obj["kind"] == "mean":
        return mean_property(tuple(obj.get("interval", DEFAULT_INTERVAL)))
    return parse_property(f"{obj['kind']}:{obj['level']}")


def spec_for_law(law: ConditionalLabelLaw) -> PropertySpec:
    if law.kind == "bernoulli_mean":
        return mean_property()
    if law.kind == "expectile_bernoulli":
        return expectile_property(law.level)
    return quantile_property(law.level)


def law_for(spec: PropertySpec, t: float) -> ConditionalLabelLaw:
    """The witness law ``D_t`` of ``spec``."""
    lo, hi = spec.interval
    if not lo - 1e-15 <= t <= hi + 1e-15:
        raise ValidationError(f"t={t} outside witness interval [{lo}, {hi}]")
    if spec.kind == "mean":
        return ConditionalLabelLaw.bernoulli_mean(t)
    if spec.kind == "expectile":
        return ConditionalLabelLaw.expectile_bernoulli(spec.level, t)
    return ConditionalLabelLaw.quantile_truncexp(spec.level, t)


def identification(spec: PropertySpec, v, y) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "mean":
        return v - y
    below = (y <= v).astype(float)
    if spec.kind == "expectile":
        return np.abs(spec.level - below) * (v - y)
    return below - spec.level


def expected_identification(spec: PropertySpec, v, t: float) -> np.ndarray:
    """``M(v, t) = E_{Y ~ D_t} V(v, Y)`` in closed form for the witness family."""
    lo, hi = spec.interval
    if not lo - 1e-15 <= t <= hi + 1e-15:
        raise ValidationError(f"t={t} outside witness interval [{lo}, {hi}]")
    v = np.asarray(v, dtype=float)
    if spec.kind == "mean":
        return v - t
    if spec.kind == "expectile":
        tau = spec.level
        return tau * (1 - tau) / (tau + (1 - 2 * tau) * t) * (v - t)
    lam = quantile_reparam_inverse(spec.level, t)
    return truncexp_cdf(lam, v) - spec.level


def law_expected_identification(law: ConditionalLabelLaw, spec: PropertySpec, v) -> np.ndarray:
    """``E[V(v, Y)]`` for ``Y`` drawn from ``law`` (which may belong to another family)."""
    v = np.asarray(v, dtype=float)
    if spec.kind == "mean":
        return v - law.mean()
    if law.is_bernoulli:
        p = law.bernoulli_p
        if spec.kind == "expectile":
            tau = spec.level
            return (1 - p) * (1 - tau) * v + p * tau * (v - 1)
        return (1 - p) + p * (v >= 1).astype(float) - spec.level
    if spec.kind == "quantile":
        return truncexp_cdf(law.natural_param, v) - spec.level
    raise IncompatibleLawError(f"{spec.name} identification is not available for {law.kind} labels")


def witness_constants(spec: PropertySpec) -> tuple[float, float]:
    return spec.c_gamma, spec.c_kl


def sample_label(spec: PropertySpec, t: float, rng: np.random.Generator, size=None):
    return law_for(spec, t).sample(rng, size)


def bernoulli_kl(p: float, q: float) -> float:
    out = 0.0
    if p > 0:
        out += p * math.log(p / q)
    if p < 1:
        out += (1 - p) * math.log((1 - p) / (1 - q))
    return out


def law_kl(a: ConditionalLabelLaw, b: ConditionalLabelLaw) -> float:
    """Closed-form ``KL(a || b)`` for two laws of the same witness family."""
    if a.kind != b.kind or a.level != b.level:
        raise IncompatibleLawError("KL needs two laws from the same witness family")
    if a.is_bernoulli:
        return bernoulli_kl(a.bernoulli_p, b.bernoulli_p)
    return truncexp_kl(a.natural_param, b.natural_param)
