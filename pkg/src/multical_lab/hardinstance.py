"""The lower-bound instance: compressed dyadic groups, staircase families, and their diagnostics.

Contexts are ``0 .. m-1`` here, so the probe ``w_{h,q}(i) = sigma_{h,q}(i - 1)``
of a one-based context ``i`` is simply row ``u = i - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .codes import DyadicSignatures, PackingCode, default_block_length, default_rho
from .core import FiniteInstance, GroupFamily, ValidationError
from .properties import PropertySpec, law_for, law_kl, mean_property, spec_from_json


# --------------------------------------------------------------------------- groups


def probe_matrix(signatures: DyadicSignatures) -> np.ndarray:
    """Signed probes ``w_{h,q}`` as rows, ordered by scale then ``q``; shape ``(sum k_h, m)``."""
    m = signatures.m
    u = np.arange(m)
    blocks = [code.words[u >> h].T for h, code in enumerate(signatures.codes)]
    return np.concatenate(blocks, axis=0).astype(np.int8)


@dataclass(frozen=True)
class HardGroups:
    """``g_all`` followed by ``g_{h,q,+}, g_{h,q,-}`` for every scale and probe coordinate."""

    m: int
    family: GroupFamily
    signatures: DyadicSignatures
    index: dict[tuple[int, int, int], int] = field(compare=False)

    def __len__(self) -> int:
        return len(self.family)

    def group(self, h: int, q: int, sign: int) -> np.ndarray:
        return self.family.groups[self.index[(h, q, sign)]]


def build_hard_groups(m: int, signatures: DyadicSignatures) -> HardGroups:
    if signatures.m != m:
        raise ValidationError(f"signatures were built for m={signatures.m}, not {m}")
    W = probe_matrix(signatures)
    rows = [np.ones(m, dtype=np.int8)]
    labels = ["all"]
    index: dict[tuple[int, int, int], int] = {}
    r = 0
    for h, k in enumerate(signatures.block_lengths):
        for q in range(k):
            w = W[r]
            r += 1
            for sign, sym in ((1, "+"), (-1, "-")):
                index[(h, q, sign)] = len(rows)
                rows.append(((1 + sign * w) // 2).astype(np.int8))
                labels.append(f"h{h}q{q}{sym}")
    return HardGroups(m, GroupFamily(np.array(rows), tuple(labels)), signatures, index)


def hard_group_count(block_lengths) -> int:
    """``|G_m| = 1 + 2 sum_h k_h``."""
    return 1 + 2 * int(sum(block_lengths))


def default_group_count(m: int) -> int:
    """Group count with the default block lengths, computed without sampling any code."""
    L = m.bit_length() - 1
    rho = default_rho(m)
    return hard_group_count(default_block_length(m >> h, rho) for h in range(L))


# --------------------------------------------------------------------------- thresholds


def threshold_sign(m: int, r: int) -> np.ndarray:
    """``tau_r(u) = +1`` for ``u < r`` and ``-1`` otherwise, on ``u = 0 .. m-1``."""
    if not 0 <= r <= m:
        raise ValidationError(f"r={r} outside 0..{m}")
    return np.where(np.arange(m) < r, 1.0, -1.0)


def dyadic_prefix_blocks(r: int, m: int) -> list[tuple[int, int]]:
    """Disjoint dyadic blocks ``(h, a)`` covering ``{0, .., r-1}``, largest first."""
    if not 0 <= r <= m:
        raise ValidationError(f"r={r} outside 0..{m}")
    out = []
    start = 0
    for h in range(m.bit_length() - 1, -1, -1):
        if r & (1 << h):
            out.append((h, start >> h))
            start += 1 << h
    return out


@dataclass(frozen=True)
class ThresholdCoefficients:
    """Sparse coefficients of ``tau_hat_r``: ``alpha_0(r)`` and, per block ``(h, a)``, ``alpha_{h,.} = 2 z_a / k_h``."""

    m: int
    signatures: DyadicSignatures
    alpha0: np.ndarray
    blocks: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def levels(self) -> int:
        return self.signatures.levels

    def alpha_vector(self, r: int) -> np.ndarray:
        """Dense ``alpha_{h,q}(r)`` in probe order."""
        ks = self.signatures.block_lengths
        offsets = np.concatenate([[0], np.cumsum(ks)])
        out = np.zeros(offsets[-1])
        for h, a in self.blocks[r]:
            out[offsets[h] : offsets[h + 1]] = 2.0 * self.signatures.codes[h].words[a] / ks[h]
        return out

    def sup_alpha0(self) -> float:
        return float(np.abs(self.alpha0).max())

    def sup_alpha_sum(self) -> float:
        """``sum_{h,q} sup_r |alpha_{h,q}(r)|``, evaluated coordinatewise."""
        total = 0.0
        for h, code in enumerate(self.signatures.codes):
            used = sorted({a for blk in self.blocks for (hh, a) in blk if hh == h})
            if used:
                sup = np.abs(code.words[used]).max(axis=0) * 2.0 / code.block_len
                total += float(sup.sum())
        return total

    def to_json(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "alpha0": self.alpha0.tolist(),
            "blocks": [[list(b) for b in blk] for blk in self.blocks],
            "sup_alpha0": self.sup_alpha0(),
            "sup_alpha_sum": self.sup_alpha_sum(),
        }


def threshold_coefficients(m: int, signatures: DyadicSignatures) -> ThresholdCoefficients:
    if signatures.m != m:
        raise ValidationError(f"signatures were built for m={signatures.m}, not {m}")
    alpha0 = np.full(m + 1, -1.0)
    alpha0[m] = 1.0
    blocks = [()] + [tuple(dyadic_prefix_blocks(r, m)) for r in range(1, m)] + [()]
    alpha0.setflags(write=False)
    return ThresholdCoefficients(m, signatures, alpha0, tuple(blocks))


def approx_threshold(coeffs: ThresholdCoefficients, r: int) -> np.ndarray:
    """``tau_hat_r(u)`` for all ``u``, via per-scale Gram rows ``<z_a, z_b>``."""
    m = coeffs.m
    if not 0 <= r <= m:
        raise ValidationError(f"r={r} outside 0..{m}")
    u = np.arange(m)
    out = np.full(m, coeffs.alpha0[r])
    for h, a in coeffs.blocks[r]:
        code = coeffs.signatures.codes[h]
        z = code.words.astype(np.int64)
        gram_row = z @ z[a]
        out += 2.0 * gram_row[u >> h] / code.block_len
    return out


def approx_threshold_literal(coeffs: ThresholdCoefficients, r: int, probes: np.ndarray | None = None) -> np.ndarray:
    """Direct evaluation ``alpha_0 + sum_{h,q} alpha_{h,q} sigma_{h,q}`` (slow reference path)."""
    if probes is None:
        probes = probe_matrix(coeffs.signatures)
    return coeffs.alpha0[r] + coeffs.alpha_vector(r) @ probes


def threshold_error(coeffs: ThresholdCoefficients) -> float:
    """``max_r || tau_r - tau_hat_r ||_inf``."""
    return max(
        float(np.abs(threshold_sign(coeffs.m, r) - approx_threshold(coeffs, r)).max())
        for r in range(coeffs.m + 1)
    )


def threshold_error_bound(signatures: DyadicSignatures) -> float:
    """``2 L rho`` with the realized correlation."""
    return 2 * signatures.levels * signatures.realized_rho


# --------------------------------------------------------------------------- staircase


@dataclass(frozen=True)
class StaircaseInstance:
    """Staircase parameter map ``t_theta`` for codeword ``theta_index`` of ``code``."""

    m: int
    interval: tuple[float, float]
    code: PackingCode
    theta_index: int
    prop: PropertySpec
    gamma: float
    t: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return self.code.words[self.theta_index]

    def with_theta(self, theta_index: int) -> "StaircaseInstance":
        return build_staircase(self.m, self.interval, self.code, theta_index, self.prop)

    def to_json(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "interval": list(self.interval),
            "gamma": self.gamma,
            "theta_index": self.theta_index,
            "theta": "".join(str(int(b)) for b in self.theta),
            "t": self.t.tolist(),
            "property": self.prop.to_json(),
            "code": self.code.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "StaircaseInstance":
        return build_staircase(
            obj["m"], tuple(obj["interval"]), PackingCode.from_json(obj["code"]),
            obj["theta_index"], spec_from_json(obj["property"]),
        )


def staircase_gamma(m: int, interval: tuple[float, float]) -> float:
    a, b = interval
    return (b - a) / (8 * m)


def staircase_map(m: int, interval: tuple[float, float], theta: np.ndarray) -> np.ndarray:
    """``t(2j-1) = c_j`` and ``t(2j) = c_j + gamma theta_j`` with ``c_j = a + 4 gamma (j-1)``."""
    a, _ = interval
    gamma = staircase_gamma(m, interval)
    c = a + 4 * gamma * np.arange(m // 2)
    t = np.empty(m)
    t[0::2] = c
    t[1::2] = c + gamma * np.asarray(theta, dtype=float)
    return t


def build_staircase(
    m: int,
    interval: tuple[float, float] | None,
    code: PackingCode,
    theta_index: int,
    prop: PropertySpec | None = None,
) -> StaircaseInstance:
    prop = prop or mean_property()
    interval = tuple(prop.interval if interval is None else interval)
    a, b = interval
    lo, hi = prop.interval
    if not (lo <= a < b <= hi):
        raise ValidationError(f"J=[{a}, {b}] must be a nondegenerate subset of [{lo}, {hi}]")
    if m < 2 or m % 2:
        raise ValidationError("m must be even")
    if code.dim != m // 2:
        raise ValidationError(f"code dimension {code.dim} != m/2 = {m // 2}")
    if not 0 <= theta_index < len(code):
        raise ValidationError(f"theta index {theta_index} outside the code")
    t = staircase_map(m, interval, code.words[theta_index])
    t.setflags(write=False)
    return StaircaseInstance(m, interval, code, theta_index, prop, staircase_gamma(m, interval), t)


def to_instance(s: StaircaseInstance) -> FiniteInstance:
    return FiniteInstance.uniform(
        [law_for(s.prop, float(ti)) for ti in s.t],
        property=s.prop.name,
        m=s.m,
        interval=list(s.interval),
        gamma=s.gamma,
        theta_index=s.theta_index,
    )


def staircase_l1(s1: StaircaseInstance, s2: StaircaseInstance) -> float:
    """``|| t_1 - t_2 ||_{L1(U_m)}``."""
    if s1.m != s2.m or s1.interval != s2.interval or s1.gamma != s2.gamma:
        raise ValidationError("staircases must share m, J and gamma")
    return float(np.abs(s1.t - s2.t).mean())


def min_separation(code: PackingCode, m: int, gamma: float) -> float:
    """``gamma * d_min / m``, the smallest L1 distance between two staircases of ``code``."""
    return gamma * code.min_distance / m


def pairwise_kl(P1: FiniteInstance, P2: FiniteInstance) -> float:
    """One-sample ``KL(P1 || P2)`` for instances sharing the context law."""
    if P1.domain_size != P2.domain_size or not np.array_equal(P1.context_weights, P2.context_weights):
        raise ValidationError("instances must share the context distribution")
    kl = np.array([law_kl(a, b) for a, b in zip(P1.laws, P2.laws)])
    return float(P1.context_weights @ kl)


def max_pairwise_kl(s: StaircaseInstance) -> float:
    """Largest one-sample KL between any two members of the family of ``s``."""
    insts = [to_instance(s.with_theta(j)) for j in range(len(s.code))]
    return max(
        (pairwise_kl(insts[i], insts[j]) for i in range(len(insts)) for j in range(len(insts)) if i != j),
        default=0.0,
    )


# --------------------------------------------------------------------------- Fano and decoding


def fano_sample_bound(log_code_size: float, per_sample_kl_max: float, target_error: float = 1 / 3) -> float:
    """``(log|Theta| (1 - target) - log 2) / KL``: below this many samples, Fano forces error > target."""
    if not log_code_size > 0:
        raise ValidationError("log_code_size must be positive")
    if per_sample_kl_max < 0:
        raise ValidationError("per-sample KL must be nonnegative")
    if per_sample_kl_max == 0:
        return math.inf
    return (log_code_size * (1 - target_error) - math.log(2)) / per_sample_kl_max


def fano_regime_ok(log_code_size: float) -> bool:
    """Whether ``log 2 <= log|Theta| / 4``, the regime in which the constant-factor bound applies."""
    return math.log(2) <= 0.25 * log_code_size


def decode_threshold(m: int, gamma: float, c_gamma: float) -> float:
    """``c gamma / (384 (1 + log2 m))``."""
    return c_gamma * gamma / (384 * (1 + math.log2(m)))


@dataclass(frozen=True)
class RealizedConstants:
    """Constants of the anticoarsening and decoding chain, recomputed from the codes actually used."""

    m: int
    levels: int
    realized_rho: float
    approx_error: float
    c_gamma: float
    c_anti: float
    min_distance: int
    separation: float
    decode_threshold: float
    mode: str

    def to_json(self) -> dict[str, Any]:
        return dict(self.__dict__)


def anticoarsening_constant(levels: int, approx_error: float, c_gamma: float) -> float:
    """``(1 + 4L) / ((1 - e) c)`` where ``e`` bounds the threshold-approximation error."""
    if approx_error >= 1:
        return math.inf
    return (1 + 4 * levels) / ((1 - approx_error) * c_gamma)


def realized_constants(
    signatures: DyadicSignatures, code: PackingCode, gamma: float, prop: PropertySpec
) -> RealizedConstants:
    """Realized ``C_anti`` and decode threshold.

    With error ``e = 2 L rho`` the chain gives ``Delta <= C_anti MC``; decoding
    is exact whenever ``C_anti MC <= sep / 4`` with ``sep = gamma d_min / m``.
    In default mode ``e <= 1/4`` and ``sep >= gamma / 16``, and the looser
    closed-form constants ``6(1+L)/c`` and ``c gamma / (384 (1+L))`` are used.
    """
    m, L = signatures.m, signatures.levels
    e = threshold_error_bound(signatures)
    c = prop.c_gamma
    sep = min_separation(code, m, gamma)
    closed_form_ok = signatures.mode == "default" and e <= 0.25 and sep >= gamma / 16
    if closed_form_ok:
        c_anti = 6 * (1 + L) / c
        thr = decode_threshold(m, gamma, c)
    else:
        c_anti = anticoarsening_constant(L, e, c)
        thr = sep / (4 * c_anti) if math.isfinite(c_anti) else 0.0
    return RealizedConstants(m, L, signatures.realized_rho, e, c, c_anti, code.min_distance, sep, thr, signatures.mode)
