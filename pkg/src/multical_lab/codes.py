"""Random sign codes with low pairwise correlation, dyadic signatures, and packing codes.

Every construction is by random sampling with restarts; realized parameters
are always recomputed by the exhaustive verifiers below rather than trusted.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .core import ValidationError, stream

log = logging.getLogger(__name__)


class CodeSearchError(RuntimeError):
    """A search failed although the existence guarantee applied (suspected bug)."""


def realized_correlation(words: np.ndarray) -> float:
    """``max_{a != b} |<z_a, z_b>| / k`` by exhaustive comparison of all pairs."""
    words = np.asarray(words)
    n, k = words.shape
    if n < 2:
        return 0.0
    z = words.astype(float)
    gram = z @ z.T
    np.fill_diagonal(gram, 0.0)
    return float(np.abs(gram).max() / k)


def hamming_distances(words: np.ndarray) -> np.ndarray:
    """All pairwise Hamming distances of 0/1 words."""
    w = np.asarray(words, dtype=float)
    ones = w.sum(axis=1)
    # |a xor b| = |a| + |b| - 2 <a, b>
    return (ones[:, None] + ones[None, :] - 2 * (w @ w.T)).round().astype(np.int64)


def minimum_distance(words: np.ndarray) -> int:
    words = np.asarray(words)
    if words.shape[0] < 2:
        return int(words.shape[1]) if words.ndim == 2 else 0
    d = hamming_distances(words)
    np.fill_diagonal(d, np.iinfo(np.int64).max)
    return int(d.min())


def to_binary(signs: np.ndarray) -> np.ndarray:
    """``+1 -> 0``, ``-1 -> 1``, so Hamming distance is ``(k - <z, z'>)/2``."""
    return ((1 - np.asarray(signs)) // 2).astype(np.uint8)


def default_block_length(n_words: int, rho: float) -> int:
    """Length ``ceil(8 rho^-2 log(2N))`` that makes a random code succeed w.p. >= 1 - 1/(8N^2)."""
    return math.ceil(8 * rho**-2 * math.log(2 * n_words))


def union_block_length(n_words: int, rho: float) -> int:
    """Smallest ``k`` for which the Hoeffding union bound gives success w.p. >= 1/2 per draw."""
    pairs = max(n_words * (n_words - 1) / 2, 1)
    return math.ceil(2 * rho**-2 * math.log(4 * pairs))


def failure_bound(n_words: int, k: int, rho: float) -> float:
    """Union-bound probability that one random draw has some pair above ``rho k``."""
    pairs = n_words * (n_words - 1) / 2
    return min(1.0, pairs * 2 * math.exp(-(rho**2) * k / 2))


@dataclass(frozen=True)
class SignCode:
    """``n_words`` vectors in ``{-1, +1}^k`` with their realized maximum correlation."""

    words: np.ndarray
    realized_rho: float
    restarts: int = 1
    target_rho: float | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.words)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValidationError("sign code needs shape (n_words, k) with both positive")
        if not np.all(np.abs(w) == 1):
            raise ValidationError("sign code entries must be +-1")
        w = w.astype(np.int8)
        w.setflags(write=False)
        object.__setattr__(self, "words", w)
        rho = realized_correlation(w)
        if abs(rho - self.realized_rho) > 1e-12:
            raise ValidationError(f"stored realized_rho {self.realized_rho} != recomputed {rho}")

    @classmethod
    def from_words(cls, words, **kw: Any) -> "SignCode":
        words = np.asarray(words)
        return cls(words, realized_correlation(words), **kw)

    @property
    def n_words(self) -> int:
        return int(self.words.shape[0])

    @property
    def block_len(self) -> int:
        return int(self.words.shape[1])

    @property
    def met_target(self) -> bool:
        return self.target_rho is None or self.realized_rho <= self.target_rho

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": "lowcorr",
            "n_words": self.n_words,
            "block_len": self.block_len,
            "realized_rho": self.realized_rho,
            "target_rho": self.target_rho,
            "restarts": self.restarts,
            "words": self.words.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SignCode":
        return cls(
            np.asarray(obj["words"]), obj["realized_rho"], obj.get("restarts", 1), obj.get("target_rho")
        )


def search_low_correlation(
    n_words: int,
    k: int,
    rho_target: float,
    seed: int,
    max_restarts: int = 10,
    scope: Sequence[int] = (),
) -> SignCode:
    """Best of up to ``max_restarts`` uniform random sign codes, by realized correlation.

    Stops at the first draw meeting ``rho_target``.  If none does although
    ``k >= 8 rho^-2 log(2N)`` held, :class:`CodeSearchError` is raised.
    """
    if n_words < 1 or k < 1:
        raise ValidationError("need n_words >= 1 and k >= 1")
    if not 0 < rho_target <= 1:
        raise ValidationError("rho_target must lie in (0, 1]")
    best: np.ndarray | None = None
    best_rho = math.inf
    used = 0
    for r in range(max_restarts):
        used = r + 1
        rng = stream("lowcorr", seed, *scope, n_words, k, r)
        z = rng.integers(0, 2, size=(n_words, k), dtype=np.int8) * 2 - 1
        rho = realized_correlation(z)
        if rho < best_rho:
            best, best_rho = z, rho
        if rho <= rho_target:
            break
    log.debug("lowcorr N=%d k=%d: rho=%.4f after %d restarts", n_words, k, best_rho, used)
    code = SignCode(best, best_rho, used, rho_target)
    if not code.met_target:
        guaranteed = n_words >= 2 and k >= 8 * rho_target**-2 * math.log(2 * n_words)
        if guaranteed:
            raise CodeSearchError(
                f"no code with rho <= {rho_target} in {max_restarts} restarts although k={k} "
                "meets the existence condition; suspect the sampler"
            )
        log.info(
            "lowcorr N=%d k=%d missed rho=%.4g (best %.4g); per-draw failure bound %.3g",
            n_words, k, rho_target, best_rho, failure_bound(n_words, k, rho_target),
        )
    return code


def _is_power_of_two(m: int) -> bool:
    return m >= 1 and m & (m - 1) == 0


@dataclass(frozen=True)
class DyadicSignatures:
    """One sign code per dyadic scale ``h``; scale ``h`` has ``m / 2^h`` words."""

    m: int
    codes: tuple[SignCode, ...]
    rho_target: float
    mode: str = "default"

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.m) or self.m < 2:
            raise ValidationError("m must be a power of two >= 2")
        L = self.m.bit_length() - 1
        if len(self.codes) != L:
            raise ValidationError(f"need one code per scale (L={L})")
        for h, c in enumerate(self.codes):
            if c.n_words != self.m >> h:
                raise ValidationError(f"scale {h} must have {self.m >> h} words")
        object.__setattr__(self, "codes", tuple(self.codes))

    @property
    def levels(self) -> int:
        return len(self.codes)

    @property
    def block_lengths(self) -> list[int]:
        return [c.block_len for c in self.codes]

    @property
    def realized_rhos(self) -> list[float]:
        return [c.realized_rho for c in self.codes]

    @property
    def realized_rho(self) -> float:
        return max(self.realized_rhos)

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": "dyadic",
            "m": self.m,
            "mode": self.mode,
            "rho_target": self.rho_target,
            "scales": [c.to_json() for c in self.codes],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DyadicSignatures":
        return cls(
            obj["m"], tuple(SignCode.from_json(c) for c in obj["scales"]), obj["rho_target"], obj["mode"]
        )


def default_rho(m: int) -> float:
    """``1 / (8 (1 + log2 m))``."""
    return 1.0 / (8 * (1 + math.log2(m)))


def dyadic_signatures(
    m: int,
    seed: int,
    k_override: int | Sequence[int] | None = None,
    relaxed: bool = False,
    max_restarts: int = 10,
    rho_target: float | None = None,
) -> DyadicSignatures:
    """Per-scale low-correlation codes for the dyadic blocks of ``[m]``.

    Without ``k_override`` the block lengths follow ``ceil(8 rho^-2 log(2 n_h))``
    with ``rho = 1/(8(1 + log2 m))``; with it, any lengths are allowed and the
    realized correlations are reported instead of guaranteed.
    """
    if not _is_power_of_two(m):
        raise ValidationError(f"m={m} is not a power of two")
    if m < (2 if (relaxed or k_override is not None) else 16):
        raise ValidationError("m must be >= 16 (or >= 2 in relaxed/override mode)")
    L = m.bit_length() - 1
    rho = default_rho(m) if rho_target is None else rho_target
    if k_override is None:
        lengths = [default_block_length(m >> h, rho) for h in range(L)]
        mode = "default" if rho_target is None else "target"
    else:
        lengths = [int(k_override)] * L if np.isscalar(k_override) else [int(k) for k in k_override]
        if len(lengths) != L:
            raise ValidationError(f"k_override needs {L} entries")
        mode = "override"
    codes = tuple(
        search_low_correlation(m >> h, lengths[h], rho, seed, max_restarts, scope=(m, h))
        for h in range(L)
    )
    return DyadicSignatures(m, codes, rho, mode)


def signatures_for_error(
    m: int, target_error: float, seed: int, max_restarts: int = 10, max_growth: int = 8
) -> DyadicSignatures:
    """Signatures whose threshold-approximation error bound ``2 L rho`` is at most ``target_error``.

    Block lengths start at the union-bound length for ``rho = target_error/(2L)``
    and grow by 25% per scale until the realized correlation qualifies.
    """
    L = m.bit_length() - 1
    rho = target_error / (2 * L)
    codes = []
    for h in range(L):
        n = m >> h
        k = union_block_length(n, rho)
        for _ in range(max_growth):
            code = search_low_correlation(n, k, rho, seed, max_restarts, scope=(m, h, 1))
            if code.met_target:
                break
            k = math.ceil(1.25 * k)
        else:
            raise CodeSearchError(f"scale {h}: could not reach rho={rho} by k={k}")
        codes.append(code)
    return DyadicSignatures(m, tuple(codes), rho, "override")


@dataclass(frozen=True)
class PackingCode:
    """Distinct binary words of length ``dim`` with realized minimum Hamming distance."""

    words: np.ndarray
    min_distance: int
    complete: bool = True
    min_dist_target: int | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.words)
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValidationError("packing code needs at least one word")
        if not np.all((w == 0) | (w == 1)):
            raise ValidationError("packing words must be binary")
        w = w.astype(np.uint8)
        if len({row.tobytes() for row in w}) != w.shape[0]:
            raise ValidationError("packing words must be distinct")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)
        d = minimum_distance(w)
        if d != self.min_distance:
            raise ValidationError(f"stored min_distance {self.min_distance} != recomputed {d}")

    @property
    def dim(self) -> int:
        return int(self.words.shape[1])

    def __len__(self) -> int:
        return int(self.words.shape[0])

    @property
    def log_size(self) -> float:
        return math.log(len(self))

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": "packing",
            "dim": self.dim,
            "min_distance": self.min_distance,
            "min_dist_target": self.min_dist_target,
            "complete": self.complete,
            "words": ["".join(str(int(b)) for b in row) for row in self.words],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "PackingCode":
        words = np.array([[int(c) for c in s] for s in obj["words"]], dtype=np.uint8)
        return cls(words, obj["min_distance"], obj.get("complete", True), obj.get("min_dist_target"))


def packing_size_target(d: int, c_pack: float = 9 / 256) -> int:
    """``ceil(exp(c_pack d) / 4)`` words."""
    return math.ceil(math.exp(c_pack * d) / 4)


def search_packing(
    d: int, min_dist_target: int, count_target: int, seed: int, budget: int = 100_000
) -> PackingCode:
    """Greedy random packing: keep uniform words at distance >= target from all kept words."""
    if d < 1 or not 0 <= min_dist_target <= d:
        raise ValidationError("need d >= 1 and 0 <= min_dist_target <= d")
    need = max(1, min_dist_target)  # distinct words are at distance >= 1
    rng = stream("packing", seed, d, min_dist_target, count_target)
    kept = np.zeros((count_target, d), dtype=np.uint8)
    n = 0
    draws = 0
    batch = 256
    while n < count_target and draws < budget:
        cand = rng.integers(0, 2, size=(min(batch, budget - draws), d), dtype=np.uint8)
        for w in cand:
            draws += 1
            if n == 0 or int(np.min(np.count_nonzero(kept[:n] != w, axis=1))) >= need:
                kept[n] = w
                n += 1
                if n >= count_target:
                    break
    words = kept[:n]
    complete = n >= count_target
    if not complete:
        warnings.warn(
            f"packing search stopped at {n}/{count_target} words after {draws} draws", stacklevel=2
        )
    return PackingCode(words, minimum_distance(words), complete, min_dist_target)
