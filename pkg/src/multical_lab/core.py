"""Domain types on a finite context space ``[m]`` and basic predictor algebra.

Contexts are indexed ``0 .. m-1`` internally; labels live in ``[0, 1]``.
All containers are frozen dataclasses holding read-only numpy arrays.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

FORMAT_TAG = "multical-lab/v1"

# Probability vectors within this distance of 1 are renormalized, beyond it rejected.
PROB_TOL = 1e-9
_SILENT_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when a constructor input violates a type invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def stream(operation: str, seed: int, *index: int) -> np.random.Generator:
    """Counter-based RNG stream keyed by ``(operation, seed, *index)``.

    Streams for different keys are independent, and the same key always
    reproduces the same draws, so restarts and trials can run in any order.
    """
    digest = hashlib.sha256(operation.encode()).digest()
    op_word = int.from_bytes(digest[:8], "little")
    words = [op_word, int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(i) & 0xFFFFFFFFFFFFFFFF for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def _check_rows(weights: np.ndarray, what: str) -> np.ndarray:
    if np.any(~np.isfinite(weights)):
        raise ValidationError(f"{what}: non-finite entries")
    if np.any(weights < 0):
        i = int(np.argwhere(weights < 0)[0][0])
        raise ValidationError(f"{what}: negative entry in row {i}")
    sums = weights.sum(axis=-1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > PROB_TOL):
        i = int(np.argmax(dev))
        raise ValidationError(f"{what}: row {i} sums to {sums.flat[i]!r}, not 1")
    if np.any(dev > _SILENT_TOL):
        warnings.warn(f"{what}: renormalizing rows off by up to {dev.max():.2e}", stacklevel=3)
    if np.any(dev > 0):
        weights = weights / sums[..., None]
    return weights


@dataclass(frozen=True)
class PredictionGrid:
    """Strictly increasing finite set of prediction values in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ValidationError("prediction grid must be non-empty")
        if np.any(~np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise ValidationError("grid values must lie in [0, 1]")
        if np.any(np.diff(v) <= 0):
            raise ValidationError("grid values must be strictly increasing")
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self) -> int:
        return int(self.values.size)

    def index_of(self, value: float, atol: float = 0.0) -> int:
        hits = np.nonzero(np.abs(self.values - value) <= atol)[0]
        if hits.size == 0:
            raise KeyError(value)
        return int(hits[0])

    def nearest_index(self, x: np.ndarray | float) -> np.ndarray:
        """Index of the nearest grid value; exact ties go to the lower value."""
        x = np.asarray(x, dtype=float)
        # argmin returns the first (lowest) index among equal distances
        return np.argmin(np.abs(x[..., None] - self.values), axis=-1)

    @classmethod
    def centers(cls, K: int) -> "PredictionGrid":
        """Bucket centers ``(2k-1)/(2K)`` for ``k = 1..K``."""
        return cls((2 * np.arange(1, K + 1) - 1) / (2 * K))

    @classmethod
    def mesh(cls, eta: float) -> "PredictionGrid":
        """The grid ``{0, eta, 2 eta, ..., floor(1/eta) eta, 1}`` without duplicates."""
        if not 0 < eta <= 1:
            raise ValidationError("eta must lie in (0, 1]")
        n = math.floor(1 / eta + 1e-12)
        vals = np.minimum(np.arange(n + 1) * eta, 1.0)
        if 1.0 - vals[-1] > 1e-12:
            vals = np.append(vals, 1.0)
        else:
            vals[-1] = 1.0
        return cls(vals)

    def to_json(self) -> list[float]:
        return [float(v) for v in self.values]


@dataclass(frozen=True)
class RandomizedPredictor:
    """Per-context probability vectors over a shared prediction grid.

    ``weights[i, k]`` is the probability of predicting ``grid.values[k]`` at context ``i``.
    """

    grid: PredictionGrid
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] != len(self.grid):
            raise ValidationError(
                f"weights must have shape (m, {len(self.grid)}), got {w.shape}"
            )
        object.__setattr__(self, "weights", _frozen(_check_rows(w, "predictor")))

    @property
    def domain_size(self) -> int:
        return int(self.weights.shape[0])

    def support(self) -> np.ndarray:
        """Grid values carrying positive mass at some context."""
        return self.grid.values[self.weights.max(axis=0) > 0]

    def to_json(self) -> dict[str, Any]:
        return {
            "format": FORMAT_TAG,
            "type": "RandomizedPredictor",
            "domain_size": self.domain_size,
            "grid": self.grid.to_json(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "RandomizedPredictor":
        _check_tag(obj, "RandomizedPredictor")
        q = cls(PredictionGrid(obj["grid"]), np.asarray(obj["weights"], dtype=float))
        if q.domain_size != obj["domain_size"]:
            raise ValidationError("domain_size does not match weights")
        return q


@dataclass(frozen=True)
class GroupFamily:
    """Binary group indicators on ``[m]``; row ``j`` is group ``labels[j]``."""

    groups: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        g = np.asarray(self.groups)
        if g.ndim == 1:
            g = g[None, :]
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ValidationError("group family needs at least one group on a non-empty domain")
        if not np.all((g == 0) | (g == 1)):
            raise ValidationError("group entries must be 0 or 1")
        labels = tuple(str(s) for s in self.labels) or tuple(f"g{j}" for j in range(g.shape[0]))
        if len(labels) != g.shape[0]:
            raise ValidationError("one label per group required")
        if len(set(labels)) != len(labels):
            raise ValidationError("group labels must be unique")
        object.__setattr__(self, "groups", _frozen(g.astype(np.int8)))
        object.__setattr__(self, "labels", labels)

    @property
    def domain_size(self) -> int:
        return int(self.groups.shape[1])

    def __len__(self) -> int:
        return int(self.groups.shape[0])

    def index(self, label: str | int) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self):
                raise KeyError(label)
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None

    def to_json(self) -> dict[str, Any]:
        return {
            "format": FORMAT_TAG,
            "type": "GroupFamily",
            "domain_size": self.domain_size,
            "labels": list(self.labels),
            "groups": self.groups.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "GroupFamily":
        _check_tag(obj, "GroupFamily")
        fam = cls(np.asarray(obj["groups"]), tuple(obj["labels"]))
        if fam.domain_size != obj["domain_size"]:
            raise ValidationError("domain_size does not match groups")
        return fam


LAW_KINDS = ("bernoulli_mean", "expectile_bernoulli", "quantile_truncexp")


@dataclass(frozen=True)
class ConditionalLabelLaw:
    """One member ``D_t`` of a regularity-witness family, indexed by its property value ``t``.

    ``level`` is the expectile level tau or quantile level q (unused for the mean).
    """

    kind: str
    t: float
    level: float | None = None

    def __post_init__(self) -> None:
        from . import properties  # circular at import time

        if self.kind not in LAW_KINDS:
            raise ValidationError(f"unknown law kind {self.kind!r}")
        object.__setattr__(self, "t", float(self.t))
        if self.kind == "bernoulli_mean":
            if not 0 < self.t < 1:
                raise ValidationError("Bernoulli mean parameter must lie in (0, 1)")
            return
        if self.level is None or not 0 < self.level < 1:
            raise ValidationError(f"{self.kind} needs a level in (0, 1)")
        object.__setattr__(self, "level", float(self.level))
        lo, hi = properties.spec_for_law(self).interval
        if not lo <= self.t <= hi:
            raise ValidationError(f"t={self.t} outside witness interval [{lo}, {hi}] of {self.kind}")

    @classmethod
    def bernoulli_mean(cls, t: float) -> "ConditionalLabelLaw":
        return cls("bernoulli_mean", t)

    @classmethod
    def expectile_bernoulli(cls, tau: float, t: float) -> "ConditionalLabelLaw":
        return cls("expectile_bernoulli", t, tau)

    @classmethod
    def quantile_truncexp(cls, q: float, t: float) -> "ConditionalLabelLaw":
        return cls("quantile_truncexp", t, q)

    @property
    def is_bernoulli(self) -> bool:
        return self.kind != "quantile_truncexp"

    @property
    def bernoulli_p(self) -> float:
        from .properties import expectile_bernoulli_p

        if self.kind == "bernoulli_mean":
            return self.t
        if self.kind == "expectile_bernoulli":
            return expectile_bernoulli_p(self.level, self.t)
        raise AttributeError("truncated-exponential law has no Bernoulli parameter")

    @property
    def natural_param(self) -> float:
        from .properties import quantile_reparam_inverse

        if self.kind != "quantile_truncexp":
            raise AttributeError("only the truncated-exponential law has a natural parameter")
        return quantile_reparam_inverse(self.level, self.t)

    def mean(self) -> float:
        from .properties import truncexp_mean

        if self.is_bernoulli:
            return self.bernoulli_p
        return truncexp_mean(self.natural_param)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray | float:
        from .properties import truncexp_inverse_cdf

        if self.is_bernoulli:
            return (rng.random(size) < self.bernoulli_p).astype(float)
        return truncexp_inverse_cdf(self.natural_param, rng.random(size))

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "t": self.t, "level": self.level}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ConditionalLabelLaw":
        return cls(obj["kind"], obj["t"], obj.get("level"))


@dataclass(frozen=True)
class FiniteInstance:
    """Joint law of ``(X, Y)``: context weights on ``[m]`` and one label law per context."""

    laws: tuple[ConditionalLabelLaw, ...]
    context_weights: np.ndarray | None = None
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        laws = tuple(self.laws)
        if not laws:
            raise ValidationError("instance needs at least one context")
        m = len(laws)
        if self.context_weights is None:
            w = np.full(m, 1.0 / m)
        else:
            w = np.asarray(self.context_weights, dtype=float)
            if w.shape != (m,):
                raise ValidationError(f"context_weights must have length {m}")
            w = _check_rows(w, "context weights")
        object.__setattr__(self, "laws", laws)
        object.__setattr__(self, "context_weights", _frozen(w))

    @property
    def domain_size(self) -> int:
        return len(self.laws)

    @classmethod
    def uniform(cls, laws: Sequence[ConditionalLabelLaw], **metadata: Any) -> "FiniteInstance":
        return cls(tuple(laws), None, dict(metadata))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` i.i.d. pairs; returns context indices and labels."""
        x = rng.choice(self.domain_size, size=n, p=self.context_weights)
        y = np.empty(n)
        for i, law in enumerate(self.laws):
            sel = np.nonzero(x == i)[0]
            if sel.size:
                y[sel] = law.sample(rng, sel.size)
        return x, y

    def to_json(self) -> dict[str, Any]:
        return {
            "format": FORMAT_TAG,
            "type": "FiniteInstance",
            "domain_size": self.domain_size,
            "context_weights": self.context_weights.tolist(),
            "laws": [law.to_json() for law in self.laws],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "FiniteInstance":
        _check_tag(obj, "FiniteInstance")
        inst = cls(
            tuple(ConditionalLabelLaw.from_json(o) for o in obj["laws"]),
            np.asarray(obj["context_weights"], dtype=float),
            dict(obj.get("metadata", {})),
        )
        if inst.domain_size != obj["domain_size"]:
            raise ValidationError("domain_size does not match laws")
        return inst


@dataclass(frozen=True)
class Transcript:
    """Rounds of an online run: context, label, and the rule announced before the label.

    Rules are stored either densely (``rules`` with shape ``(T, m, K)``) or, for
    point-mass forecasters, as grid indices (``rule_indices`` with shape ``(T, m)``).
    """

    grid: PredictionGrid
    contexts: np.ndarray
    labels: np.ndarray
    rules: np.ndarray | None = None
    rule_indices: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.contexts, dtype=np.int64)
        y = np.asarray(self.labels, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ValidationError("contexts and labels must be equal-length non-empty vectors")
        if np.any((y < 0) | (y > 1)):
            raise ValidationError("labels must lie in [0, 1]")
        if (self.rules is None) == (self.rule_indices is None):
            raise ValidationError("give exactly one of rules or rule_indices")
        K = len(self.grid)
        if self.rules is not None:
            r = np.asarray(self.rules, dtype=float)
            if r.ndim != 3 or r.shape[0] != x.size or r.shape[2] != K:
                raise ValidationError(f"rules must have shape (T, m, {K})")
            r = _check_rows(r, "roundwise rule")
            m = r.shape[1]
            object.__setattr__(self, "rules", _frozen(r))
        else:
            idx = np.asarray(self.rule_indices, dtype=np.int64)
            if idx.ndim != 2 or idx.shape[0] != x.size:
                raise ValidationError("rule_indices must have shape (T, m)")
            if np.any((idx < 0) | (idx >= K)):
                raise ValidationError("rule index outside the grid")
            m = idx.shape[1]
            object.__setattr__(self, "rule_indices", _frozen(idx))
        if np.any((x < 0) | (x >= m)):
            raise ValidationError("context index outside [m]")
        object.__setattr__(self, "contexts", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))

    def __len__(self) -> int:
        return int(self.contexts.size)

    @property
    def domain_size(self) -> int:
        arr = self.rules if self.rules is not None else self.rule_indices
        return int(arr.shape[1])

    def rule(self, t: int) -> np.ndarray:
        """Dense ``(m, K)`` rule of round ``t``."""
        if self.rules is not None:
            return self.rules[t]
        out = np.zeros((self.domain_size, len(self.grid)))
        out[np.arange(self.domain_size), self.rule_indices[t]] = 1.0
        return out

    def realized_rows(self) -> np.ndarray:
        """``(T, K)`` array of ``q_t(X_t)``."""
        T = len(self)
        if self.rules is not None:
            return self.rules[np.arange(T), self.contexts]
        out = np.zeros((T, len(self.grid)))
        out[np.arange(T), self.rule_indices[np.arange(T), self.contexts]] = 1.0
        return out

    def save(self, path: str) -> None:
        """Compact ``.npz`` with a JSON header."""
        header = json.dumps({"format": FORMAT_TAG, "type": "Transcript", "grid": self.grid.to_json()})
        arrays = {"contexts": self.contexts, "labels": self.labels}
        if self.rules is not None:
            arrays["rules"] = self.rules
        else:
            small = np.uint16 if len(self.grid) < 2**16 else np.int64
            arrays["rule_indices"] = self.rule_indices.astype(small)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, header=np.array(header), **arrays)

    @classmethod
    def load(cls, path: str) -> "Transcript":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            _check_tag(header, "Transcript")
            return cls(
                PredictionGrid(header["grid"]),
                z["contexts"],
                z["labels"],
                z["rules"] if "rules" in z else None,
                z["rule_indices"] if "rule_indices" in z else None,
            )


def _check_tag(obj: dict[str, Any], type_name: str) -> None:
    if obj.get("format") != FORMAT_TAG:
        raise ValidationError(f"expected format {FORMAT_TAG!r}, got {obj.get('format')!r}")
    if obj.get("type") != type_name:
        raise ValidationError(f"expected a {type_name}, got {obj.get('type')!r}")


def load_json(path: str) -> Any:
    """Parse any of the JSON artifacts by their ``type`` tag."""
    with open(path) as fh:
        obj = json.load(fh)
    parsers = {
        "RandomizedPredictor": RandomizedPredictor.from_json,
        "GroupFamily": GroupFamily.from_json,
        "FiniteInstance": FiniteInstance.from_json,
    }
    kind = obj.get("type")
    if kind in parsers:
        return parsers[kind](obj)
    return obj


def deterministic_predictor(f: Sequence[float], grid: PredictionGrid) -> RandomizedPredictor:
    """Point-mass predictor ``Q_x = delta_{f(x)}``; every ``f(x)`` must be a grid value."""
    f = np.asarray(f, dtype=float)
    w = np.zeros((f.size, len(grid)))
    for i, v in enumerate(f):
        hits = np.nonzero(grid.values == v)[0]
        if hits.size == 0:
            raise ValidationError(f"context {i}: value {v} is not on the grid")
        w[i, hits[0]] = 1.0
    return RandomizedPredictor(grid, w)


def mean_prediction_function(Q: RandomizedPredictor) -> np.ndarray:
    return Q.weights @ Q.grid.values


def quantize_predictor(Q: RandomizedPredictor, eta: float) -> RandomizedPredictor:
    """Push each context's law forward through nearest-point rounding onto the ``eta`` mesh."""
    target = PredictionGrid.mesh(eta)
    idx = target.nearest_index(Q.grid.values)
    w = np.zeros((Q.domain_size, len(target)))
    for k, j in enumerate(idx):
        w[:, j] += Q.weights[:, k]
    return RandomizedPredictor(target, w)


def regression_function(P: FiniteInstance) -> np.ndarray:
    """``E[Y | X = i]`` for each context, in closed form."""
    return np.array([law.mean() for law in P.laws])


def mixture(Q1: RandomizedPredictor, Q2: RandomizedPredictor, lam: float) -> RandomizedPredictor:
    """Contextwise convex combination ``(1 - lam) Q1 + lam Q2`` on a shared grid."""
    if not np.array_equal(Q1.grid.values, Q2.grid.values):
        raise ValidationError("mixtures need a shared grid")
    return RandomizedPredictor(Q1.grid, (1 - lam) * Q1.weights + lam * Q2.weights)
