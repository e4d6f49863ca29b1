"""Online forecasters, the averaged online-to-batch predictor, bucket rounding, and batch baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol, Sequence

import numpy as np

from .core import (
    FiniteInstance,
    GroupFamily,
    PredictionGrid,
    RandomizedPredictor,
    Transcript,
    ValidationError,
    mean_prediction_function,
    stream,
)
from .hardinstance import StaircaseInstance, staircase_map
from .properties import PropertySpec, identification, mean_property

PRIOR = 0.5


# --------------------------------------------------------------------------- forecaster contract


@dataclass
class ForecasterState:
    """Per-context sufficient statistics; owned by a single run."""

    grid: PredictionGrid
    prop: PropertySpec
    sums: np.ndarray
    counts: np.ndarray
    history: list[list[float]] = field(default_factory=list)
    rounds: int = 0

    @property
    def domain_size(self) -> int:
        return int(self.counts.size)


class Forecaster(Protocol):
    grid: PredictionGrid

    def init_state(self, m: int) -> ForecasterState: ...

    def step(self, state: ForecasterState, x: int) -> np.ndarray:
        """Probability vector over the grid, computed from rounds before the current one."""
        ...

    def update(self, state: ForecasterState, x: int, y: float) -> ForecasterState: ...


def _estimate_root(prop: PropertySpec, ys: Sequence[float], alpha0: float) -> float:
    """Smallest ``v`` with ``sum_s V(v, y_s) + alpha0 V(v, 1/2) >= 0``, by bisection.

    ``V(., y)`` is nondecreasing for every supported property, so the set is an interval.
    """
    if not ys and alpha0 == 0:
        return PRIOR
    ys = np.asarray(ys, dtype=float)

    def phi(v: float) -> float:
        return float(identification(prop, v, ys).sum() + alpha0 * identification(prop, v, PRIOR))

    if phi(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if phi(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ReferenceForecaster:
    """Point mass on the grid value nearest a smoothed per-context estimate.

    For the mean the estimate is ``(sum + alpha0/2) / (count + alpha0)``; for
    other properties it is the root of the empirical identification function
    with ``alpha0`` pseudo-labels at ``1/2``.  Ties go to the lower grid value.
    """

    grid: PredictionGrid
    prop: PropertySpec = field(default_factory=mean_property)
    alpha0: float = 1.0

    def init_state(self, m: int) -> ForecasterState:
        hist = [[] for _ in range(m)] if self.prop.kind != "mean" else []
        return ForecasterState(self.grid, self.prop, np.zeros(m), np.zeros(m, dtype=np.int64), hist)

    def estimate(self, state: ForecasterState, x: int) -> float:
        if self.prop.kind == "mean":
            denom = state.counts[x] + self.alpha0
            return PRIOR if denom == 0 else float((state.sums[x] + self.alpha0 * PRIOR) / denom)
        return _estimate_root(self.prop, state.history[x], self.alpha0)

    def step_index(self, state: ForecasterState, x: int) -> int:
        if not 0 <= x < state.domain_size:
            raise ValidationError(f"context {x} outside [m]")
        return int(self.grid.nearest_index(self.estimate(state, x)))

    def step(self, state: ForecasterState, x: int) -> np.ndarray:
        out = np.zeros(len(self.grid))
        out[self.step_index(state, x)] = 1.0
        return out

    def update(self, state: ForecasterState, x: int, y: float) -> ForecasterState:
        if not 0 <= x < state.domain_size:
            raise ValidationError(f"context {x} outside [m]")
        state.sums[x] += y
        state.counts[x] += 1
        if self.prop.kind != "mean":
            state.history[x].append(float(y))
        state.rounds += 1
        return state


def run_online(
    P: FiniteInstance, forecaster: Forecaster, T: int, seed: int, scope: Sequence[int] = (), fast: bool = True
) -> Transcript:
    """Draw ``T`` i.i.d. rounds from ``P`` and record each round's full rule before the update."""
    if T < 1:
        raise ValidationError("T must be at least 1")
    rng = stream("online", seed, *scope, T)
    x, y = P.sample(T, rng)
    if fast and isinstance(forecaster, ReferenceForecaster) and forecaster.prop.kind == "mean":
        return Transcript(forecaster.grid, x, y, rule_indices=_reference_mean_indices(forecaster, x, y, P.domain_size))
    m = P.domain_size
    state = forecaster.init_state(m)
    if isinstance(forecaster, ReferenceForecaster):
        idx = np.empty((T, m), dtype=np.int64)
        current = np.array([forecaster.step_index(state, i) for i in range(m)])
        for t in range(T):
            idx[t] = current
            forecaster.update(state, int(x[t]), float(y[t]))
            current[x[t]] = forecaster.step_index(state, int(x[t]))
        return Transcript(forecaster.grid, x, y, rule_indices=idx)
    rules = np.empty((T, m, len(forecaster.grid)))
    for t in range(T):
        rules[t] = [forecaster.step(state, i) for i in range(m)]
        forecaster.update(state, int(x[t]), float(y[t]))
    return Transcript(forecaster.grid, x, y, rules=rules)


def _reference_mean_indices(f: ReferenceForecaster, x: np.ndarray, y: np.ndarray, m: int) -> np.ndarray:
    """Vectorized reference-forecaster rules; matches the round-by-round loop exactly."""
    T = x.size
    onehot = np.zeros((T + 1, m))
    onehot[np.arange(1, T + 1), x] = 1.0
    counts = np.cumsum(onehot, axis=0)[:-1]
    labelled = np.zeros((T + 1, m))
    labelled[np.arange(1, T + 1), x] = y
    sums = np.cumsum(labelled, axis=0)[:-1]
    denom = counts + f.alpha0
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(denom == 0, PRIOR, (sums + f.alpha0 * PRIOR) / denom)
    return f.grid.nearest_index(est)


def averaged_batch_predictor(S: Transcript) -> RandomizedPredictor:
    """``q_S(x) = (1/T) sum_t q_t(x)``."""
    T, m, K = len(S), S.domain_size, len(S.grid)
    if S.rules is not None:
        w = S.rules.sum(axis=0) / T
    else:
        flat = (np.arange(m)[None, :] * K + S.rule_indices).ravel()
        w = np.bincount(flat, minlength=m * K).reshape(m, K) / T
    return RandomizedPredictor(S.grid, w)


# --------------------------------------------------------------------------- grids and rounding


def select_grid_size(T: int, n_groups: int) -> int:
    """``max(1, ceil((T / log(2 |G| T))^{1/3}))``."""
    if T < 1 or n_groups < 1:
        raise ValidationError("need T >= 1 and |G| >= 1")
    return max(1, math.ceil((T / math.log(2 * n_groups * T)) ** (1 / 3)))


def bucket_index(p, K: int) -> np.ndarray:
    """Bucket of each point for ``[ (k-1)/K, k/K )``, the last bucket closed at 1."""
    p = np.asarray(p, dtype=float)
    return np.minimum(np.floor(p * K), K - 1).astype(np.int64)


def bucket_round(points, weights, K: int) -> np.ndarray:
    """Mass of a finitely supported law on ``[0, 1]`` per bucket; centers are ``(2k-1)/(2K)``."""
    if K < 1:
        raise ValidationError("K must be at least 1")
    points = np.atleast_1d(np.asarray(points, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    return np.bincount(bucket_index(points, K), weights=weights, minlength=K)


def bucket_rounding_sides(points, probs, labels, g, K: int, exact: bool = False):
    """Both sides of the bucket-rounding inequality for one group's weights ``g_t``.

    ``points[t]`` and ``probs[t]`` give the finite support of ``p_t``.  With
    ``exact=True`` everything is evaluated in rational arithmetic.
    """
    T = len(labels)
    num = Fraction if exact else float
    lhs_terms = [num(0)] * K
    rhs_terms = [num(0)] * K
    for t in range(T):
        if not g[t]:
            continue
        y = num(labels[t])
        for p, w in zip(points[t], probs[t]):
            k = int(bucket_index(float(p), K))
            p, w = num(p), num(w)
            v_k = Fraction(2 * k + 1, 2 * K) if exact else (2 * k + 1) / (2 * K)
            lhs_terms[k] += w * (v_k - y)
            rhs_terms[k] += w * (p - y)
    lhs = sum(abs(a) / T for a in lhs_terms)
    rhs = (Fraction(1, 2 * K) if exact else 1 / (2 * K)) + sum(abs(a) / T for a in rhs_terms)
    return lhs, rhs


# --------------------------------------------------------------------------- batch baselines and decoding


def cell_partition(G: GroupFamily) -> np.ndarray:
    """Cell id of each context: contexts share a cell iff they have the same membership pattern."""
    _, cells = np.unique(G.groups.T, axis=0, return_inverse=True)
    return np.asarray(cells).ravel()


def cellwise_from_counts(counts, sums, G: GroupFamily, cells: np.ndarray | None = None) -> RandomizedPredictor:
    """Per-cell empirical mean (prior 1/2 on empty cells) rounded to the ``1/ceil(sqrt n)`` mesh.

    ``cells`` may carry a precomputed :func:`cell_partition` of ``G``.
    """
    counts = np.asarray(counts, dtype=float)
    sums = np.asarray(sums, dtype=float)
    n = int(round(counts.sum()))
    if n < 1:
        raise ValidationError("sample must be non-empty")
    if cells is None:
        cells = cell_partition(G)
    c_n = np.bincount(cells, weights=counts)
    c_s = np.bincount(cells, weights=sums)
    with np.errstate(invalid="ignore", divide="ignore"):
        cell_mean = np.where(c_n > 0, c_s / np.where(c_n > 0, c_n, 1), PRIOR)
    grid = PredictionGrid.mesh(1 / math.ceil(math.sqrt(n)))
    idx = grid.nearest_index(cell_mean[cells])
    w = np.zeros((G.domain_size, len(grid)))
    w[np.arange(G.domain_size), idx] = 1.0
    return RandomizedPredictor(grid, w)


def cellwise_baseline(contexts, labels, G: GroupFamily) -> RandomizedPredictor:
    contexts = np.asarray(contexts, dtype=np.int64)
    labels = np.asarray(labels, dtype=float)
    if contexts.size == 0:
        raise ValidationError("sample must be non-empty")
    m = G.domain_size
    return cellwise_from_counts(
        np.bincount(contexts, minlength=m), np.bincount(contexts, weights=labels, minlength=m), G
    )


def staircase_table(s: StaircaseInstance) -> np.ndarray:
    """``t_theta`` for every codeword of the family, one row per codeword."""
    return np.stack([staircase_map(s.m, s.interval, w) for w in s.code.words])


def nearest_staircase_decoder(Q: RandomizedPredictor, family: StaircaseInstance, table: np.ndarray | None = None) -> int:
    """Index of the codeword whose staircase is L1-nearest to the mean prediction function."""
    if len(family.code) == 0:
        raise ValidationError("empty code")
    if Q.domain_size != family.m:
        raise ValidationError("predictor and family disagree on m")
    if table is None:
        table = staircase_table(family)
    fbar = mean_prediction_function(Q)
    return int(np.argmin(np.abs(table - fbar).mean(axis=1)))
