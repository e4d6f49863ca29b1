"""Population and empirical multicalibration metrics.

Everything is computed from a :class:`BiasTable`, which holds the signed bias
``B(g, v)`` for every group and prediction value and the bucket mass ``pi(v)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import FiniteInstance, GroupFamily, RandomizedPredictor, Transcript, ValidationError
from .properties import PropertySpec, identification, law_expected_identification


@dataclass(frozen=True)
class BiasTable:
    """Signed biases ``bias[j, k]`` for group ``j`` at grid value ``values[k]``, and masses ``mass[k]``."""

    values: np.ndarray
    bias: np.ndarray
    mass: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        bias = np.asarray(self.bias, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if bias.ndim != 2 or bias.shape[1] != mass.size or mass.size != np.size(self.values):
            raise ValidationError("bias must be (groups, K) with K matching values and mass")
        if len(self.labels) != bias.shape[0]:
            raise ValidationError("one label per bias row")
        if np.any(mass < 0) or abs(mass.sum() - 1) > 1e-9:
            raise ValidationError("bucket masses must be nonnegative and sum to 1")
        if np.any(np.abs(bias) > mass + 1e-12):
            raise ValidationError("|bias| cannot exceed the bucket mass")
        for name, arr in (("values", np.asarray(self.values, dtype=float)), ("bias", bias), ("mass", mass)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "labels", tuple(self.labels))

    def group_index(self, g: str | int) -> int:
        if isinstance(g, (int, np.integer)):
            if not 0 <= g < len(self.labels):
                raise KeyError(g)
            return int(g)
        try:
            return self.labels.index(g)
        except ValueError:
            raise KeyError(g) from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "value", "bias", "mass"])
        for j, lab in enumerate(self.labels):
            for k, v in enumerate(self.values):
                w.writerow([lab, repr(float(v)), repr(float(self.bias[j, k])), repr(float(self.mass[k]))])
        return buf.getvalue()


def _check_domains(*objs) -> int:
    sizes = {o.domain_size for o in objs}
    if len(sizes) != 1:
        raise ValidationError(f"domain size mismatch: {sorted(sizes)}")
    return sizes.pop()


def identification_matrix(P: FiniteInstance, values: np.ndarray, prop: PropertySpec) -> np.ndarray:
    """``M[i, k] = E[V(values[k], Y) | X = i]``."""
    return np.stack([law_expected_identification(law, prop, values) for law in P.laws])


def population_bias_table(
    P: FiniteInstance, Q: RandomizedPredictor, G: GroupFamily, prop: PropertySpec
) -> BiasTable:
    _check_domains(P, Q, G)
    M = identification_matrix(P, Q.grid.values, prop)
    weighted = P.context_weights[:, None] * Q.weights
    return BiasTable(Q.grid.values, G.groups @ (weighted * M), weighted.sum(axis=0), G.labels)


def ece(table: BiasTable, g: str | int) -> float:
    return float(np.abs(table.bias[table.group_index(g)]).sum())


def mc(table: BiasTable) -> float:
    return float(np.abs(table.bias).sum(axis=1).max())


def _lp_ratios(table: BiasTable, p: float) -> np.ndarray:
    if not p >= 1:
        raise ValidationError("p must be at least 1")
    keep = table.mass > 0
    a = np.abs(table.bias[:, keep])
    return a**p / table.mass[keep] ** (p - 1)


def mc_lp(table: BiasTable, p: float) -> float:
    return float(_lp_ratios(table, p).sum(axis=1).max())


def smc_lp(table: BiasTable, p: float) -> float:
    return float(_lp_ratios(table, p).max(axis=0).sum())


def prediction_error(P: FiniteInstance, Q: RandomizedPredictor, target) -> float:
    target = np.asarray(target, dtype=float)
    if target.shape != (P.domain_size,):
        raise ValidationError(f"target must have length {P.domain_size}")
    _check_domains(P, Q)
    dist = np.abs(Q.grid.values[None, :] - target[:, None])
    return float(P.context_weights @ (Q.weights * dist).sum(axis=1))


def empirical_bias_table(S: Transcript, G: GroupFamily, prop: PropertySpec) -> BiasTable:
    """Transcript averages using the realized identification ``V(v_k, Y_t)``."""
    _check_domains(S, G)
    T = len(S)
    rows = S.realized_rows()
    V = identification(prop, S.grid.values[None, :], S.labels[:, None])
    bias = G.groups[:, S.contexts] @ (rows * V) / T
    return BiasTable(S.grid.values, bias, rows.sum(axis=0) / T, G.labels)


def brute_force_bias_table(
    P: FiniteInstance, Q: RandomizedPredictor, G: GroupFamily, prop: PropertySpec
) -> BiasTable:
    """Reference evaluation by enumerating every (context, label, prediction) outcome.

    Only for Bernoulli label laws; used to cross-check :func:`population_bias_table`.
    """
    _check_domains(P, Q, G)
    K = len(Q.grid)
    bias = np.zeros((len(G), K))
    mass = np.zeros(K)
    for i, law in enumerate(P.laws):
        p = law.bernoulli_p
        for y, py in ((0.0, 1 - p), (1.0, p)):
            for k, v in enumerate(Q.grid.values):
                prob = P.context_weights[i] * py * Q.weights[i, k]
                if prob == 0:
                    continue
                val = float(identification(prop, v, y))
                for j in range(len(G)):
                    if G.groups[j, i]:
                        bias[j, k] += prob * val
                mass[k] += prob
    return BiasTable(Q.grid.values, bias, mass, G.labels)
