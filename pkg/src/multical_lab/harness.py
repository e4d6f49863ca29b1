"""Estimators and persistence shared by the experiments: sample complexity, slope fits, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .core import ValidationError, stream

log = logging.getLogger(__name__)

SUCCESS_TARGET = 2 / 3


@dataclass(frozen=True)
class RunResult:
    """One trial of an experiment; metric fields are ``nan`` when not measured."""

    experiment: str
    m: int
    T: int
    seed: int
    trial: int
    prop: str = "mean"
    mc: float = math.nan
    mc_p: float = math.nan
    smc_p: float = math.nan
    delta: float = math.nan
    decoded: bool | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("mc", "mc_p", "smc_p", "delta"):
            v = getattr(self, name)
            if not (math.isnan(v) or -1e-12 <= v <= 1 + 1e-12):
                raise ValidationError(f"{name}={v} outside [0, 1]")

    def row(self) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "extra"}
        out.update(self.extra)
        return out


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map; results do not depend on ``workers``."""
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------- estimators


def wilson_lower(successes: int, trials: int, confidence: float = 0.9) -> float:
    """One-sided lower Wilson bound at ``confidence``."""
    if trials == 0:
        return 0.0
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=2 * confidence - 1, method="wilson")
    return float(ci.low)


@dataclass(frozen=True)
class SampleComplexityEstimate:
    n_hat: float
    curve: list[tuple[int, int, int, float]]  # (n, successes, trials, wilson lower)
    reached: bool


def estimate_sample_complexity(
    success: Callable[[int, int], bool],
    n_grid: Iterable[int],
    trials: int,
    target: float = SUCCESS_TARGET,
    confidence: float = 0.9,
    stop_at_first: bool = True,
) -> SampleComplexityEstimate:
    """Smallest grid ``n`` whose Wilson lower bound on ``P(success)`` reaches ``target``.

    ``success(n, trial)`` runs one trial.  An unreached target is reported
    with ``n_hat = inf`` rather than raised.
    """
    grid = list(n_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("n grid must be strictly increasing")
    curve = []
    n_hat = math.inf
    for n in grid:
        wins = sum(bool(success(n, j)) for j in range(trials))
        lo = wilson_lower(wins, trials, confidence)
        curve.append((n, wins, trials, lo))
        if lo >= target and not math.isfinite(n_hat):
            n_hat = n
            if stop_at_first:
                break
    return SampleComplexityEstimate(float(n_hat), curve, math.isfinite(n_hat))


def geometric_grid(n_min: int, n_max: int, steps_per_octave: int) -> list[int]:
    """Distinct integers ``round(2^{j / steps})`` between ``n_min`` and ``n_max``."""
    lo = math.log2(n_min) * steps_per_octave
    hi = math.log2(n_max) * steps_per_octave
    vals = sorted({int(round(2 ** (j / steps_per_octave))) for j in range(math.ceil(lo), math.floor(hi) + 1)})
    return vals


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int

    def to_json(self) -> dict[str, float]:
        return asdict(self)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def scaling_slope(
    results: Sequence[tuple[float, float]] | dict[float, Sequence[float]],
    bootstrap: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> SlopeFit:
    """OLS slope of ``log(median metric)`` against ``log T``.

    ``results`` is either ``(T, median)`` pairs (no interval) or a mapping
    ``T -> per-trial metrics``, in which case trials are resampled within each
    ``T`` for a percentile bootstrap interval.
    """
    if isinstance(results, dict):
        per_t = {float(T): np.asarray(v, dtype=float) for T, v in sorted(results.items())}
    else:
        per_t = {float(T): np.asarray([v], dtype=float) for T, v in results}
    clean = {}
    for T, v in per_t.items():
        bad = ~(v > 0)
        if bad.any():
            warnings.warn(f"T={T:g}: dropping {int(bad.sum())} nonpositive metric values", stacklevel=2)
        if (~bad).any():
            clean[T] = v[~bad]
    if len(clean) < 2:
        raise ValidationError("need at least two T values with positive metrics")
    Ts = np.array(sorted(clean))
    if len(Ts) < 4 or math.log10(Ts[-1] / Ts[0]) < 2:
        warnings.warn("slope fit uses fewer than 4 points or spans under two decades", stacklevel=2)
    x = np.log(Ts)
    y = np.log([np.median(clean[T]) for T in Ts])
    slope, intercept = _ols(x, y)
    lo = hi = slope
    if bootstrap and max(len(v) for v in clean.values()) > 1:
        rng = stream("bootstrap", seed, len(Ts))
        draws = np.empty(bootstrap)
        for b in range(bootstrap):
            yb = [np.log(np.median(rng.choice(clean[T], size=len(clean[T])))) for T in Ts]
            draws[b] = _ols(x, np.asarray(yb))[0]
        a = (1 - level) / 2
        lo, hi = (float(q) for q in np.quantile(draws, [a, 1 - a]))
    return SlopeFit(slope, intercept, lo, hi, len(Ts))


# --------------------------------------------------------------------------- persistence


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the same directory and an atomic rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows: Sequence[dict[str, Any]], columns: Sequence[str] = ()) -> str:
    """CSV text with ``columns`` first, then any other keys in first-seen order.

    An empty ``rows`` is allowed only when ``columns`` gives the header.
    """
    if not rows and not columns:
        raise ValidationError("no rows to write")
    cols: list[str] = list(columns)
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def markdown_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    def cell(v: Any) -> str:
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in rows]
    return "\n".join(lines)


def histogram_csv(values: Sequence[float], bins: int = 20, lo: float = 0.0, hi: float = 1.0) -> str:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(lo, hi))
    rows = [{"bin_low": edges[i], "bin_high": edges[i + 1], "count": int(c)} for i, c in enumerate(counts)]
    return rows_to_csv(rows)


def write_bundle(
    out_dir: str,
    name: str,
    tables: dict[str, str],
    summary_md: str,
    config: dict[str, Any],
    timing: dict[str, float] | None = None,
) -> dict[str, str]:
    """Write CSV tables, ``summary.md`` and ``config.json``; timings go to a separate file.

    Everything except ``timing.json`` is a deterministic function of the config.
    """
    base = os.path.join(out_dir, name)
    paths = {}
    for fname, text in tables.items():
        paths[fname] = os.path.join(base, fname)
        atomic_write(paths[fname], text)
    paths["summary.md"] = os.path.join(base, "summary.md")
    atomic_write(paths["summary.md"], summary_md)
    paths["config.json"] = os.path.join(base, "config.json")
    atomic_write(paths["config.json"], json.dumps(config, indent=2, sort_keys=True) + "\n")
    if timing is not None:
        paths["timing.json"] = os.path.join(base, "timing.json")
        atomic_write(paths["timing.json"], json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return paths


def report(rows: Sequence[dict[str, str]], filters: dict[str, str] | None = None, by: Sequence[str] = ("m", "T")) -> str:
    """Markdown table of median metrics grouped by ``by`` after applying equality filters."""
    filters = filters or {}
    sel = [r for r in rows if all(str(r.get(k)) == v for k, v in filters.items())]
    if not sel:
        raise ValidationError(f"no rows match {filters}")
    metrics = [c for c in ("mc", "mc_p", "smc_p", "delta", "decoded") if c in sel[0]]
    groups: dict[tuple, list[dict[str, str]]] = {}
    for r in sel:
        groups.setdefault(tuple(r.get(k, "") for k in by), []).append(r)

    def med(rs, c):
        vals = [float(r[c]) for r in rs if r.get(c) not in ("", None)]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.median(vals)) if vals else math.nan

    def key(k):
        return tuple(float(x) if x.replace(".", "", 1).isdigit() else math.inf for x in k)

    body = [[*k, len(rs), *(med(rs, c) for c in metrics)] for k, rs in sorted(groups.items(), key=lambda kv: key(kv[0]))]
    return markdown_table([*by, "trials", *(f"median {c}" for c in metrics)], body)
