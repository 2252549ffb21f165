"""Correlations against the misclassification indicator and decile curves.

Kendall tau-b (tie-corrected, since the correctness side is binary and
massively tied), Pearson, and the sample distance correlation.  A fully
constant side makes a correlation undefined; that surfaces as an explicit
`DegenerateStatisticError`, never as a silent zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .metrics import ScoreVector

DCOR_DEFAULT_CAP = 20_000


class DegenerateStatisticError(ValueError):
    """Correlation undefined: one side has no variation."""


class SampleCapExceededError(ValueError):
    """Too many points for the O(n^2) distance matrices."""


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("inputs must be 1-D")
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    return x, y


def kendall_tau_b(x, y) -> float:
    """Tie-corrected Kendall rank correlation."""
    x, y = _check_pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateStatisticError("kendall tau undefined for a constant side")
    tau = scipy.stats.kendalltau(x, y, variant="b").statistic
    return float(tau)


def pearson(x, y) -> float:
    x, y = _check_pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateStatisticError("pearson undefined for a constant side")
    return float(scipy.stats.pearsonr(x, y).statistic)


def distance_correlation(x, y, cap: int = DCOR_DEFAULT_CAP) -> float:
    """Sample distance correlation via double-centered distance matrices.

    Nonnegative by construction and 1.0 for y = +/-x; O(n^2) memory, so
    inputs beyond `cap` points are rejected rather than silently slow.
    """
    x, y = _check_pair(x, y)
    n = len(x)
    if n > cap:
        raise SampleCapExceededError(
            f"{n} points exceed the O(n^2) cap of {cap}; subsample the inputs"
        )

    def centered(v: np.ndarray) -> np.ndarray:
        d = np.abs(v[:, None] - v[None, :])
        return d - d.mean(axis=0, keepdims=True) - d.mean(axis=1, keepdims=True) + d.mean()

    a = centered(x)
    b = centered(y)
    dcov2 = float((a * b).mean())
    dvar_x = float((a * a).mean())
    dvar_y = float((b * b).mean())
    if dvar_x <= 0 or dvar_y <= 0:
        raise DegenerateStatisticError("distance variance is zero on one side")
    return float(np.sqrt(max(dcov2, 0.0) / np.sqrt(dvar_x * dvar_y)))


@dataclass
class MetricCorrelation:
    metric_id: str
    kendall: float | None
    distance: float | None
    pearson: float | None
    n: int
    degenerate: list[str] = field(default_factory=list)


@dataclass
class CorrelationReport:
    """Per-metric correlations against the correctness indicator."""

    entries: list[MetricCorrelation] = field(default_factory=list)
    accuracy: float | None = None

    def by_metric(self, metric_id: str) -> MetricCorrelation:
        for e in self.entries:
            if e.metric_id == metric_id:
                return e
        raise KeyError(metric_id)


def correlate_metric(scores: ScoreVector, correct) -> MetricCorrelation:
    """All three correlations between one metric and the binary
    correctness flags (1 = well-classified).  Degenerate statistics are
    recorded by name with a None value."""
    correct = np.asarray(correct, dtype=np.float64)
    if len(correct) != scores.n:
        raise ValueError("correctness length does not match the scores")
    if scores.invalid:
        raise ValueError(
            f"{scores.metric_id} has {len(scores.invalid)} invalid scores; "
            "drop them before correlating"
        )
    x = scores.values
    out = MetricCorrelation(scores.metric_id, None, None, None, n=len(x))
    for name, fn in (
        ("kendall", kendall_tau_b),
        ("distance", distance_correlation),
        ("pearson", pearson),
    ):
        try:
            setattr(out, name, fn(x, correct))
        except DegenerateStatisticError:
            out.degenerate.append(name)
    return out


def correlation_report(score_vectors, correct) -> CorrelationReport:
    correct = np.asarray(correct, dtype=np.float64)
    report = CorrelationReport(accuracy=float(correct.mean()))
    for sv in score_vectors:
        report.entries.append(correlate_metric(sv, correct))
    return report


@dataclass
class DecileCurve:
    metric_id: str
    fractions: list[float]
    cumulative_accuracy: list[float]
    mean_metric_per_decile: list[float]


def decile_curve(scores: ScoreVector, correct) -> DecileCurve:
    """Cumulative accuracy over test data sorted most-uncertain-first.

    The sorted inputs are cut into 10 subsets; when n is not divisible
    by 10 the remainder goes to the earliest subsets, one extra item
    each.  Ties sort by original index, so the curve is reproducible.
    """
    correct = np.asarray(correct, dtype=np.float64)
    n = scores.n
    if len(correct) != n:
        raise ValueError("correctness length does not match the scores")
    if n < 10:
        raise ValueError("need at least 10 points for a decile curve")

    order = np.argsort(scores.uncertainty_key(), kind="stable")
    sorted_correct = correct[order]
    sorted_values = scores.values[order]

    base, rem = divmod(n, 10)
    sizes = [base + (1 if i < rem else 0) for i in range(10)]
    bounds = np.cumsum([0] + sizes)

    fractions, cum_acc, mean_metric = [], [], []
    for i in range(10):
        fractions.append((i + 1) / 10)
        cum_acc.append(float(sorted_correct[: bounds[i + 1]].mean()))
        mean_metric.append(float(sorted_values[bounds[i] : bounds[i + 1]].mean()))
    return DecileCurve(scores.metric_id, fractions, cum_acc, mean_metric)
