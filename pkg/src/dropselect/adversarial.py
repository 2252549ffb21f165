"""Iterative gradient-sign attacks and mixed real/adversarial sets.

An attack repeatedly nudges an input along the sign of the loss gradient
(step `eps`, clipped to the feature range) until the model's predicted
class flips or the iteration budget runs out.  The per-iteration metric
trace of a batch of attacks shows how each selection score reacts as an
input drifts across the decision boundary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .metrics import KdeConfig
from .model import Dataset, MLPModel, predict_proba
from .scoring import ALL_METRICS, compute_scores
from .stats import DegenerateStatisticError, kendall_tau_b
from .tensormath import DTYPE, child_seed


@dataclass
class AttackTrace:
    """One attack: iterate 0 is the original input."""

    original_index: int
    true_label: int
    iterates: np.ndarray  # (iters_used + 1) x d
    predicted: np.ndarray  # class per iterate
    success: bool
    eps: float

    @property
    def iters_used(self) -> int:
        return len(self.iterates) - 1

    @property
    def original_pred(self) -> int:
        return int(self.predicted[0])

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def penultimate(self) -> np.ndarray:
        return self.iterates[-2] if len(self.iterates) >= 2 else self.iterates[0]


def fgsm_attack(
    model: MLPModel,
    x,
    true_label: int,
    eps: float,
    max_iters: int,
    clip: tuple[float, float] = (0.0, 1.0),
    original_index: int = -1,
) -> AttackTrace:
    """Iterate x += eps * sign(dLoss/dx), clipped, until the predicted
    class changes.  A run that never flips is a valid unsuccessful trace.
    """
    from .model import input_gradient

    if eps <= 0:
        raise ValueError("eps must be > 0")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    lo, hi = clip
    x = np.clip(np.asarray(x, dtype=DTYPE), lo, hi)
    iterates = [x]
    preds = [int(predict_proba(model, x[None, :]).argmax())]
    success = False
    for _ in range(max_iters):
        g = input_gradient(model, iterates[-1], true_label)
        nxt = np.clip(iterates[-1] + DTYPE(eps) * np.sign(g, dtype=DTYPE), lo, hi)
        pred = int(predict_proba(model, nxt[None, :]).argmax())
        iterates.append(nxt.astype(DTYPE))
        preds.append(pred)
        if pred != preds[0]:
            success = True
            break
    return AttackTrace(
        original_index=original_index,
        true_label=int(true_label),
        iterates=np.stack(iterates),
        predicted=np.asarray(preds, dtype=np.int64),
        success=success,
        eps=float(eps),
    )


def attack_batch(
    model: MLPModel,
    data: Dataset,
    indices,
    eps: float,
    max_iters: int,
    clip: tuple[float, float] = (0.0, 1.0),
    threads: int = 1,
) -> list[AttackTrace]:
    """Attack the given rows of `data`; traces come back in input order."""
    from .parallel import parallel_map

    indices = np.asarray(indices, dtype=np.int64)

    def one(i: int) -> AttackTrace:
        idx = int(indices[i])
        return fgsm_attack(
            model,
            data.features[idx],
            int(data.labels[idx]),
            eps=eps,
            max_iters=max_iters,
            clip=clip,
            original_index=idx,
        )

    return parallel_map(one, len(indices), threads)


REAL = "real"
ADVERSARIAL = "adversarial"

FINAL_ONLY = "final-only"
FINAL_PLUS_PENULTIMATE = "final-plus-penultimate"


@dataclass
class MixedSet:
    """Real rows followed by adversarial rows derived from them."""

    features: np.ndarray
    labels: np.ndarray
    source_tags: list[str]
    provenance: list[int]  # original row index; -1 for real rows
    n_classes: int

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.labels) == len(self.source_tags) == len(self.provenance) == n):
            raise ValueError("mixed-set columns disagree in length")

    @property
    def n_real(self) -> int:
        return self.source_tags.count(REAL)

    @property
    def n_adversarial(self) -> int:
        return self.source_tags.count(ADVERSARIAL)

    def adversarial_mask(self) -> np.ndarray:
        return np.asarray([t == ADVERSARIAL for t in self.source_tags])

    def as_dataset(self, split_tag: str = "mixed") -> Dataset:
        return Dataset(self.features, self.labels, self.n_classes, split_tag)


def build_mixed_set(real: Dataset, traces, mode: str = FINAL_ONLY) -> MixedSet:
    """Append adversarial rows to a copy of the real set.

    final-only: the misclassified final iterate of each successful trace
    (unsuccessful traces are skipped with a warning).  final-plus-
    penultimate: both the final iterate and the still-well-classified
    one before it, two rows per trace; every trace must be successful.
    """
    if mode not in (FINAL_ONLY, FINAL_PLUS_PENULTIMATE):
        raise ValueError(f"unknown mode {mode!r}")
    feats = [real.features]
    labels = [real.labels]
    tags = [REAL] * real.n
    provenance = [-1] * real.n
    for t in traces:
        if not t.success:
            if mode == FINAL_PLUS_PENULTIMATE:
                raise ValueError(
                    f"trace for row {t.original_index} is unsuccessful; "
                    "the two-per-trace mode needs a flip"
                )
            warnings.warn(
                f"skipping unsuccessful trace for row {t.original_index}",
                stacklevel=2,
            )
            continue
        if mode == FINAL_PLUS_PENULTIMATE:
            feats.append(t.penultimate[None, :])
            labels.append(np.array([t.true_label], dtype=np.int64))
            tags.append(ADVERSARIAL)
            provenance.append(t.original_index)
        feats.append(t.final[None, :])
        labels.append(np.array([t.true_label], dtype=np.int64))
        tags.append(ADVERSARIAL)
        provenance.append(t.original_index)
    return MixedSet(
        features=np.concatenate(feats, axis=0),
        labels=np.concatenate(labels),
        source_tags=tags,
        provenance=provenance,
        n_classes=real.n_classes,
    )


@dataclass
class TrendTable:
    """Per-iteration metric values for a batch of attack traces."""

    rows: list[dict] = field(default_factory=list)
    per_trace_tau: dict[str, list[float]] = field(default_factory=dict)
    median_tau: dict[str, float] = field(default_factory=dict)
    flagged: list[tuple[int, str]] = field(default_factory=list)


def trace_metric_trends(
    model: MLPModel,
    train_data: Dataset,
    traces,
    k: int = 50,
    seed: int = 0,
    kde_cfg: KdeConfig | None = None,
) -> TrendTable:
    """All six metrics at every iterate of every trace, plus a per-trace
    Kendall tau of metric value against iteration index, aggregated as
    the median over traces.  Single-iterate or constant-metric traces
    have no defined trend and are flagged instead."""
    table = TrendTable(per_trace_tau={m: [] for m in ALL_METRICS})
    for ti, trace in enumerate(traces):
        bundle = compute_scores(
            model,
            train_data,
            trace.iterates,
            metric_ids=ALL_METRICS,
            k=k,
            seed=child_seed(seed, "trend-mc", ti),
            kde_cfg=kde_cfg,
            strict=False,
        )
        n_it = len(trace.iterates)
        for it in range(n_it):
            row = {
                "trace": ti,
                "original_index": trace.original_index,
                "iteration": it,
                "predicted": int(trace.predicted[it]),
            }
            for m in ALL_METRICS:
                row[m] = float(bundle.scores[m].values[it])
            table.rows.append(row)
        if n_it < 2:
            table.flagged.append((ti, "single iterate: trend undefined"))
            continue
        iters = np.arange(n_it, dtype=np.float64)
        for m in ALL_METRICS:
            vals = bundle.scores[m].values
            try:
                tau = kendall_tau_b(vals, iters)
            except DegenerateStatisticError:
                table.flagged.append((ti, f"{m} constant over the trace"))
                continue
            table.per_trace_tau[m].append(tau)
    for m in ALL_METRICS:
        taus = table.per_trace_tau[m]
        table.median_tau[m] = float(np.median(taus)) if taus else float("nan")
    return table
