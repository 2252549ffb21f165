"""Uncertainty-ranked input selection and the budgeted retraining loop.

Ranking sorts most-uncertain-first through each metric's orientation;
exact ties on the primary score fall through to an optional tie-breaker
metric (the "Var and P" / "KL and P" policies pick the lowest maximum
probability among tied inputs), then to the original index.

The retraining loop starts from a random initial training set, then
repeatedly scores the remaining pool with the current model, moves the
top-ranked batch into the training set, and retrains from scratch.  The
whole simulation is repeated R times on child seeds and reported as a
median accuracy curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import KdeConfig, ScoreVector
from .model import Dataset, TrainConfig, accuracy, train
from .scoring import compute_scores
from .tensormath import child_rng, child_seed, seeded_shuffle

RANDOM_POLICY = "random"


@dataclass
class SelectionPolicy:
    primary_metric: str  # metric id or "random"
    tie_breaker: str | None = None
    seed: int = 0

    def __post_init__(self):
        from .metrics import METRIC_IDS

        valid = set(METRIC_IDS) | {RANDOM_POLICY}
        if self.primary_metric not in valid:
            raise ValueError(f"unknown primary metric {self.primary_metric!r}")
        if self.tie_breaker is not None:
            if self.tie_breaker not in METRIC_IDS:
                raise ValueError(f"unknown tie-breaker {self.tie_breaker!r}")
            if self.tie_breaker == self.primary_metric:
                raise ValueError("tie-breaker must differ from the primary metric")
            if self.primary_metric == RANDOM_POLICY:
                raise ValueError("random policy takes no tie-breaker")

    @property
    def label(self) -> str:
        if self.tie_breaker:
            return f"{self.primary_metric}+{self.tie_breaker}"
        return self.primary_metric

    def needed_metrics(self) -> list[str]:
        need = []
        if self.primary_metric != RANDOM_POLICY:
            need.append(self.primary_metric)
        if self.tie_breaker:
            need.append(self.tie_breaker)
        return need


def parse_policy(text: str, seed: int = 0) -> SelectionPolicy:
    """Parse 'random', 'Var', 'KL+MaxP', ... into a policy."""
    parts = text.split("+")
    if len(parts) == 1:
        return SelectionPolicy(parts[0], None, seed)
    if len(parts) == 2:
        return SelectionPolicy(parts[0], parts[1], seed)
    raise ValueError(f"cannot parse policy {text!r}")


def rank_inputs(
    scores: ScoreVector | None,
    tie_scores: ScoreVector | None,
    policy: SelectionPolicy,
    n: int | None = None,
) -> np.ndarray:
    """Permutation of input indices, most uncertain first.

    The sort is stable, so inputs tied on every key keep their original
    order.  The random policy is a seeded shuffle and ignores scores.
    """
    if policy.primary_metric == RANDOM_POLICY:
        if n is None:
            raise ValueError("random policy needs the input count")
        return seeded_shuffle(n, child_rng(policy.seed, "random-policy"))
    if scores is None or scores.metric_id != policy.primary_metric:
        raise ValueError("primary scores missing or for the wrong metric")
    keys = [scores.uncertainty_key()]
    if policy.tie_breaker is not None:
        if tie_scores is None or tie_scores.metric_id != policy.tie_breaker:
            raise ValueError("tie scores missing or for the wrong metric")
        if tie_scores.n != scores.n:
            raise ValueError("tie scores length mismatch")
        keys.append(tie_scores.uncertainty_key())
    # lexsort: last key is primary; stability supplies the index tie-break
    return np.lexsort(tuple(reversed(keys)))


@dataclass
class RetrainConfig:
    initial_size: int = 1000
    batch_size: int = 500
    epochs_per_iteration: int = 50
    repetitions: int = 5
    policy: SelectionPolicy = field(default_factory=lambda: SelectionPolicy(RANDOM_POLICY))
    hidden_sizes: tuple[int, ...] = (96, 48)
    dropout_rate: float = 0.2
    learning_rate: float = 0.1
    momentum: float = 0.9
    sgd_batch_size: int = 64
    k: int = 50
    kde: KdeConfig = field(default_factory=KdeConfig)
    seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.initial_size < 1 or self.batch_size < 1:
            raise ValueError("initial_size and batch_size must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    train_size: int
    test_accuracy: float
    selected_ids: np.ndarray
    val_curve: list[float]


@dataclass
class RepetitionTrace:
    seed: int
    iterations: list[IterationRecord] = field(default_factory=list)


@dataclass
class RetrainTrace:
    policy_label: str
    config: RetrainConfig
    repetitions: list[RepetitionTrace] = field(default_factory=list)

    def n_iterations(self) -> int:
        return len(self.repetitions[0].iterations)

    def accuracy_matrix(self) -> np.ndarray:
        return np.array(
            [[it.test_accuracy for it in rep.iterations] for rep in self.repetitions]
        )

    def median_curve(self) -> list[float]:
        return np.median(self.accuracy_matrix(), axis=0).tolist()


def _run_repetition(
    pool: Dataset,
    test: Dataset,
    cfg: RetrainConfig,
    rep_seed: int,
) -> RepetitionTrace:
    order = seeded_shuffle(pool.n, child_rng(rep_seed, "initial-selection"))
    train_ids = [int(i) for i in order[: cfg.initial_size]]
    remaining = [int(i) for i in order[cfg.initial_size :]]
    trace = RepetitionTrace(seed=rep_seed)
    last_chosen = list(train_ids)
    prev_model = None

    iteration = 0
    while True:
        train_cfg = TrainConfig(
            epochs=cfg.epochs_per_iteration,
            learning_rate=cfg.learning_rate,
            momentum=cfg.momentum,
            batch_size=cfg.sgd_batch_size,
            seed=child_seed(rep_seed, "iteration-train", iteration),
        )
        result = train(
            pool.subset(np.array(train_ids), "train"),
            cfg.hidden_sizes,
            cfg.dropout_rate,
            train_cfg,
            init_from=prev_model if cfg.warm_start else None,
        )
        if cfg.warm_start:
            prev_model = result.model
        trace.iterations.append(
            IterationRecord(
                iteration=iteration,
                train_size=len(train_ids),
                test_accuracy=accuracy(result.model, test),
                selected_ids=np.array(sorted(last_chosen)),
                val_curve=result.history.val_accuracy,
            )
        )
        if not remaining:
            break

        rem = np.array(remaining)
        needed = cfg.policy.needed_metrics()
        if needed:
            bundle = compute_scores(
                result.model,
                pool.subset(np.array(train_ids), "train"),
                pool.features[rem],
                metric_ids=needed,
                k=cfg.k,
                seed=child_seed(rep_seed, "iteration-score", iteration),
                kde_cfg=cfg.kde,
            )
            primary = bundle.scores.get(cfg.policy.primary_metric)
            tie = bundle.scores.get(cfg.policy.tie_breaker) if cfg.policy.tie_breaker else None
        else:
            primary = tie = None
        local_policy = SelectionPolicy(
            cfg.policy.primary_metric,
            cfg.policy.tie_breaker,
            seed=child_seed(rep_seed, "iteration-rank", iteration),
        )
        ranked = rank_inputs(primary, tie, local_policy, n=len(rem))
        take = min(cfg.batch_size, len(rem))
        last_chosen = [int(i) for i in rem[ranked[:take]]]
        train_ids.extend(last_chosen)
        chosen_set = set(last_chosen)
        remaining = [i for i in remaining if i not in chosen_set]
        iteration += 1
    return trace


def retrain_loop(pool: Dataset, test: Dataset, cfg: RetrainConfig, threads: int = 1) -> RetrainTrace:
    """Run the budgeted selection-and-retraining simulation.

    Repetitions run on independent child seeds (parallelizable); within a
    repetition the loop is sequential because each iteration scores the
    pool with the model trained in the previous one.
    """
    from .parallel import parallel_map

    if cfg.initial_size + cfg.batch_size > pool.n:
        raise ValueError("pool too small for initial_size + one batch")

    def one(rep: int) -> RepetitionTrace:
        return _run_repetition(pool, test, cfg, child_seed(cfg.seed, "repetition", rep))

    reps = parallel_map(one, cfg.repetitions, threads)
    return RetrainTrace(policy_label=cfg.policy.label, config=cfg, repetitions=reps)
