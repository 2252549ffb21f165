"""Orchestrates metric computation for a model/data pair.

Each metric needs a different slice of model output: the deterministic
probability matrix, the k-pass dropout tensor, or activation matrices
for the training set and the scored inputs.  This module computes only
what the requested metrics require and stamps provenance (k, dropout
rate, bandwidth rule) on every score vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import (
    KdeConfig,
    ScoreVector,
    dsa,
    kl_score,
    lsa,
    max_p,
    var_score,
    var_weighted,
)
from .model import (
    Dataset,
    MLPModel,
    ProbTensor,
    activations,
    all_hidden_activations,
    mc_predict_proba,
    predict_proba,
)

MC_METRICS = ("Var", "VarW", "KL")
SURPRISE_METRICS = ("LSA", "DSA")
ALL_METRICS = ("MaxP", "Var", "VarW", "KL", "LSA", "DSA")


class ScoringError(RuntimeError):
    """A metric could not be computed for some inputs."""


@dataclass
class ScoreBundle:
    """Scores plus the raw model outputs they were derived from."""

    scores: dict[str, ScoreVector]
    det_probs: np.ndarray
    prob_tensor: ProbTensor | None
    predicted: np.ndarray
    provenance: dict

    def correctness(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        return (self.predicted == labels).astype(np.float64)


def compute_scores(
    model: MLPModel,
    train_data: Dataset,
    X,
    metric_ids=ALL_METRICS,
    k: int = 50,
    seed: int = 0,
    kde_cfg: KdeConfig | None = None,
    threads: int = 1,
    strict: bool = True,
) -> ScoreBundle:
    """Compute the requested metrics for the rows of X.

    `strict` turns per-input DSA failures into a ScoringError; with
    strict=False they stay marked invalid on the score vector.
    """
    metric_ids = list(metric_ids)
    unknown = set(metric_ids) - set(ALL_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    kde_cfg = kde_cfg or KdeConfig()

    det = predict_proba(model, X)
    predicted = det.argmax(axis=1)
    scores: dict[str, ScoreVector] = {}

    tensor = None
    if any(m in metric_ids for m in MC_METRICS):
        tensor = mc_predict_proba(model, X, k=k, seed=seed, threads=threads)

    if "MaxP" in metric_ids:
        scores["MaxP"] = max_p(det)
    if "Var" in metric_ids:
        scores["Var"] = var_score(tensor)
    if "VarW" in metric_ids:
        scores["VarW"] = var_weighted(tensor, det)
    if "KL" in metric_ids:
        scores["KL"] = kl_score(tensor)
    if "LSA" in metric_ids:
        train_acts = activations(model, train_data.features, "deepest")
        test_acts = activations(model, X, "deepest")
        scores["LSA"] = lsa(train_acts, test_acts, kde_cfg)
    if "DSA" in metric_ids:
        train_all = all_hidden_activations(model, train_data.features)
        test_all = all_hidden_activations(model, X)
        train_pred = predict_proba(model, train_data.features).argmax(axis=1)
        sv = dsa(train_all, train_pred, test_all, predicted)
        if sv.invalid and strict:
            idx, reason = sv.invalid[0]
            raise ScoringError(
                f"DSA failed for {len(sv.invalid)} inputs (first: row {idx}: {reason})"
            )
        scores["DSA"] = sv

    provenance = {
        "k": k if tensor is not None else None,
        "dropout_rate": model.dropout_rate,
        "seed": seed,
        "bandwidth_rule": kde_cfg.bandwidth_rule if "LSA" in metric_ids else None,
        "variance_floor": kde_cfg.variance_floor if "LSA" in metric_ids else None,
    }
    return ScoreBundle(
        scores=scores,
        det_probs=det,
        prob_tensor=tensor,
        predicted=predicted,
        provenance=provenance,
    )


def scores_from_arrays(
    prob_tensor: ProbTensor | None,
    det_probs: np.ndarray,
    metric_ids=None,
    train_acts=None,
    test_acts=None,
    train_pred=None,
    test_pred=None,
    kde_cfg: KdeConfig | None = None,
) -> dict[str, ScoreVector]:
    """Compute metrics from previously exported model outputs.

    This is the `--from-files` path: the metric math runs here even when
    the predictions came from an external framework model.  Only metrics
    whose inputs are present are computed (activations and predictions
    unlock LSA/DSA).
    """
    have_acts = train_acts is not None and test_acts is not None
    have_preds = train_pred is not None and test_pred is not None
    if metric_ids is None:
        metric_ids = ["MaxP"]
        if prob_tensor is not None:
            metric_ids += list(MC_METRICS)
        if have_acts:
            metric_ids.append("LSA")
        if have_acts and have_preds:
            metric_ids.append("DSA")
    out: dict[str, ScoreVector] = {}
    for m in metric_ids:
        if m == "MaxP":
            out["MaxP"] = max_p(det_probs)
        elif m in MC_METRICS:
            if prob_tensor is None:
                raise ValueError(f"{m} needs the probability tensor")
            if m == "Var":
                out["Var"] = var_score(prob_tensor)
            elif m == "VarW":
                out["VarW"] = var_weighted(prob_tensor, det_probs)
            else:
                out["KL"] = kl_score(prob_tensor)
        elif m == "LSA":
            if not have_acts:
                raise ValueError("LSA needs train and test activations")
            out["LSA"] = lsa(train_acts, test_acts, kde_cfg or KdeConfig())
        elif m == "DSA":
            if not (have_acts and have_preds):
                raise ValueError("DSA needs activations and predicted classes")
            out["DSA"] = dsa(train_acts, train_pred, test_acts, test_pred)
        else:
            raise ValueError(f"unknown metric {m!r}")
    return out
