"""Uncertainty-driven test selection for classifiers.

Scores unlabeled inputs with Monte-Carlo-dropout uncertainty and
surprise-adequacy metrics, measures how well each score predicts
misclassification, and simulates budgeted retraining guided by the
scores.
"""

from .adversarial import AttackTrace, MixedSet, build_mixed_set, fgsm_attack, trace_metric_trends
from .datasets import BlobSpec, desk_spec, export_idx_like, import_idx_like, make_blobs
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
    TrainConfig,
    activations,
    all_hidden_activations,
    input_gradient,
    input_gradients,
    load_model,
    mc_predict_proba,
    predict,
    predict_proba,
    save_model,
    train,
)
from .scoring import compute_scores, scores_from_arrays
from .selection import RetrainConfig, SelectionPolicy, rank_inputs, retrain_loop
from .stats import (
    CorrelationReport,
    DecileCurve,
    correlation_report,
    decile_curve,
    distance_correlation,
    kendall_tau_b,
    pearson,
)
from .tensormath import child_seed, make_rng, seeded_shuffle, softmax

__version__ = "0.1.0"
