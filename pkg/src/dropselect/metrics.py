"""The six selection scores over probability tensors and activations.

Four uncertainty scores read the model's own predictions (maximum
probability, dropout variance, weighted variance, KL of mutant votes to
uniform); two surprise scores compare a new input's activations against
the training set's (Gaussian KDE likelihood, nearest-neighbor distance
ratio).

Each score carries an orientation: for MaxP and KL a LOWER value means
more uncertainty, for the other four a HIGHER value does.  All sorting
elsewhere goes through that orientation, never through the raw sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ProbTensor
from .tensormath import as_matrix

LOW_IS_UNCERTAIN = "low-is-uncertain"
HIGH_IS_UNCERTAIN = "high-is-uncertain"

ORIENTATION = {
    "MaxP": LOW_IS_UNCERTAIN,
    "KL": LOW_IS_UNCERTAIN,
    "Var": HIGH_IS_UNCERTAIN,
    "VarW": HIGH_IS_UNCERTAIN,
    "LSA": HIGH_IS_UNCERTAIN,
    "DSA": HIGH_IS_UNCERTAIN,
}

METRIC_IDS = tuple(ORIENTATION)


class AllDimensionsFilteredError(ValueError):
    """Every activation dimension fell below the variance floor."""


@dataclass
class ScoreVector:
    """Per-input scores for one metric, with orientation and provenance."""

    metric_id: str
    values: np.ndarray
    aux: dict = field(default_factory=dict)
    invalid: list = field(default_factory=list)  # (index, reason) pairs

    def __post_init__(self):
        if self.metric_id not in ORIENTATION:
            raise ValueError(f"unknown metric id {self.metric_id!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("scores must be 1-D")
        finite = np.isfinite(self.values)
        bad = set(i for i, _ in self.invalid)
        if not all(finite[i] or i in bad for i in range(len(self.values))):
            raise ValueError("non-finite score without an invalid marker")

    @property
    def orientation(self) -> str:
        return ORIENTATION[self.metric_id]

    @property
    def n(self) -> int:
        return len(self.values)

    def uncertainty_key(self) -> np.ndarray:
        """Values transformed so that ASCENDING order = most uncertain first."""
        if self.orientation == LOW_IS_UNCERTAIN:
            return self.values
        return -self.values


@dataclass
class KdeConfig:
    """Gaussian-KDE settings for the likelihood surprise score."""

    bandwidth_rule: str = "scott"
    bandwidth_value: float | None = None  # used when rule == "fixed"
    variance_floor: float = 1e-5
    density_floor: float = 1e-300

    def __post_init__(self):
        if self.bandwidth_rule not in ("scott", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed" and not (
            self.bandwidth_value and self.bandwidth_value > 0
        ):
            raise ValueError("fixed bandwidth requires a positive bandwidth_value")
        if self.variance_floor < 0:
            raise ValueError("variance_floor must be >= 0")


def max_p(probs) -> ScoreVector:
    """Highest class probability per row of a deterministic n x C matrix."""
    probs = as_matrix(probs, "probs")
    return ScoreVector("MaxP", probs.max(axis=1).astype(np.float64))


def var_score(tensor: ProbTensor) -> ScoreVector:
    """Mean over classes of the population variance across the k mutants."""
    if tensor.k < 2:
        raise ValueError("variance needs k >= 2 mutants")
    per_class_var = tensor.data.astype(np.float64).var(axis=0, ddof=0)
    return ScoreVector("Var", per_class_var.mean(axis=1))


def var_weighted(tensor: ProbTensor, det_probs) -> ScoreVector:
    """Variance score divided by the deterministic maximum probability.

    The divisor is >= 1/C, so no division by zero is possible.
    """
    det_probs = as_matrix(det_probs, "det_probs")
    if det_probs.shape[0] != tensor.n or det_probs.shape[1] != tensor.n_classes:
        raise ValueError("det_probs shape does not match the tensor")
    base = var_score(tensor).values
    return ScoreVector("VarW", base / det_probs.max(axis=1).astype(np.float64))


def kl_score(tensor: ProbTensor) -> ScoreVector:
    """KL divergence of the mutants' argmax-vote histogram to uniform.

    Unanimous votes give the maximum ln(C); an even split gives 0.
    Empty histogram bins contribute nothing (0 * ln 0 := 0).
    """
    if tensor.k < 1:
        raise ValueError("need at least one mutant")
    k, n, c = tensor.k, tensor.n, tensor.n_classes
    votes = tensor.data.argmax(axis=2)  # k x n
    hist = np.zeros((n, c), dtype=np.float64)
    for j in range(k):
        hist[np.arange(n), votes[j]] += 1.0
    hist /= k
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(hist > 0, hist * np.log(hist * c), 0.0)
    return ScoreVector("KL", terms.sum(axis=1))


def _scott_bandwidths(train_acts: np.ndarray) -> np.ndarray:
    """Per-dimension Scott bandwidths: sample std * n^(-1/(d+4))."""
    n, d = train_acts.shape
    sigma = train_acts.std(axis=0, ddof=1)
    return sigma * n ** (-1.0 / (d + 4))


def lsa(train_acts, test_acts, cfg: KdeConfig | None = None) -> ScoreVector:
    """Likelihood surprise: negative log KDE density of test activations.

    The density of a test point is the mean, over training points, of a
    diagonal Gaussian kernel on the variance-filtered dimensions.  The
    reported score is -log(density + floor) so that a higher score means
    a more surprising (more uncertain) input; the raw densities are kept
    in `aux` for auditing.
    """
    cfg = cfg or KdeConfig()
    train_acts = as_matrix(train_acts, "train_acts").astype(np.float64)
    test_acts = as_matrix(test_acts, "test_acts").astype(np.float64)
    if train_acts.shape[0] < 2:
        raise ValueError("need at least 2 training rows for a KDE")
    if train_acts.shape[1] != test_acts.shape[1]:
        raise ValueError("train/test activation widths differ")

    variances = train_acts.var(axis=0, ddof=0)
    floor = max(cfg.variance_floor, np.finfo(np.float64).tiny)
    retained = np.flatnonzero(variances >= floor)
    if len(retained) == 0:
        raise AllDimensionsFilteredError(
            "no activation dimension survives the variance floor"
        )
    tr = train_acts[:, retained]
    te = test_acts[:, retained]

    if cfg.bandwidth_rule == "fixed":
        h = np.full(len(retained), float(cfg.bandwidth_value))
    else:
        h = _scott_bandwidths(tr)

    # Exponent = -||(x - x_i) / (sqrt(2) h)||^2: rescale once, then use the
    # squared-distance expansion so each block is a single matmul.
    log_norm = -np.sum(np.log(h * np.sqrt(2.0 * np.pi)))
    log_n = np.log(len(tr))
    scale = 1.0 / (np.sqrt(2.0) * h)
    trs = tr * scale
    tes = te * scale
    tr_sq = (trs * trs).sum(axis=1)
    log_dens = np.empty(len(te), dtype=np.float64)
    block = max(1, int(4e6) // max(1, len(tr)))
    for start in range(0, len(te), block):
        chunk = tes[start : start + block]
        d2 = (chunk * chunk).sum(axis=1)[:, None] + tr_sq[None, :] - 2.0 * (chunk @ trs.T)
        np.maximum(d2, 0.0, out=d2)
        m = -d2.min(axis=1)
        log_dens[start : start + block] = (
            m + np.log(np.exp(-d2 - m[:, None]).sum(axis=1)) + log_norm - log_n
        )
    density = np.exp(log_dens)
    scores = -np.logaddexp(log_dens, np.log(cfg.density_floor))
    return ScoreVector(
        "LSA",
        scores,
        aux={
            "density": density,
            "log_density": log_dens,
            "retained_dims": retained,
            "bandwidth": h,
        },
    )


def dsa(train_acts, train_pred, test_acts, test_pred) -> ScoreVector:
    """Distance surprise: ratio of nearest same-class to nearest
    other-class training activation distance (classes are the model's
    predictions, not ground truth).

    Argmin ties break toward the lowest training index.  Inputs whose
    predicted class has no same-class or no other-class training point
    are marked invalid (NaN score) instead of failing the whole batch.
    """
    train_acts = as_matrix(train_acts, "train_acts").astype(np.float64)
    test_acts = as_matrix(test_acts, "test_acts").astype(np.float64)
    train_pred = np.asarray(train_pred, dtype=np.int64)
    test_pred = np.asarray(test_pred, dtype=np.int64)
    if len(train_pred) != len(train_acts) or len(test_pred) != len(test_acts):
        raise ValueError("predictions must match activation rows")
    if train_acts.shape[1] != test_acts.shape[1]:
        raise ValueError("train/test activation widths differ")

    train_sq = (train_acts * train_acts).sum(axis=1)
    values = np.empty(len(test_acts), dtype=np.float64)
    invalid: list = []
    classes = np.unique(train_pred)
    class_masks = {int(c): train_pred == c for c in classes}
    single_class = len(classes) == 1

    block = max(1, int(2e7) // max(1, len(train_acts)))
    for start in range(0, len(test_acts), block):
        te = test_acts[start : start + block]
        te_sq = (te * te).sum(axis=1)
        d2 = te_sq[:, None] + train_sq[None, :] - 2.0 * (te @ train_acts.T)
        np.maximum(d2, 0.0, out=d2)
        # per-class minimum squared distance for every row of the block
        dmin = np.stack([d2[:, class_masks[int(c)]].min(axis=1) for c in classes], axis=1)
        for i in range(len(te)):
            gi = start + i
            c = int(test_pred[gi])
            if c not in class_masks:
                values[gi] = np.nan
                invalid.append((gi, f"no training point predicted as class {c}"))
                continue
            if single_class:
                values[gi] = np.nan
                invalid.append((gi, "no training point of any other class"))
                continue
            ci = int(np.searchsorted(classes, c))
            a = np.sqrt(dmin[i, ci])
            b = np.sqrt(min(dmin[i, j] for j in range(len(classes)) if j != ci))
            if b > 0:
                values[gi] = a / b
            else:
                values[gi] = np.nan
                invalid.append((gi, "zero distance to an other-class point"))
    return ScoreVector("DSA", values, invalid=invalid)
