"""Native feed-forward classifier with dropout.

Supports plain SGD-with-momentum training (keeping the best held-out
snapshot), deterministic inference, Monte-Carlo-dropout inference that
yields one prediction-probability matrix per stochastic pass ("mutant"),
hidden-activation extraction, and input gradients for gradient-sign
attacks.

Weights are float32; every source of randomness is a child of the
config seed, so training and MC inference are bit-reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensormath import (
    DTYPE,
    as_matrix,
    child_rng,
    make_rng,
    require_finite,
    softmax,
)

CHECKPOINT_MAGIC = b"DSELMLP1"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class Dataset:
    """Feature matrix plus integer class labels for one split."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split_tag: str = "train"

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError("labels must be 1-D and match the feature rows")
        if len(self.features) < 1:
            raise ValueError("dataset must contain at least one row")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("label index out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, split_tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.n_classes,
            split_tag or self.split_tag,
        )


@dataclass
class ProbTensor:
    """k x n x C stack of per-mutant prediction-probability matrices."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if self.data.ndim != 3:
            raise ValueError(f"expected k x n x C tensor, got {self.data.shape}")
        require_finite(self.data, "prob tensor")

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def n_classes(self) -> int:
        return self.data.shape[2]

    def validate_simplex(self, tol: float = 1e-5) -> None:
        if np.any(self.data < 0):
            raise ValueError("negative probability in tensor")
        sums = self.data.sum(axis=2, dtype=np.float64)
        if np.max(np.abs(sums - 1.0)) > tol:
            raise ValueError("mutant probability row does not sum to 1")


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.momentum < 1):
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.holdout_fraction < 0.5):
            raise ValueError("holdout_fraction must be in (0, 0.5)")


@dataclass
class MLPModel:
    """Fully-connected ReLU network; immutable after training."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float
    hidden_activation: str = "relu"
    label_names: list[str] | None = None
    seed_lineage: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        if not (0 <= self.dropout_rate < 1):
            raise ValueError("dropout rate must be in [0, 1)")
        if self.layer_sizes[-1] < 2:
            raise ValueError("output layer width must be >= 2")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported activation {self.hidden_activation!r}")
        expected = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ValueError(f"weight shapes {got} do not chain {expected}")

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def copy_weights(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]


@dataclass
class TrainHistory:
    val_accuracy: list[float]
    train_loss: list[float]
    best_epoch: int
    best_val_accuracy: float


def init_model(
    input_dim: int,
    hidden_sizes: tuple[int, ...] | list[int],
    n_classes: int,
    dropout_rate: float,
    seed: int,
    label_names: list[str] | None = None,
) -> MLPModel:
    """He-initialized network; biases start at zero."""
    sizes = [input_dim, *hidden_sizes, n_classes]
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(DTYPE))
        biases.append(np.zeros(fan_out, dtype=DTYPE))
    return MLPModel(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        dropout_rate=dropout_rate,
        label_names=label_names,
        seed_lineage={"init": seed},
    )


def _forward(
    model: MLPModel,
    X: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    keep_intermediate: bool = False,
):
    """Forward pass.  With `dropout_rng`, fresh inverted-dropout masks are
    drawn per hidden layer (keep prob 1-r, survivors scaled by 1/(1-r));
    the output layer is never dropped."""
    r = model.dropout_rate
    a = X
    hidden_acts, pre_acts, masks = [], [], []
    for li in range(model.n_hidden):
        z = a @ model.weights[li] + model.biases[li]
        h = np.maximum(z, 0.0)
        if dropout_rng is not None and r > 0:
            keep = 1.0 - r
            mask = (dropout_rng.random(h.shape) < keep).astype(DTYPE) / DTYPE(keep)
            h = h * mask
        else:
            mask = None
        if keep_intermediate:
            pre_acts.append(z)
            masks.append(mask)
        hidden_acts.append(h)
        a = h
    logits = a @ model.weights[-1] + model.biases[-1]
    if keep_intermediate:
        return hidden_acts, pre_acts, masks, logits
    return hidden_acts, logits


def predict_proba(model: MLPModel, X) -> np.ndarray:
    """Deterministic n x C probability matrix (dropout disabled)."""
    X = as_matrix(X, "X")
    if X.shape[1] != model.input_dim:
        raise ValueError(
            f"input dim {X.shape[1]} does not match model dim {model.input_dim}"
        )
    _, logits = _forward(model, X)
    return softmax(logits, axis=1)


def predict(model: MLPModel, X) -> np.ndarray:
    return np.argmax(predict_proba(model, X), axis=1)


def mc_predict_proba(model: MLPModel, X, k: int, seed: int, threads: int = 1) -> ProbTensor:
    """k stochastic passes with dropout enabled.

    Pass j draws its masks from a child seed (seed, j), so passes are
    order-independent, parallelizable, and the tensor is reproducible
    for a fixed seed regardless of the thread count.
    """
    from .parallel import parallel_map

    X = as_matrix(X, "X")
    if k < 2:
        raise ValueError("k must be >= 2")
    if model.dropout_rate <= 0:
        raise ValueError("dropout rate is 0: mutants would be identical")
    if X.shape[1] != model.input_dim:
        raise ValueError("input dim mismatch")
    out = np.empty((k, X.shape[0], model.n_classes), dtype=DTYPE)

    def one_pass(j: int) -> None:
        rng = child_rng(seed, "mc-pass", j)
        _, logits = _forward(model, X, dropout_rng=rng)
        out[j] = softmax(logits, axis=1)

    parallel_map(one_pass, k, threads)
    return ProbTensor(out)


def activations(model: MLPModel, X, layer: int | str = "deepest") -> np.ndarray:
    """Post-ReLU activations of one hidden layer, dropout disabled."""
    X = as_matrix(X, "X")
    if layer == "deepest":
        layer = model.n_hidden - 1
    if not (0 <= layer < model.n_hidden):
        raise ValueError(f"hidden layer index {layer} out of range")
    hidden, _ = _forward(model, X)
    return hidden[layer]


def all_hidden_activations(model: MLPModel, X) -> np.ndarray:
    """Concatenation of all hidden-layer activations (the 'all neurons' view)."""
    X = as_matrix(X, "X")
    hidden, _ = _forward(model, X)
    return np.concatenate(hidden, axis=1)


def input_gradients(model: MLPModel, X, labels) -> np.ndarray:
    """Gradient of the per-row cross-entropy loss w.r.t. each input row.

    Dropout is disabled; this is the quantity FGSM takes the sign of.
    """
    X = as_matrix(X, "X")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or len(labels) != len(X):
        raise ValueError("labels must be 1-D and match rows of X")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise ValueError("label index out of range")
    hidden, pre, _, logits = _forward(model, X, keep_intermediate=True)
    probs = softmax(logits, axis=1)
    delta = probs.copy()
    delta[np.arange(len(X)), labels] -= 1.0
    da = delta @ model.weights[-1].T
    for li in range(model.n_hidden - 1, -1, -1):
        dz = da * (pre[li] > 0)
        da = dz @ model.weights[li].T
    return da


def input_gradient(model: MLPModel, x, label: int) -> np.ndarray:
    """Single-input convenience wrapper around `input_gradients`."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1:
        raise ValueError("x must be a vector")
    return input_gradients(model, x[None, :], [label])[0]


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.mean(np.log(np.maximum(p, 1e-12))))


def accuracy(model: MLPModel, data: Dataset) -> float:
    return float(np.mean(predict(model, data.features) == data.labels))


def _stratified_holdout(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Boolean mask of held-out rows, ~fraction per class, at least 1 each."""
    mask = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_hold = max(1, int(round(len(idx) * fraction)))
        mask[idx[:n_hold]] = True
    return mask


@dataclass
class TrainResult:
    model: MLPModel
    history: TrainHistory


def train(
    dataset: Dataset,
    hidden_sizes: tuple[int, ...] | list[int],
    dropout_rate: float,
    cfg: TrainConfig,
    init_from: MLPModel | None = None,
) -> TrainResult:
    """SGD-with-momentum training with dropout on the hidden layers.

    Holds out `cfg.holdout_fraction` of the rows (stratified) and returns
    the parameter snapshot with the best held-out accuracy.  Everything
    is derived from `cfg.seed`, so two runs with the same seed produce
    bit-identical weights.  `init_from` warm-starts from an existing
    model's weights instead of a fresh initialization.
    """
    n_classes = dataset.n_classes
    rng_hold = child_rng(cfg.seed, "holdout")
    hold_mask = _stratified_holdout(dataset.labels, cfg.holdout_fraction, rng_hold)
    fit = dataset.subset(~hold_mask)
    val = dataset.subset(hold_mask, "val")

    model = init_model(
        dataset.dim,
        hidden_sizes,
        n_classes,
        dropout_rate,
        seed=cfg.seed,
        label_names=None,
    )
    if init_from is not None:
        if init_from.layer_sizes != model.layer_sizes:
            raise ValueError("warm-start model has a different architecture")
        model.weights, model.biases = init_from.copy_weights()
    model.seed_lineage = {"master": cfg.seed, "init": cfg.seed}
    rng_shuffle = child_rng(cfg.seed, "batch-shuffle")
    rng_drop = child_rng(cfg.seed, "dropout")

    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    lr = DTYPE(cfg.learning_rate)
    mom = DTYPE(cfg.momentum)

    best_acc = -1.0
    best_epoch = -1
    best_weights = model.copy_weights()
    val_curve: list[float] = []
    loss_curve: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(fit.n)
        epoch_loss = 0.0
        for start in range(0, fit.n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = fit.features[idx], fit.labels[idx]
            hidden, pre, masks, logits = _forward(
                model, xb, dropout_rng=rng_drop, keep_intermediate=True
            )
            probs = softmax(logits, axis=1)
            epoch_loss += cross_entropy(probs, yb) * len(idx)

            delta = (probs - np.eye(n_classes, dtype=DTYPE)[yb]) / DTYPE(len(idx))
            grads_w = [None] * len(model.weights)
            grads_b = [None] * len(model.biases)
            a_prev = hidden[-1] if model.n_hidden else xb
            grads_w[-1] = a_prev.T @ delta
            grads_b[-1] = delta.sum(axis=0)
            da = delta @ model.weights[-1].T
            for li in range(model.n_hidden - 1, -1, -1):
                if masks[li] is not None:
                    da = da * masks[li]
                dz = da * (pre[li] > 0)
                a_prev = hidden[li - 1] if li > 0 else xb
                grads_w[li] = a_prev.T @ dz
                grads_b[li] = dz.sum(axis=0)
                da = dz @ model.weights[li].T

            for li in range(len(model.weights)):
                velocity_w[li] = mom * velocity_w[li] - lr * grads_w[li]
                velocity_b[li] = mom * velocity_b[li] - lr * grads_b[li]
                model.weights[li] += velocity_w[li]
                model.biases[li] += velocity_b[li]

        epoch_loss /= fit.n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"loss diverged at epoch {epoch}")
        loss_curve.append(epoch_loss)

        val_acc = accuracy(model, val)
        val_curve.append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_weights = model.copy_weights()

    model.weights, model.biases = best_weights
    history = TrainHistory(
        val_accuracy=val_curve,
        train_loss=loss_curve,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
    )
    return TrainResult(model=model, history=history)


# --- checkpoint persistence --------------------------------------------

def save_model(model: MLPModel, path) -> None:
    """Versioned checkpoint: magic, JSON header, little-endian float32 blob."""
    header = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": model.layer_sizes,
        "dropout_rate": model.dropout_rate,
        "hidden_activation": model.hidden_activation,
        "label_names": model.label_names,
        "seed_lineage": model.seed_lineage,
    }
    blob = b"".join(
        arr.astype("<f4").tobytes()
        for pair in zip(model.weights, model.biases)
        for arr in pair
    )
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(blob)


def load_model(path) -> MLPModel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (head_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        sizes = header["layer_sizes"]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(fh.read(fan_in * fan_out * 4), dtype="<f4")
            weights.append(w.reshape(fan_in, fan_out).astype(DTYPE))
            b = np.frombuffer(fh.read(fan_out * 4), dtype="<f4")
            biases.append(b.astype(DTYPE))
        trailing = fh.read(1)
        if trailing:
            raise ValueError("checkpoint has trailing bytes")
    return MLPModel(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        dropout_rate=header["dropout_rate"],
        hidden_activation=header["hidden_activation"],
        label_names=header["label_names"],
        seed_lineage=header.get("seed_lineage", {}),
    )
