"""Linear classification head: optional inverted dropout, an affine layer,
and a multiclass hinge (or softmax) loss, trained with minibatch SGD under
L2 regularization and exponential learning-rate decay.

All training arithmetic runs in float64; stored features are float32 and
are widened on entry.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DivergedError, FormatError, ValidationError
from .stacking import StackSpec
from .store import atomic_write_bytes, atomic_write_text

MODEL_MAGIC = b"SNNMDL1"
DEFAULT_MARGIN = 1.0
LOSS_KINDS = ("svm", "softmax")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    ``epochs`` may be 0, meaning "return the initial parameters untouched";
    actual classifier training requires at least 1.
    """

    lr0: float
    reg: float
    epochs: int
    decay: float = 0.98
    batch_size: int = 128
    dropout_p: float = 0.5
    dropout_enabled: bool = False
    loss_kind: str = "svm"
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValidationError("lr0 must be > 0")
        if self.reg < 0:
            raise ValidationError("reg must be >= 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not 0 < self.decay <= 1:
            raise ValidationError("decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValidationError("dropout_p must be in [0, 1)")
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}")

    def to_json_dict(self) -> dict:
        return {
            "lr0": self.lr0,
            "reg": self.reg,
            "epochs": self.epochs,
            "decay": self.decay,
            "batch_size": self.batch_size,
            "dropout_p": self.dropout_p,
            "dropout_enabled": self.dropout_enabled,
            "loss_kind": self.loss_kind,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass(frozen=True)
class EpochStats:
    train_loss: float
    val_accuracy: float
    lr: float


@dataclass
class SplitData:
    """Train/val arrays ready for classifier training (float64)."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.X_train = np.asarray(self.X_train, dtype=np.float64)
        self.X_val = np.asarray(self.X_val, dtype=np.float64)
        self.y_train = np.asarray(self.y_train, dtype=np.int64)
        self.y_val = np.asarray(self.y_val, dtype=np.int64)
        if len(self.X_train) == 0 or len(self.X_val) == 0:
            raise ValidationError("train and val must be nonempty")
        if len(self.X_train) != len(self.y_train) or len(self.X_val) != len(self.y_val):
            raise ValidationError("features and labels disagree on sample count")
        if self.X_train.shape[1] != self.X_val.shape[1]:
            raise ValidationError("train and val feature dimensions differ")
        for y in (self.y_train, self.y_val):
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValidationError("label out of range")

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]


@dataclass
class TrainedModel:
    """Affine parameters plus the metadata needed to reuse them."""

    W: np.ndarray  # (C, D) float64
    b: np.ndarray  # (C,) float64
    stack_spec: StackSpec | None
    normalized: bool
    config: TrainConfig
    history: list[EpochStats]
    best_epoch: int
    best_val_accuracy: float

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


def affine_scores(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compute scores[i, j] = W[j] . X[i] + b[j].

    Inputs:
    - X: (n, D) samples
    - W: (C, D) per-class weights
    - b: (C,) per-class biases
    """
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValidationError(
            f"shape mismatch: X {X.shape}, W {W.shape}, b {b.shape}"
        )
    return X @ W.T + b


def svm_loss_grad(scores, y, margin: float = DEFAULT_MARGIN):
    """Multiclass hinge loss and its exact gradient w.r.t. the scores.

    loss = (1/n) * sum_i sum_{j != y_i} max(0, s_ij - s_iy_i + margin)

    Inputs:
    - scores: (n, C) where scores[i, j] is class j's score for sample i
    - y: (n,) integer labels, 0 <= y[i] < C
    Returns (loss, dscores).
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = scores.shape[0]
    rows = np.arange(n)
    correct = scores[rows, y]
    margins = np.maximum(0.0, scores - correct[:, None] + margin)
    margins[rows, y] = 0.0
    loss = margins.sum() / n
    dscores = (margins > 0).astype(np.float64)
    dscores[rows, y] = -dscores.sum(axis=1)
    dscores /= n
    return loss, dscores


def softmax_loss_grad(scores, y):
    """Mean cross-entropy with shift-stabilized softmax, plus exact gradient.

    Inputs:
    - scores: (n, C)
    - y: (n,) integer labels, 0 <= y[i] < C
    Returns (loss, dscores).
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = scores.shape[0]
    rows = np.arange(n)
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[rows, y].mean()
    dscores = np.exp(log_probs)
    dscores[rows, y] -= 1.0
    dscores /= n
    return loss, dscores


def softmax_probs(scores) -> np.ndarray:
    """Row-wise softmax probabilities (shift-stabilized)."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout_apply(X, p: float, mode: str, rng: np.random.Generator):
    """Inverted dropout: train-time masking with 1/(1-p) rescale, test-time identity.

    Returns (Y, mask) where Y = X * mask. In train mode each mask entry is
    0 with probability p, else 1/(1-p); in test mode the mask is all ones.
    """
    if not 0 <= p < 1:
        raise ValidationError("dropout p must be in [0, 1)")
    X = np.asarray(X, dtype=np.float64)
    if mode == "test":
        return X, np.ones_like(X)
    if mode != "train":
        raise ValidationError(f"unknown dropout mode '{mode}'")
    mask = (rng.random(X.shape) >= p) / (1.0 - p)
    return X * mask, mask


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels length mismatch")
    return float(np.mean(predictions == labels))


def train_linear(
    data: SplitData,
    config: TrainConfig,
    stack_spec: StackSpec | None = None,
    normalized: bool = True,
) -> TrainedModel:
    """Train the affine head with minibatch SGD.

    Per-epoch learning rate is lr0 * decay**epoch; the objective is the
    data loss plus 0.5 * reg * ||W||^2 (bias unregularized). The returned
    parameters are those of the epoch with the best validation accuracy
    (earliest on ties). Fully deterministic given ``config.seed``.

    The inner loop inlines the loss math with in-place updates for speed;
    it is pinned against the reference svm/softmax loss functions in the
    test suite.
    """
    if config.epochs < 1:
        raise ValidationError("training requires epochs >= 1")
    rng = np.random.default_rng(config.seed)
    X = np.ascontiguousarray(data.X_train)
    y = data.y_train
    X_val, y_val = data.X_val, data.y_val
    n, dim = X.shape
    C = data.num_classes
    W = np.zeros((C, dim))
    b = np.zeros(C)
    best_W, best_b = W.copy(), b.copy()
    best_acc, best_epoch = -1.0, -1
    history: list[EpochStats] = []

    bs = config.batch_size
    reg = config.reg
    use_svm = config.loss_kind == "svm"
    full_rows = np.arange(min(bs, n))
    keep_scale = 1.0 / (1.0 - config.dropout_p)

    for epoch in range(config.epochs):
        lr = config.lr0 * config.decay**epoch
        order = rng.permutation(n)
        loss_sum = 0.0
        batches = 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            Xb = X[idx]
            yb = y[idx]
            if config.dropout_enabled:
                Xb *= (rng.random(Xb.shape) >= config.dropout_p) * keep_scale
            nb = idx.size
            rows = full_rows if nb == full_rows.size else np.arange(nb)
            scores = Xb @ W.T
            scores += b
            if use_svm:
                correct = scores[rows, yb]
                scores -= correct[:, None]
                scores += DEFAULT_MARGIN
                np.maximum(scores, 0.0, out=scores)
                scores[rows, yb] = 0.0
                data_loss = scores.sum() / nb
                dscores = (scores > 0).astype(np.float64)
                dscores[rows, yb] = -dscores.sum(axis=1)
            else:
                scores -= scores.max(axis=1, keepdims=True)
                e = np.exp(scores)
                zsum = e.sum(axis=1, keepdims=True)
                data_loss = float(np.mean(np.log(zsum[:, 0]) - scores[rows, yb]))
                dscores = e
                dscores /= zsum
                dscores[rows, yb] -= 1.0
            loss = data_loss + 0.5 * reg * float(np.vdot(W, W))
            if not np.isfinite(loss):
                raise DivergedError(epoch)
            if reg:
                W *= 1.0 - lr * reg
            scale = lr / nb
            W -= scale * (dscores.T @ Xb)
            b -= scale * dscores.sum(axis=0)
            loss_sum += loss
            batches += 1
        val_scores = X_val @ W.T
        val_scores += b
        val_acc = float(np.mean(np.argmax(val_scores, axis=1) == y_val))
        history.append(
            EpochStats(train_loss=loss_sum / batches, val_accuracy=val_acc, lr=lr)
        )
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_W, best_b = W.copy(), b.copy()

    return TrainedModel(
        W=best_W,
        b=best_b,
        stack_spec=stack_spec,
        normalized=normalized,
        config=config,
        history=history,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
    )


def predict(model: TrainedModel, X):
    """Scores and argmax labels for ``X``; ties break to the lowest class index."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValidationError(
            f"feature dimension mismatch: got {X.shape}, model expects (*, {model.dim})"
        )
    scores = X @ model.W.T + model.b
    return scores, np.argmax(scores, axis=1)


def grad_check(f, theta: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(theta)`` must return (loss, grad). Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    if not eps > 0:
        raise ValidationError("eps must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    _, analytic = f(theta)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    it = np.nditer(theta, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        bumped = theta.copy()
        bumped[ix] = theta[ix] + eps
        plus, _ = f(bumped)
        bumped[ix] = theta[ix] - eps
        minus, _ = f(bumped)
        numeric = (plus - minus) / (2.0 * eps)
        a = float(analytic[ix])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
        it.iternext()
    return worst


def _model_blob(model: TrainedModel) -> bytes:
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<II", model.num_classes, model.dim)
    blob += np.ascontiguousarray(model.W, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(model.b, dtype="<f8").tobytes()
    return bytes(blob)


def save_model(model: TrainedModel, path) -> None:
    """Write the parameter blob at ``path`` and a JSON sidecar at ``path + '.json'``."""
    atomic_write_bytes(path, _model_blob(model))
    sidecar = {
        "config": model.config.to_json_dict(),
        "stack_spec": model.stack_spec.to_json_dict() if model.stack_spec else None,
        "normalized": model.normalized,
        "best_epoch": model.best_epoch,
        "best_val_accuracy": model.best_val_accuracy,
        "history": [
            {"train_loss": h.train_loss, "val_accuracy": h.val_accuracy, "lr": h.lr}
            for h in model.history
        ],
    }
    atomic_write_text(str(path) + ".json", json.dumps(sidecar, indent=2) + "\n")


def load_model(path) -> TrainedModel:
    """Read a model blob plus sidecar back into a :class:`TrainedModel`."""
    buf = Path(path).read_bytes()
    if len(buf) < len(MODEL_MAGIC) or buf[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError(f"not a model file: {path}")
    off = len(MODEL_MAGIC)
    if len(buf) < off + 8:
        raise FormatError(f"corrupt model file (truncated): {path}")
    C, dim = struct.unpack_from("<II", buf, off)
    off += 8
    expected = C * dim * 8 + C * 8
    if len(buf) != off + expected:
        raise FormatError(f"corrupt model file (truncated): {path}")
    W = np.frombuffer(buf, dtype="<f8", count=C * dim, offset=off).reshape(C, dim).copy()
    off += C * dim * 8
    b = np.frombuffer(buf, dtype="<f8", count=C, offset=off).copy()
    if not (np.isfinite(W).all() and np.isfinite(b).all()):
        raise FormatError(f"corrupt model file (non-finite parameters): {path}")
    sidecar_path = Path(str(path) + ".json")
    sidecar = json.loads(sidecar_path.read_text())
    spec = sidecar.get("stack_spec")
    return TrainedModel(
        W=W,
        b=b,
        stack_spec=StackSpec.from_json_dict(spec) if spec else None,
        normalized=bool(sidecar["normalized"]),
        config=TrainConfig.from_json_dict(sidecar["config"]),
        history=[EpochStats(**h) for h in sidecar["history"]],
        best_epoch=int(sidecar["best_epoch"]),
        best_val_accuracy=float(sidecar["best_val_accuracy"]),
    )
