"""Joint multi-task training: a shared MLP trunk with one affine head per
task, trained on mixed minibatches with summed softmax losses, plus
frozen-trunk transfer evaluation.

The trunk is a stack of affine + rectifier layers; with zero hidden layers
it is the identity. Heads are per-task affine layers over the trunk
output. Gradients flow into the trunk from every head.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .classifier import (
    EpochStats,
    SplitData,
    TrainConfig,
    accuracy,
    softmax_loss_grad,
)
from .errors import DivergedError, FormatError, ValidationError
from .stacking import StackSpec
from .store import (
    ConceptSuiteSpec,
    DatasetBundle,
    atomic_write_bytes,
    atomic_write_text,
    generate_concept_tasks,
    reference_task_quartet,
)
from .sweep import GridSpec, derive_seed, run_sweep_arrays


@dataclass(frozen=True)
class TrunkConfig:
    """Architecture of the shared trunk: affine + rectifier per hidden layer."""

    input_dim: int
    hidden_sizes: tuple[int, ...] = (128,)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ValidationError("input_dim must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValidationError("hidden sizes must be >= 1")


@dataclass
class Trunk:
    input_dim: int
    weights: list[np.ndarray]  # layer l: (out, in)
    biases: list[np.ndarray]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0] if self.weights else self.input_dim

    def copy(self) -> "Trunk":
        return Trunk(
            input_dim=self.input_dim,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_trunk(config: TrunkConfig) -> Trunk:
    """He-initialized trunk weights, zero biases; deterministic in the seed."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    fan_in = config.input_dim
    for size in config.hidden_sizes:
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(size, fan_in)))
        biases.append(np.zeros(size))
        fan_in = size
    return Trunk(input_dim=config.input_dim, weights=weights, biases=biases)


def trunk_forward(trunk: Trunk, X) -> np.ndarray:
    """Feature vector: affine then rectifier per hidden layer (identity if none)."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != trunk.input_dim:
        raise ValidationError(
            f"input dimension mismatch: got {h.shape}, trunk expects (*, {trunk.input_dim})"
        )
    for W, b in zip(trunk.weights, trunk.biases):
        h = np.maximum(0.0, h @ W.T + b)
    return h


def _forward_cached(trunk: Trunk, X):
    hs = [np.asarray(X, dtype=np.float64)]
    zs = []
    for W, b in zip(trunk.weights, trunk.biases):
        z = hs[-1] @ W.T + b
        zs.append(z)
        hs.append(np.maximum(0.0, z))
    return hs, zs


@dataclass
class Head:
    W: np.ndarray  # (C, H)
    b: np.ndarray  # (C,)


@dataclass
class Task:
    """One classification task's arrays, raw (un-normalized) trunk inputs."""

    task_id: str
    data: SplitData


def task_from_bundle(bundle: DatasetBundle, network: str = "input") -> Task:
    if network not in bundle.features:
        raise ValidationError(f"unknown network '{network}' in bundle '{bundle.dataset_id}'")
    X = bundle.features[network].data.astype(np.float64)
    train, val = bundle.mask("train"), bundle.mask("val")
    return Task(
        task_id=bundle.dataset_id,
        data=SplitData(
            X_train=X[train],
            y_train=bundle.labels[train],
            X_val=X[val],
            y_val=bundle.labels[val],
            num_classes=bundle.num_classes,
        ),
    )


@dataclass
class JointModel:
    trunk: Trunk
    heads: dict[str, Head]
    history: dict[str, list[EpochStats]] = field(default_factory=dict)

    def __post_init__(self):
        out = self.trunk.output_dim
        for tid, head in self.heads.items():
            if head.W.shape[1] != out:
                raise ValidationError(
                    f"head '{tid}' expects trunk dim {head.W.shape[1]}, trunk emits {out}"
                )


def per_task_batch_size(batch_size: int, num_tasks: int) -> int:
    if num_tasks < 1:
        raise ValidationError("need at least one task")
    if batch_size % num_tasks != 0:
        raise ValidationError(
            f"batch size {batch_size} not divisible by task count {num_tasks}"
        )
    return batch_size // num_tasks


def batches_per_epoch(tasks: Sequence[Task], batch_size: int) -> int:
    """One epoch is one pass over the largest task's training set."""
    per = per_task_batch_size(batch_size, len(tasks))
    largest = max(len(t.data.y_train) for t in tasks)
    return math.ceil(largest / per)


def interleave_batches(tasks: Sequence[Task], batch_size: int, rng: np.random.Generator):
    """Endless stream of mixed batches: batch_size/k rows from each task.

    Each task's index stream is its own shuffle, re-shuffled on wraparound,
    so shorter tasks recycle within an epoch of the largest one.
    """
    per = per_task_batch_size(batch_size, len(tasks))
    streams = []
    for task, child in zip(tasks, rng.spawn(len(tasks))):
        n = len(task.data.y_train)

        def make(n=n, child=child):
            while True:
                yield from child.permutation(n)

        streams.append((task.task_id, make()))
    while True:
        yield {
            tid: np.array([next(stream) for _ in range(per)], dtype=np.int64)
            for tid, stream in streams
        }


def joint_loss_and_grads(
    trunk: Trunk,
    heads: Mapping[str, Head],
    xs: Mapping[str, np.ndarray],
    ys: Mapping[str, np.ndarray],
    reg: float,
):
    """Loss and gradients for one mixed batch.

    Total loss is the sum over tasks of that sub-batch's softmax loss
    through its own head, plus 0.5*reg*(trunk weights + head weights).
    Returns (total_loss, per-task data losses, (trunk dWs, trunk dbs),
    per-task head grads).
    """
    order = sorted(xs)
    parts = [np.asarray(xs[tid], dtype=np.float64) for tid in order]
    X = np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]
    hs, zs = _forward_cached(trunk, X)
    feats = hs[-1]

    data_losses: dict[str, float] = {}
    head_grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    dfeat = np.zeros_like(feats)
    offset = 0
    for tid in order:
        head = heads[tid]
        n_t = len(xs[tid])
        sl = slice(offset, offset + n_t)
        offset += n_t
        scores = feats[sl] @ head.W.T + head.b
        loss_t, dscores = softmax_loss_grad(scores, ys[tid])
        data_losses[tid] = float(loss_t)
        head_grads[tid] = (dscores.T @ feats[sl] + reg * head.W, dscores.sum(axis=0))
        dfeat[sl] = dscores @ head.W

    reg_loss = 0.5 * reg * (
        sum(float(np.sum(W * W)) for W in trunk.weights)
        + sum(float(np.sum(h.W * h.W)) for h in heads.values())
    )
    total = sum(data_losses[tid] for tid in order) + reg_loss

    dWs: list[np.ndarray] = [None] * len(trunk.weights)
    dbs: list[np.ndarray] = [None] * len(trunk.weights)
    dh = dfeat
    for l in reversed(range(len(trunk.weights))):
        dz = dh * (zs[l] > 0)
        dWs[l] = dz.T @ hs[l] + reg * trunk.weights[l]
        dbs[l] = dz.sum(axis=0)
        dh = dz @ trunk.weights[l]
    return total, data_losses, (dWs, dbs), head_grads


def joint_train(
    tasks: Sequence[Task],
    train_config: TrainConfig,
    trunk_config: TrunkConfig | None = None,
    trunk_init: Trunk | None = None,
) -> JointModel:
    """Train the shared trunk and per-task heads on mixed minibatches.

    Heads always use the softmax loss. Starts from ``trunk_init`` when
    given (the pre-trained trunk), otherwise from a fresh trunk built from
    ``trunk_config``. With ``epochs == 0`` the initial parameters are
    returned untouched. Deterministic given the seeds.
    """
    if not tasks:
        raise ValidationError("need at least one task")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate task ids")
    if trunk_init is not None:
        trunk = trunk_init.copy()
    elif trunk_config is not None:
        trunk = init_trunk(trunk_config)
    else:
        raise ValidationError("need trunk_config or trunk_init")
    for t in tasks:
        if t.data.dim != trunk.input_dim:
            raise ValidationError(
                f"task '{t.task_id}' input dim {t.data.dim} != trunk input dim {trunk.input_dim}"
            )
    heads = {
        t.task_id: Head(W=np.zeros((t.data.num_classes, trunk.output_dim)), b=np.zeros(t.data.num_classes))
        for t in tasks
    }
    history: dict[str, list[EpochStats]] = {t.task_id: [] for t in tasks}

    rng = np.random.default_rng(train_config.seed)
    stream = interleave_batches(tasks, train_config.batch_size, rng)
    n_batches = batches_per_epoch(tasks, train_config.batch_size)
    by_id = {t.task_id: t for t in tasks}

    for epoch in range(train_config.epochs):
        lr = train_config.lr0 * train_config.decay**epoch
        epoch_losses = {tid: [] for tid in by_id}
        for _ in range(n_batches):
            batch = next(stream)
            xs = {tid: by_id[tid].data.X_train[idx] for tid, idx in batch.items()}
            ys = {tid: by_id[tid].data.y_train[idx] for tid, idx in batch.items()}
            total, data_losses, (dWs, dbs), head_grads = joint_loss_and_grads(
                trunk, heads, xs, ys, train_config.reg
            )
            if not np.isfinite(total):
                raise DivergedError(epoch)
            for l in range(len(trunk.weights)):
                trunk.weights[l] -= lr * dWs[l]
                trunk.biases[l] -= lr * dbs[l]
            for tid, (dW, db) in head_grads.items():
                heads[tid].W -= lr * dW
                heads[tid].b -= lr * db
            for tid, v in data_losses.items():
                epoch_losses[tid].append(v)
        for t in tasks:
            feats = trunk_forward(trunk, t.data.X_val)
            scores = feats @ heads[t.task_id].W.T + heads[t.task_id].b
            val_acc = accuracy(np.argmax(scores, axis=1), t.data.y_val)
            history[t.task_id].append(
                EpochStats(
                    train_loss=float(np.mean(epoch_losses[t.task_id])),
                    val_accuracy=val_acc,
                    lr=lr,
                )
            )
    return JointModel(trunk=trunk, heads=heads, history=history)


def finetune_single(trunk_init: Trunk, task: Task, config: TrainConfig) -> JointModel:
    """Continue training the given trunk on a single task (fresh head)."""
    return joint_train([task], config, trunk_init=trunk_init)


def _l2_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.where(norms < 1e-12, 0.0, X / np.where(norms == 0, 1.0, norms))


def transfer_eval(
    trunk: Trunk,
    task: Task,
    grid: GridSpec,
    parallelism: int = 1,
    base_seed: int = 0,
) -> float:
    """Frozen-trunk transfer accuracy: sweep a linear hinge-loss head over
    the trunk's features for ``task`` and return the winner's val accuracy."""
    feats_train = _l2_rows(trunk_forward(trunk, task.data.X_train))
    feats_val = _l2_rows(trunk_forward(trunk, task.data.X_val))
    data = SplitData(
        X_train=feats_train,
        y_train=task.data.y_train,
        X_val=feats_val,
        y_val=task.data.y_val,
        num_classes=task.data.num_classes,
    )
    result = run_sweep_arrays(
        data,
        grid,
        stack_spec=StackSpec(("trunk",)),
        dataset_id=task.task_id,
        stack_size=1,
        parallelism=parallelism,
        base_seed=base_seed,
        loss_kind="svm",
    )
    return result.winner.val_accuracy


def save_joint_model(model: JointModel, path) -> None:
    """Write trunk + head arrays as an .npz blob and history as a JSON sidecar."""
    arrays = {"input_dim": np.array(model.trunk.input_dim, dtype=np.int64)}
    for i, (W, b) in enumerate(zip(model.trunk.weights, model.trunk.biases)):
        arrays[f"trunk_w{i}"] = W
        arrays[f"trunk_b{i}"] = b
    for tid, head in model.heads.items():
        arrays[f"head_w::{tid}"] = head.W
        arrays[f"head_b::{tid}"] = head.b
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())
    sidecar = {
        "tasks": sorted(model.heads),
        "history": {
            tid: [
                {"train_loss": h.train_loss, "val_accuracy": h.val_accuracy, "lr": h.lr}
                for h in hist
            ]
            for tid, hist in model.history.items()
        },
    }
    atomic_write_text(str(path) + ".json", json.dumps(sidecar, indent=2) + "\n")


def load_joint_model(path) -> JointModel:
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as e:
        raise FormatError(f"not a joint model file: {path}") from e
    if "input_dim" not in arrays:
        raise FormatError(f"corrupt joint model file (missing input_dim): {path}")
    weights, biases = [], []
    i = 0
    while f"trunk_w{i}" in arrays:
        weights.append(arrays[f"trunk_w{i}"])
        biases.append(arrays[f"trunk_b{i}"])
        i += 1
    trunk = Trunk(input_dim=int(arrays["input_dim"]), weights=weights, biases=biases)
    heads = {}
    for key in arrays:
        if key.startswith("head_w::"):
            tid = key[len("head_w::"):]
            heads[tid] = Head(W=arrays[key], b=arrays[f"head_b::{tid}"])
    history = {}
    sidecar_path = Path(str(path) + ".json")
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        history = {
            tid: [EpochStats(**h) for h in hist]
            for tid, hist in sidecar.get("history", {}).items()
        }
    return JointModel(trunk=trunk, heads=heads, history=history)


def load_trunk(path) -> Trunk:
    return load_joint_model(path).trunk


def default_base_train_config() -> TrainConfig:
    """Training recipe for the broad base trunk."""
    return TrainConfig(
        lr0=0.1, reg=1e-3, epochs=60, batch_size=24, loss_kind="softmax"
    )


def default_finetune_config() -> TrainConfig:
    """Finetuning recipe; the stronger L2 term is what makes a specialized
    trunk shed input directions its task never exercises."""
    return TrainConfig(
        lr0=0.1, reg=0.15, epochs=160, batch_size=16, loss_kind="softmax"
    )


def default_transfer_grid() -> GridSpec:
    return GridSpec(
        lrs=(1e-2, 5e-2), regs=(0.01, 0.1, 1.0), epoch_choices=(60,), dropout="off"
    )


@dataclass
class TransferRecipe:
    """Everything needed to run the trunk-specialization transfer experiment.

    A broad base trunk is trained on ``base_task``, finetuned per task and
    jointly on ``joint_tasks``, and every trunk is then evaluated by
    frozen-trunk transfer on the joint tasks plus ``heldout_task``.
    """

    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    suite: ConceptSuiteSpec = field(default_factory=reference_task_quartet)
    trunk_hidden: tuple[int, ...] = (32,)
    base_task: str = "D"
    joint_tasks: tuple[str, ...] = ("A", "B")
    heldout_task: str = "C"
    base_train: TrainConfig = field(default_factory=default_base_train_config)
    finetune: TrainConfig = field(default_factory=default_finetune_config)
    grid: GridSpec = field(default_factory=default_transfer_grid)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.trunk_hidden = tuple(int(h) for h in self.trunk_hidden)
        self.joint_tasks = tuple(self.joint_tasks)
        if not self.seeds:
            raise ValidationError("need at least one seed")
        if not self.joint_tasks:
            raise ValidationError("need at least one joint task")
        named = {self.base_task, self.heldout_task, *self.joint_tasks}
        missing = named - set(self.suite.tasks)
        if missing:
            raise ValidationError(f"recipe names unknown tasks: {sorted(missing)}")

    def to_json_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "suite": self.suite.to_json_dict(),
            "trunk_hidden": list(self.trunk_hidden),
            "base_task": self.base_task,
            "joint_tasks": list(self.joint_tasks),
            "heldout_task": self.heldout_task,
            "base_train": self.base_train.to_json_dict(),
            "finetune": self.finetune.to_json_dict(),
            "grid": self.grid.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "TransferRecipe":
        kwargs = {}
        if "seeds" in obj:
            kwargs["seeds"] = tuple(obj["seeds"])
        if "suite" in obj:
            kwargs["suite"] = ConceptSuiteSpec.from_json_dict(obj["suite"])
        if "trunk_hidden" in obj:
            kwargs["trunk_hidden"] = tuple(obj["trunk_hidden"])
        for key in ("base_task", "heldout_task"):
            if key in obj:
                kwargs[key] = str(obj[key])
        if "joint_tasks" in obj:
            kwargs["joint_tasks"] = tuple(obj["joint_tasks"])
        if "base_train" in obj:
            kwargs["base_train"] = TrainConfig.from_json_dict(obj["base_train"])
        if "finetune" in obj:
            kwargs["finetune"] = TrainConfig.from_json_dict(obj["finetune"])
        if "grid" in obj:
            kwargs["grid"] = GridSpec.from_json_dict(obj["grid"])
        return cls(**kwargs)


@dataclass
class TransferOutcome:
    task_id: str
    trunk_name: str
    accuracies: list[float]  # one per seed
    median: float


@dataclass
class TransferExperimentResult:
    seeds: list[int]
    outcomes: list[TransferOutcome]

    def median(self, task_id: str, trunk_name: str) -> float:
        for o in self.outcomes:
            if o.task_id == task_id and o.trunk_name == trunk_name:
                return o.median
        raise ValidationError(f"no outcome for task '{task_id}' on '{trunk_name}'")

    def to_json_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "outcomes": [
                {
                    "task": o.task_id,
                    "trunk": o.trunk_name,
                    "accuracies": o.accuracies,
                    "median": o.median,
                }
                for o in self.outcomes
            ],
        }

    def to_csv_rows(self) -> list[list]:
        rows = [["task", "trunk", *[f"seed{s}" for s in self.seeds], "median"]]
        for o in self.outcomes:
            rows.append([o.task_id, o.trunk_name, *o.accuracies, o.median])
        return rows


def _experiment_trunks(recipe: TransferRecipe, seed: int) -> tuple[dict, dict]:
    """Train base/finetuned/joint trunks for one seed; returns (trunks, tasks)."""
    bundles = generate_concept_tasks(recipe.suite, seed)
    tasks = {tid: task_from_bundle(b) for tid, b in bundles.items()}
    trunk_config = TrunkConfig(
        input_dim=recipe.suite.input_dim,
        hidden_sizes=recipe.trunk_hidden,
        seed=derive_seed(seed, 1),
    )
    base_cfg = replace(recipe.base_train, seed=derive_seed(seed, 2), loss_kind="softmax")
    base = joint_train([tasks[recipe.base_task]], base_cfg, trunk_config=trunk_config)
    trunks = {f"trunk{recipe.base_task}": base.trunk}
    for i, tid in enumerate(recipe.joint_tasks):
        cfg = replace(recipe.finetune, seed=derive_seed(seed, 10 + i), loss_kind="softmax")
        trunks[f"trunk{tid}"] = finetune_single(base.trunk, tasks[tid], cfg).trunk
    joint_cfg = replace(recipe.finetune, seed=derive_seed(seed, 20), loss_kind="softmax")
    joint_model = joint_train(
        [tasks[tid] for tid in recipe.joint_tasks], joint_cfg, trunk_init=base.trunk
    )
    trunks["trunk" + "".join(recipe.joint_tasks)] = joint_model.trunk
    return trunks, tasks


def run_transfer_experiment(
    recipe: TransferRecipe, parallelism: int = 1
) -> TransferExperimentResult:
    """Transfer accuracies of every trained trunk, per seed plus medians.

    Evaluated pairs: each joint task on each single-task trunk and on the
    joint trunk, and the held-out task on the base trunk, the joint trunk,
    and the first joint task's trunk.
    """
    joint_name = "trunk" + "".join(recipe.joint_tasks)
    pairs: list[tuple[str, str]] = []
    for t in recipe.joint_tasks:
        for u in recipe.joint_tasks:
            pairs.append((t, f"trunk{u}"))
        pairs.append((t, joint_name))
    pairs.append((recipe.heldout_task, f"trunk{recipe.base_task}"))
    pairs.append((recipe.heldout_task, joint_name))
    pairs.append((recipe.heldout_task, f"trunk{recipe.joint_tasks[0]}"))

    accs: dict[tuple[str, str], list[float]] = {p: [] for p in pairs}
    for seed in recipe.seeds:
        trunks, tasks = _experiment_trunks(recipe, seed)
        for i, (task_id, trunk_name) in enumerate(pairs):
            acc = transfer_eval(
                trunks[trunk_name],
                tasks[task_id],
                recipe.grid,
                parallelism=parallelism,
                base_seed=derive_seed(seed, 100 + i),
            )
            accs[(task_id, trunk_name)].append(acc)
    outcomes = [
        TransferOutcome(
            task_id=t,
            trunk_name=name,
            accuracies=accs[(t, name)],
            median=float(np.median(accs[(t, name)])),
        )
        for t, name in pairs
    ]
    return TransferExperimentResult(seeds=list(recipe.seeds), outcomes=outcomes)
