"""Grid search over training hyperparameters for one stack of networks.

Every config trains independently with a seed derived from (base seed,
config index), so results are identical at any parallelism level and in
any completion order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .classifier import SplitData, TrainConfig, TrainedModel, train_linear
from .errors import DivergedError, ValidationError
from .stacking import StackSpec, stack_bundle
from .store import DatasetBundle

TABLE_LRS = (1e-2, 5e-2, 1e-3, 2e-3)
TABLE_REGS = (0.01, 0.1, 1.0, 10.0)
TABLE_EPOCHS = (300, 400)
TABLE_DECAY = 0.98
DROPOUT_POLICIES = ("on", "off", "auto")


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid; defaults are the standard profiling values."""

    lrs: tuple[float, ...] = TABLE_LRS
    regs: tuple[float, ...] = TABLE_REGS
    epoch_choices: tuple[int, ...] = TABLE_EPOCHS
    decay: float = TABLE_DECAY
    dropout: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "lrs", tuple(float(v) for v in self.lrs))
        object.__setattr__(self, "regs", tuple(float(v) for v in self.regs))
        object.__setattr__(self, "epoch_choices", tuple(int(v) for v in self.epoch_choices))
        if not (self.lrs and self.regs and self.epoch_choices):
            raise ValidationError("grid lists must be nonempty")
        if self.dropout not in DROPOUT_POLICIES:
            raise ValidationError(f"dropout policy must be one of {DROPOUT_POLICIES}")

    def to_json_dict(self) -> dict:
        return {
            "lrs": list(self.lrs),
            "regs": list(self.regs),
            "epochs": list(self.epoch_choices),
            "decay": self.decay,
            "dropout": self.dropout,
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "GridSpec":
        kwargs = {}
        if "lrs" in obj:
            kwargs["lrs"] = tuple(obj["lrs"])
        if "regs" in obj:
            kwargs["regs"] = tuple(obj["regs"])
        if "epochs" in obj:
            kwargs["epoch_choices"] = tuple(obj["epochs"])
        if "decay" in obj:
            kwargs["decay"] = float(obj["decay"])
        if "dropout" in obj:
            kwargs["dropout"] = str(obj["dropout"])
        return cls(**kwargs)


def derive_seed(base_seed: int, index: int) -> int:
    """Stable 64-bit per-config seed; independent of scheduling and platform."""
    digest = hashlib.blake2b(f"{base_seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def grid_configs(
    grid: GridSpec,
    stack_size: int,
    base_seed: int = 0,
    batch_size: int = 128,
    dropout_p: float = 0.5,
    loss_kind: str = "svm",
) -> list[TrainConfig]:
    """Cartesian product in lr-major, then reg, then epochs order.

    Under the ``auto`` dropout policy, dropout turns on only for stacks of
    more than two networks.
    """
    if grid.dropout == "auto":
        dropout_enabled = stack_size > 2
    else:
        dropout_enabled = grid.dropout == "on"
    configs = []
    index = 0
    for lr in grid.lrs:
        for reg in grid.regs:
            for epochs in grid.epoch_choices:
                configs.append(
                    TrainConfig(
                        lr0=lr,
                        reg=reg,
                        epochs=epochs,
                        decay=grid.decay,
                        batch_size=batch_size,
                        dropout_p=dropout_p,
                        dropout_enabled=dropout_enabled,
                        loss_kind=loss_kind,
                        seed=derive_seed(base_seed, index),
                    )
                )
                index += 1
    return configs


@dataclass
class ConfigResult:
    config: TrainConfig
    val_accuracy: float
    best_epoch: int
    diverged: bool = False


def _train_one(payload):
    # module-level so process pools can pickle it
    data, config, stack_spec, normalized = payload
    try:
        model = train_linear(data, config, stack_spec=stack_spec, normalized=normalized)
    except DivergedError:
        return ConfigResult(config, val_accuracy=0.0, best_epoch=-1, diverged=True), None
    return ConfigResult(config, model.best_val_accuracy, model.best_epoch), model


@dataclass
class SweepResult:
    dataset_id: str
    stack_spec: StackSpec
    results: list[ConfigResult]
    winner_index: int
    winner_model: TrainedModel | None

    @property
    def winner(self) -> ConfigResult:
        return self.results[self.winner_index]

    def to_json_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "stack_spec": self.stack_spec.to_json_dict(),
            "winner_index": self.winner_index,
            "results": [
                {
                    "index": i,
                    "config": r.config.to_json_dict(),
                    "val_accuracy": r.val_accuracy,
                    "best_epoch": r.best_epoch,
                    "diverged": r.diverged,
                }
                for i, r in enumerate(self.results)
            ],
        }

    def to_csv_rows(self) -> list[list]:
        rows = [
            [
                "index", "networks", "lr0", "reg", "epochs", "decay", "batch_size",
                "dropout_enabled", "dropout_p", "loss_kind", "seed",
                "val_accuracy", "best_epoch", "diverged", "winner",
            ]
        ]
        for i, r in enumerate(self.results):
            c = r.config
            rows.append(
                [
                    i, self.stack_spec.key, c.lr0, c.reg, c.epochs, c.decay,
                    c.batch_size, c.dropout_enabled, c.dropout_p, c.loss_kind,
                    c.seed, r.val_accuracy, r.best_epoch, r.diverged,
                    i == self.winner_index,
                ]
            )
        return rows


def prepare_stacked(
    bundle: DatasetBundle, spec: StackSpec, normalize: bool = True
) -> SplitData:
    """Stack the bundle's networks per ``spec`` and slice out train/val arrays."""
    stacked = stack_bundle(bundle, spec, normalize=normalize)
    X = stacked.data.astype(np.float64)
    train, val = bundle.mask("train"), bundle.mask("val")
    return SplitData(
        X_train=X[train],
        y_train=bundle.labels[train],
        X_val=X[val],
        y_val=bundle.labels[val],
        num_classes=bundle.num_classes,
    )


def run_sweep_arrays(
    data: SplitData,
    grid: GridSpec,
    stack_spec: StackSpec,
    dataset_id: str,
    stack_size: int | None = None,
    parallelism: int = 1,
    base_seed: int = 0,
    normalized: bool = True,
    loss_kind: str = "svm",
) -> SweepResult:
    """Train every grid config on prepared arrays and pick the best by val accuracy.

    Diverged configs are recorded with accuracy 0; only a fully diverged
    sweep raises. Ties go to the lowest config index.
    """
    if stack_size is None:
        stack_size = len(stack_spec.network_ids)
    configs = grid_configs(grid, stack_size, base_seed=base_seed, loss_kind=loss_kind)
    payloads = [(data, cfg, stack_spec, normalized) for cfg in configs]

    if parallelism <= 1:
        outcomes = [_train_one(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_train_one, payloads))

    results = [r for r, _ in outcomes]
    if all(r.diverged for r in results):
        raise ValidationError("no viable config: every grid point diverged")
    winner_index = min(
        range(len(results)), key=lambda i: (-results[i].val_accuracy, i)
    )
    return SweepResult(
        dataset_id=dataset_id,
        stack_spec=stack_spec,
        results=results,
        winner_index=winner_index,
        winner_model=outcomes[winner_index][1],
    )


def run_sweep(
    bundle: DatasetBundle,
    stack_spec: StackSpec,
    grid: GridSpec,
    parallelism: int = 1,
    base_seed: int = 0,
    normalize: bool = True,
) -> SweepResult:
    """Sweep the grid for one stack over a bundle's train/val splits."""
    data = prepare_stacked(bundle, stack_spec, normalize=normalize)
    return run_sweep_arrays(
        data,
        grid,
        stack_spec=stack_spec,
        dataset_id=bundle.dataset_id,
        stack_size=len(stack_spec.network_ids),
        parallelism=parallelism,
        base_seed=base_seed,
        normalized=normalize,
    )
