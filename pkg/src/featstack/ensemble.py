"""Mean-of-scores ensembling over the best-trained model of every subset
of a network stack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .classifier import accuracy, predict, softmax_probs
from .errors import ValidationError
from .stacking import StackSpec, enumerate_subsets
from .store import DatasetBundle
from .sweep import GridSpec, prepare_stacked, run_sweep


@dataclass
class ScoreMatrix:
    """Per-sample class scores from one model, tagged by its source."""

    scores: np.ndarray  # (n, C)
    source: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValidationError("scores must be 2-D")
        if not np.isfinite(self.scores).all():
            raise ValidationError("scores contain non-finite values")


def mean_scores(members: Sequence[ScoreMatrix]) -> ScoreMatrix:
    """Elementwise arithmetic mean of the member scores.

    Members are summed in sorted source-tag order so the floating-point
    result does not depend on the order the caller assembled them in.
    """
    if not members:
        raise ValidationError("empty ensemble")
    shape = members[0].scores.shape
    for m in members:
        if m.scores.shape != shape:
            raise ValidationError(
                f"shape mismatch in ensemble: {m.source} has {m.scores.shape}, expected {shape}"
            )
    ordered = sorted(members, key=lambda m: m.source)
    total = np.zeros(shape)
    for m in ordered:
        total += m.scores
    return ScoreMatrix(
        scores=total / len(members),
        source="mean(" + ",".join(m.source for m in ordered) + ")",
    )


@dataclass
class SubsetReport:
    stack_spec: StackSpec
    val_accuracy: float
    degradation: float  # best subset accuracy minus this subset's


@dataclass
class EnsembleResult:
    ensemble_scores: ScoreMatrix
    ensemble_accuracy: float
    subsets: list[SubsetReport]

    def to_json_dict(self) -> dict:
        return {
            "ensemble_accuracy": self.ensemble_accuracy,
            "subsets": [
                {
                    "stack_spec": s.stack_spec.to_json_dict(),
                    "val_accuracy": s.val_accuracy,
                    "degradation": s.degradation,
                }
                for s in self.subsets
            ],
        }

    def to_csv_rows(self) -> list[list]:
        rows = [["networks", "val_accuracy", "degradation"]]
        for s in self.subsets:
            rows.append([s.stack_spec.key, s.val_accuracy, s.degradation])
        rows.append(["ensemble", self.ensemble_accuracy, ""])
        return rows


def stack_ensemble(
    bundle: DatasetBundle,
    network_ids: Sequence[str],
    grid: GridSpec,
    parallelism: int = 1,
    base_seed: int = 0,
    normalize: bool = True,
    prob: bool = False,
) -> EnsembleResult:
    """Sweep every nonempty subset of ``network_ids`` and average the winners' scores.

    Each subset contributes its sweep winner's validation-set scores; the
    ensemble prediction is the mean (of softmax probabilities instead when
    ``prob`` is set, which stops one loud member from dominating).
    """
    subsets = enumerate_subsets(network_ids)
    members: list[ScoreMatrix] = []
    reports: list[tuple[StackSpec, float]] = []
    y_val = None
    for subset in subsets:
        result = run_sweep(
            bundle, subset, grid,
            parallelism=parallelism, base_seed=base_seed, normalize=normalize,
        )
        data = prepare_stacked(bundle, subset, normalize=normalize)
        y_val = data.y_val
        scores, _ = predict(result.winner_model, data.X_val)
        if prob:
            scores = softmax_probs(scores)
        members.append(
            ScoreMatrix(scores=scores, source=f"{subset.key}#cfg{result.winner_index}")
        )
        reports.append((subset, result.winner.val_accuracy))

    combined = mean_scores(members)
    ensemble_acc = accuracy(np.argmax(combined.scores, axis=1), y_val)
    best = max(acc for _, acc in reports)
    return EnsembleResult(
        ensemble_scores=combined,
        ensemble_accuracy=ensemble_acc,
        subsets=[SubsetReport(spec, acc, best - acc) for spec, acc in reports],
    )
