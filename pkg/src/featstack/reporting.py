"""Evaluation artifacts: confusion matrices, accuracy-degradation tables,
and JSON/CSV emission with stable field order."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .stacking import StackSpec
from .store import atomic_write_text


@dataclass
class ConfusionMatrix:
    """counts[x, y] = number of samples of actual class x predicted as y."""

    counts: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        C = len(self.class_names)
        if self.counts.shape != (C, C):
            raise ValidationError("confusion counts must be C x C")
        if (self.counts < 0).any():
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def to_json_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "counts": self.counts.tolist(),
            "total": self.total,
            "accuracy": self.accuracy,
        }

    def to_csv_rows(self) -> list[list]:
        rows = [["actual\\predicted", *self.class_names]]
        for name, row in zip(self.class_names, self.counts):
            rows.append([name, *[int(v) for v in row]])
        return rows


def confusion(predictions, labels, num_classes: int, class_names=None) -> ConfusionMatrix:
    """Exact actual-vs-predicted counts over equal-length label vectors."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels length mismatch")
    if len(labels) and (
        labels.min() < 0 or labels.max() >= num_classes
        or predictions.min() < 0 or predictions.max() >= num_classes
    ):
        raise ValidationError("label out of range")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    if class_names is None:
        class_names = [f"class{c}" for c in range(num_classes)]
    return ConfusionMatrix(counts=counts, class_names=list(class_names))


@dataclass
class DegradationEntry:
    dataset_id: str
    accuracy: float
    degradation: float  # that dataset's best accuracy minus this one


@dataclass
class DegradationRow:
    stack_spec: StackSpec
    entries: list[DegradationEntry]
    mean_degradation: float
    std_degradation: float


@dataclass
class DegradationTable:
    rows: list[DegradationRow]

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {
                    "stack_spec": r.stack_spec.to_json_dict(),
                    "mean_degradation": r.mean_degradation,
                    "std_degradation": r.std_degradation,
                    "datasets": [
                        {
                            "dataset_id": e.dataset_id,
                            "accuracy": e.accuracy,
                            "degradation": e.degradation,
                        }
                        for e in r.entries
                    ],
                }
                for r in self.rows
            ]
        }

    def to_csv_rows(self) -> list[list]:
        rows = [
            ["networks", "dataset_id", "accuracy", "degradation",
             "mean_degradation", "std_degradation"]
        ]
        for r in self.rows:
            for e in r.entries:
                rows.append(
                    [r.stack_spec.key, e.dataset_id, e.accuracy, e.degradation,
                     r.mean_degradation, r.std_degradation]
                )
        return rows


def degradation_table(results: Mapping[str, Mapping[StackSpec, float]]) -> DegradationTable:
    """Per-dataset degradation versus that dataset's best combination.

    ``results`` maps dataset id -> stack spec -> accuracy. Each spec's mean
    and (population) standard deviation of degradation run across the
    datasets it appears in; rows come back sorted by mean ascending.
    """
    if not results or not any(results.values()):
        raise ValidationError("no results to tabulate")
    best = {ds: max(accs.values()) for ds, accs in results.items() if accs}
    per_spec: dict[StackSpec, list[DegradationEntry]] = {}
    for ds in sorted(best):
        for spec, acc in results[ds].items():
            per_spec.setdefault(spec, []).append(
                DegradationEntry(dataset_id=ds, accuracy=acc, degradation=best[ds] - acc)
            )
    rows = []
    for spec, entries in per_spec.items():
        degs = np.array([e.degradation for e in entries])
        rows.append(
            DegradationRow(
                stack_spec=spec,
                entries=entries,
                mean_degradation=float(degs.mean()),
                std_degradation=float(degs.std()),
            )
        )
    rows.sort(key=lambda r: (r.mean_degradation, r.stack_spec.key))
    return DegradationTable(rows=rows)


def serialize_report(report, fmt: str) -> str:
    """Render any report object exposing to_json_dict/to_csv_rows."""
    if fmt == "json":
        return json.dumps(report.to_json_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows(report.to_csv_rows())
        return buf.getvalue()
    raise ValidationError(f"unknown format '{fmt}'")


def emit(report, fmt: str, path) -> None:
    """Write a report to ``path`` atomically in the given format."""
    atomic_write_text(path, serialize_report(report, fmt))
