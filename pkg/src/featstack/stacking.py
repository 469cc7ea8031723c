"""Stacked feature construction: row normalization, weighted concatenation,
subset enumeration, and the accuracy-ratio weighting rule.

All operations are pure functions over :class:`~featstack.store.FeatureMatrix`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .store import DatasetBundle, FeatureMatrix

MAX_NETWORKS = 16
ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class StackSpec:
    """An ordered set of network ids (canonically sorted) with optional weights."""

    network_ids: tuple[str, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        ids = tuple(self.network_ids)
        object.__setattr__(self, "network_ids", ids)
        if not ids:
            raise ValidationError("no networks")
        if list(ids) != sorted(set(ids)):
            raise ValidationError("network ids must be unique and sorted ascending")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            object.__setattr__(self, "weights", w)
            if len(w) != len(ids):
                raise ValidationError("weights length must match network ids")
            if any(v <= 0 for v in w):
                raise ValidationError("weights must be > 0")
            if max(w) != 1.0:
                raise ValidationError("max weight must be exactly 1")

    @property
    def key(self) -> str:
        return "+".join(self.network_ids)

    def to_json_dict(self) -> dict:
        out = {"networks": list(self.network_ids)}
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "StackSpec":
        weights = obj.get("weights")
        return cls(
            network_ids=tuple(obj["networks"]),
            weights=tuple(weights) if weights is not None else None,
        )


def l2_normalize_rows(m: FeatureMatrix) -> FeatureMatrix:
    """Scale each row to unit Euclidean norm; rows with norm < 1e-12 become zeros."""
    data = m.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    out = np.where(norms < ZERO_NORM_EPS, 0.0, data / np.where(norms == 0, 1.0, norms))
    return FeatureMatrix(m.network_id, m.dataset_id, out.astype(np.float32))


def stack(
    matrices: Sequence[FeatureMatrix],
    weights: Sequence[float] | None = None,
) -> FeatureMatrix:
    """Concatenate feature blocks in canonical (sorted network id) order.

    ``weights`` aligns with ``matrices`` as given; block i is scaled by its
    weight (default 1). Input order does not matter: blocks are placed by
    sorted network id, so any permutation of the inputs stacks identically.
    """
    if not matrices:
        raise ValidationError("no networks")
    if weights is not None and len(weights) != len(matrices):
        raise ValidationError("weights length must match matrices")
    if weights is None:
        weights = [1.0] * len(matrices)
    ids = [m.network_id for m in matrices]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate network ids in stack")
    n = matrices[0].n
    for m in matrices:
        if m.n != n:
            raise ValidationError(
                f"sample count mismatch: network '{m.network_id}' has {m.n} rows, expected {n}"
            )
    order = sorted(range(len(matrices)), key=lambda i: matrices[i].network_id)
    blocks = []
    for i in order:
        w = float(weights[i])
        block = matrices[i].data
        if w != 1.0:
            block = block * np.float32(w)
        blocks.append(block)
    out = np.concatenate(blocks, axis=1)
    return FeatureMatrix(
        network_id="+".join(matrices[i].network_id for i in order),
        dataset_id=matrices[order[0]].dataset_id,
        data=out,
    )


def stack_bundle(
    bundle: DatasetBundle, spec: StackSpec, normalize: bool = True
) -> FeatureMatrix:
    """Assemble the stacked feature matrix for ``spec`` over all samples in ``bundle``.

    Rows are L2-normalized per network before weighting and concatenation
    unless ``normalize`` is off.
    """
    mats = []
    for nid in spec.network_ids:
        if nid not in bundle.features:
            raise ValidationError(f"unknown network '{nid}' in bundle '{bundle.dataset_id}'")
        m = bundle.features[nid]
        mats.append(l2_normalize_rows(m) if normalize else m)
    weights = list(spec.weights) if spec.weights is not None else None
    return stack(mats, weights)


def enumerate_subsets(network_ids: Sequence[str]) -> list[StackSpec]:
    """All nonempty subsets, ordered by size then lexicographically."""
    ids = sorted(set(network_ids))
    if not ids:
        raise ValidationError("no networks")
    if len(ids) > MAX_NETWORKS:
        raise ValidationError(f"too many networks (max {MAX_NETWORKS})")
    out = []
    for size in range(1, len(ids) + 1):
        for combo in itertools.combinations(ids, size):
            out.append(StackSpec(network_ids=combo))
    return out


def accuracy_weights(accuracies: Mapping[str, float]) -> dict[str, float]:
    """Per-network weights: each accuracy divided by the best accuracy."""
    if not accuracies:
        raise ValidationError("no accuracies given")
    for nid, acc in accuracies.items():
        if not acc > 0:
            raise ValidationError(f"degenerate accuracy for '{nid}': {acc}")
    best = max(accuracies.values())
    return {nid: float(acc) / best for nid, acc in accuracies.items()}
