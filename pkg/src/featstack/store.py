"""Feature matrices, dataset bundles, and synthetic data generation.

Binary feature file layout (little-endian throughout):

    8 bytes    magic ``SNNFEAT1``
    u32        n, number of samples (rows)
    u32        d, feature dimension (columns)
    u32 + ...  network id: UTF-8 byte length, then the bytes
    u32 + ...  dataset id: UTF-8 byte length, then the bytes
    n*d f32    feature values, row-major

CSV feature files (header row ``f0,...,f{d-1}``) are accepted on ingestion
for interoperability; the binary format is canonical and round-trips
bit-exactly. Labels and split tags live in separate single-column CSV
files referenced from a JSON manifest, since features are per-network but
labels are not.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, ValidationError

FEATURE_MAGIC = b"SNNFEAT1"
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


def atomic_write_bytes(path, blob: bytes) -> None:
    """Write ``blob`` to ``path`` via a temp file + rename; no partial files."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as e:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(f"cannot write {path}: {e}") from e


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class FeatureMatrix:
    """Dense n-by-d float32 feature matrix from one named network."""

    network_id: str
    dataset_id: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError("feature data must be a 2-D array")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("feature matrix must have n >= 1 and d >= 1")
        if not np.isfinite(arr).all():
            raise ValidationError("feature matrix contains non-finite values")
        self.data = arr

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def write_feature_file(m: FeatureMatrix, path) -> None:
    """Serialize ``m`` to the binary feature format at ``path``.

    The write is atomic: on failure no partial file is left behind.
    """
    nid = m.network_id.encode("utf-8")
    did = m.dataset_id.encode("utf-8")
    blob = bytearray()
    blob += FEATURE_MAGIC
    blob += struct.pack("<II", m.n, m.d)
    blob += struct.pack("<I", len(nid)) + nid
    blob += struct.pack("<I", len(did)) + did
    blob += np.ascontiguousarray(m.data, dtype="<f4").tobytes()
    atomic_write_bytes(path, bytes(blob))


class _Cursor:
    """Bounds-checked reader over a byte string."""

    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.buf):
            raise FormatError(f"corrupt feature file (truncated): {self.path}")
        out = self.buf[self.off : self.off + count]
        self.off += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def utf8(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"corrupt feature file (bad id encoding): {self.path}") from e

    def remaining(self) -> bytes:
        out = self.buf[self.off :]
        self.off = len(self.buf)
        return out


def read_feature_file(path) -> FeatureMatrix:
    """Read a binary feature file written by :func:`write_feature_file`."""
    buf = Path(path).read_bytes()
    if len(buf) < len(FEATURE_MAGIC) or buf[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError(f"not a feature file: {path}")
    cur = _Cursor(buf, path)
    cur.take(len(FEATURE_MAGIC))
    n = cur.u32()
    d = cur.u32()
    network_id = cur.utf8()
    dataset_id = cur.utf8()
    if n < 1 or d < 1:
        raise FormatError(f"corrupt feature file (empty matrix): {path}")
    payload = cur.remaining()
    if len(payload) != n * d * 4:
        raise FormatError(f"corrupt feature file (truncated): {path}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    if not np.isfinite(values).all():
        raise FormatError(f"corrupt feature file (non-finite values): {path}")
    return FeatureMatrix(network_id=network_id, dataset_id=dataset_id, data=values)


def write_feature_csv(m: FeatureMatrix, path) -> None:
    """Write features as CSV with header ``f0..f{d-1}`` (interop format)."""
    lines = [",".join(f"f{j}" for j in range(m.d))]
    for row in m.data:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_feature_csv(path, network_id: str, dataset_id: str) -> FeatureMatrix:
    """Read a CSV feature file; ids come from the caller (the manifest)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"not a feature CSV (empty file): {path}")
    header = rows[0]
    expected = [f"f{j}" for j in range(len(header))]
    if header != expected:
        raise FormatError(f"not a feature CSV (expected header f0..f{{d-1}}): {path}")
    d = len(header)
    body = rows[1:]
    if not body:
        raise FormatError(f"corrupt feature CSV (no data rows): {path}")
    values = np.empty((len(body), d), dtype=np.float32)
    for i, row in enumerate(body):
        if len(row) != d:
            raise FormatError(f"corrupt feature CSV (row {i} has {len(row)} fields): {path}")
        try:
            values[i] = [float(v) for v in row]
        except ValueError as e:
            raise FormatError(f"corrupt feature CSV (bad value in row {i}): {path}") from e
    if not np.isfinite(values).all():
        raise FormatError(f"corrupt feature CSV (non-finite values): {path}")
    return FeatureMatrix(network_id=network_id, dataset_id=dataset_id, data=values)


def _read_column_csv(path, column: str) -> list[str]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != [column]:
        raise FormatError(f"expected single-column CSV with header '{column}': {path}")
    return [row[0] for row in rows[1:]]


def read_labels_csv(path) -> np.ndarray:
    values = _read_column_csv(path, "label")
    try:
        return np.array([int(v) for v in values], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"corrupt labels file (non-integer label): {path}") from e


def write_labels_csv(labels: np.ndarray, path) -> None:
    atomic_write_text(path, "label\n" + "\n".join(str(int(v)) for v in labels) + "\n")


def read_splits_csv(path) -> np.ndarray:
    values = _read_column_csv(path, "split")
    for v in values:
        if v not in SPLIT_NAMES:
            raise FormatError(f"corrupt splits file (unknown tag '{v}'): {path}")
    return np.array(values)


def write_splits_csv(split: np.ndarray, path) -> None:
    atomic_write_text(path, "split\n" + "\n".join(str(v) for v in split) + "\n")


@dataclass
class DatasetBundle:
    """All per-network features for one dataset, plus labels and split tags."""

    dataset_id: str
    class_names: list[str]
    labels: np.ndarray
    split: np.ndarray
    features: dict[str, FeatureMatrix]

    def __post_init__(self):
        if len(self.class_names) < 1:
            raise ValidationError("bundle needs at least one class")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split)
        n = len(self.labels)
        if len(self.split) != n:
            raise ValidationError("inconsistent sample count: labels vs splits")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError("label out of range")
        for tag in self.split:
            if tag not in SPLIT_NAMES:
                raise ValidationError(f"unknown split tag '{tag}'")
        for nid, fm in self.features.items():
            if fm.n != n:
                raise ValidationError(
                    f"inconsistent sample count: network '{nid}' has {fm.n} rows, expected {n}"
                )
        for part in ("train", "val"):
            if not np.any(self.split == part):
                raise ValidationError(f"empty {part} split")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def n(self) -> int:
        return len(self.labels)

    def mask(self, part: str) -> np.ndarray:
        if part not in SPLIT_NAMES:
            raise ValidationError(f"unknown split tag '{part}'")
        return self.split == part


def load_bundle(manifest_path) -> DatasetBundle:
    """Load and fully validate a dataset bundle from a JSON manifest.

    The manifest lists ``dataset_id``, ``class_names``, a labels CSV, a
    splits CSV, and a ``features`` map of network id to feature file path
    (binary or ``.csv``). Relative paths resolve against the manifest's
    directory.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {manifest_path}") from e
    for key in ("dataset_id", "class_names", "labels", "splits", "features"):
        if key not in manifest:
            raise FormatError(f"manifest missing key '{key}': {manifest_path}")
    base = manifest_path.parent

    labels = read_labels_csv(base / manifest["labels"])
    split = read_splits_csv(base / manifest["splits"])
    features = {}
    for nid, rel in sorted(manifest["features"].items()):
        fpath = base / rel
        if str(rel).endswith(".csv"):
            fm = read_feature_csv(fpath, network_id=nid, dataset_id=manifest["dataset_id"])
        else:
            fm = read_feature_file(fpath)
            # the manifest key is authoritative for the network's name
            fm.network_id = nid
            fm.dataset_id = manifest["dataset_id"]
        features[nid] = fm
    return DatasetBundle(
        dataset_id=manifest["dataset_id"],
        class_names=list(manifest["class_names"]),
        labels=labels,
        split=split,
        features=features,
    )


def write_bundle(bundle: DatasetBundle, out_dir) -> Path:
    """Write a bundle (manifest + feature/labels/splits files); returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_files = {}
    for nid in sorted(bundle.features):
        fname = f"{nid}.feat"
        write_feature_file(bundle.features[nid], out_dir / fname)
        feature_files[nid] = fname
    write_labels_csv(bundle.labels, out_dir / "labels.csv")
    write_splits_csv(bundle.split, out_dir / "splits.csv")
    manifest = {
        "dataset_id": bundle.dataset_id,
        "class_names": bundle.class_names,
        "labels": "labels.csv",
        "splits": "splits.csv",
        "features": feature_files,
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")
    return path


def stratified_split(labels, fractions, seed) -> np.ndarray:
    """Assign train/val/test tags with per-class proportions matching ``fractions``.

    ``fractions`` is (train, val, test) and must sum to 1 within 1e-9.
    Deterministic given ``seed`` (an int or a numpy Generator). Raises
    "class too small" when a class has fewer samples than nonzero parts.
    """
    labels = np.asarray(labels, dtype=np.int64)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLIT_NAMES):
        raise ValidationError("fractions must be (train, val, test)")
    if any(f < 0 for f in fractions):
        raise ValidationError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError("fractions must sum to 1")
    nonzero = [i for i, f in enumerate(fractions) if f > 0]
    rng = np.random.default_rng(seed)
    tags = np.empty(len(labels), dtype="<U5")
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < len(nonzero):
            raise ValidationError(
                f"class too small: class {c} has {len(idx)} samples for {len(nonzero)} split parts"
            )
        perm = rng.permutation(idx)
        m = len(idx)
        bounds = [int(math.floor(sum(fractions[: i + 1]) * m + 0.5)) for i in range(3)]
        bounds[-1] = m
        counts = [bounds[0], bounds[1] - bounds[0], bounds[2] - bounds[1]]
        # rounding may starve a nonzero part; steal from the largest one
        for i in nonzero:
            while counts[i] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[i] += 1
        start = 0
        for part, count in zip(SPLIT_NAMES, counts):
            tags[perm[start : start + count]] = part
            start += count
    return tags


def _canonical_partition(groups) -> tuple[tuple[int, ...], ...]:
    canon = tuple(tuple(sorted(int(c) for c in g)) for g in groups)
    return tuple(sorted(canon, key=lambda g: g[0]))


@dataclass
class SynthSpec:
    """Recipe for a synthetic bundle with per-network class-group structure.

    Each network sees Gaussian clusters whose means depend only on the
    group its partition assigns to the sample's class, so a network can
    reveal at most its own partition of the classes.
    """

    num_classes: int
    partitions: dict[str, tuple[tuple[int, ...], ...]]
    dims_per_network: int
    samples_per_class: int
    cluster_separation: float
    noise_sigma: float

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if self.samples_per_class < 1:
            raise ValidationError("samples_per_class must be >= 1")
        if self.cluster_separation <= 0:
            raise ValidationError("cluster_separation must be > 0")
        if self.noise_sigma <= 0:
            raise ValidationError("noise_sigma must be > 0")
        if not self.partitions:
            raise ValidationError("need at least one network partition")
        canon = {}
        for nid, groups in self.partitions.items():
            groups = _canonical_partition(groups)
            covered = [c for g in groups for c in g]
            if sorted(covered) != list(range(self.num_classes)):
                raise ValidationError(
                    f"partition for network '{nid}' must cover each class exactly once"
                )
            # group g's mean sits at +/- separation/2 along axis g//2
            if self.dims_per_network < (len(groups) + 1) // 2:
                raise ValidationError(
                    f"dims_per_network too small for {len(groups)} groups in network '{nid}'"
                )
            canon[nid] = groups
        self.partitions = canon

    def to_json_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "partitions": {nid: [list(g) for g in groups] for nid, groups in self.partitions.items()},
            "dims_per_network": self.dims_per_network,
            "samples_per_class": self.samples_per_class,
            "cluster_separation": self.cluster_separation,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "SynthSpec":
        return cls(
            num_classes=int(obj["num_classes"]),
            partitions={nid: tuple(tuple(g) for g in groups) for nid, groups in obj["partitions"].items()},
            dims_per_network=int(obj["dims_per_network"]),
            samples_per_class=int(obj["samples_per_class"]),
            cluster_separation=float(obj["cluster_separation"]),
            noise_sigma=float(obj["noise_sigma"]),
        )


def _group_means(num_groups: int, dims: int, separation: float) -> np.ndarray:
    means = np.zeros((num_groups, dims))
    for g in range(num_groups):
        sign = 1.0 if g % 2 == 0 else -1.0
        means[g, g // 2] = sign * separation / 2.0
    return means


def generate_synthetic(spec: SynthSpec, seed, dataset_id: str = "synth") -> DatasetBundle:
    """Draw a synthetic bundle; pure in (spec, seed), byte-identical on repeat."""
    n = spec.num_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    network_ids = sorted(spec.partitions)
    children = np.random.SeedSequence(seed).spawn(len(network_ids) + 1)
    features = {}
    for child, nid in zip(children, network_ids):
        rng = np.random.default_rng(child)
        groups = spec.partitions[nid]
        class_to_group = np.empty(spec.num_classes, dtype=np.int64)
        for g, members in enumerate(groups):
            for c in members:
                class_to_group[c] = g
        means = _group_means(len(groups), spec.dims_per_network, spec.cluster_separation)
        data = means[class_to_group[labels]] + rng.normal(
            0.0, spec.noise_sigma, size=(n, spec.dims_per_network)
        )
        features[nid] = FeatureMatrix(nid, dataset_id, data.astype(np.float32))
    split = stratified_split(
        labels, DEFAULT_SPLIT_FRACTIONS, np.random.default_rng(children[-1])
    )
    return DatasetBundle(
        dataset_id=dataset_id,
        class_names=[f"class{c}" for c in range(spec.num_classes)],
        labels=labels,
        split=split,
        features=features,
    )


def complementary_pair_spec(
    samples_per_class: int = 250,
    dims_per_network: int = 6,
    cluster_separation: float = 6.0,
    noise_sigma: float = 1.0,
) -> SynthSpec:
    """Two networks whose class partitions are complementary.

    Neither network alone can tell classes apart within its own groups,
    but the pair of group memberships identifies the class exactly, so
    concatenating both networks' features is required for high accuracy.
    """
    return SynthSpec(
        num_classes=4,
        partitions={
            "netA": ((0, 1), (2, 3)),
            "netB": ((0, 2), (1, 3)),
        },
        dims_per_network=dims_per_network,
        samples_per_class=samples_per_class,
        cluster_separation=cluster_separation,
        noise_sigma=noise_sigma,
    )


@dataclass
class ConceptTaskSpec:
    """One classification task over a shared latent concept space."""

    classes: tuple[tuple[int, ...], ...]  # per-class latent concept ids
    samples_per_class: int

    def __post_init__(self):
        if not self.classes:
            raise ValidationError("task needs at least one class")
        if self.samples_per_class < 1:
            raise ValidationError("samples_per_class must be >= 1")
        self.classes = tuple(tuple(int(c) for c in g) for g in self.classes)


@dataclass
class ConceptSuiteSpec:
    """Family of related tasks drawn from one latent concept space.

    Concepts are Gaussian clusters at ``separation`` along distinct input
    axes; each task labels samples by which of its concept groups the
    sample's concept belongs to. Tasks that group concepts differently
    share inputs but demand different distinctions.
    """

    input_dim: int
    num_concepts: int
    separation: float
    noise_sigma: float
    tasks: dict[str, ConceptTaskSpec] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_concepts < 1 or self.input_dim < self.num_concepts:
            raise ValidationError("need 1 <= num_concepts <= input_dim")
        if self.separation <= 0 or self.noise_sigma <= 0:
            raise ValidationError("separation and noise_sigma must be > 0")
        for tid, task in self.tasks.items():
            for group in task.classes:
                for c in group:
                    if not 0 <= c < self.num_concepts:
                        raise ValidationError(f"task '{tid}' references unknown concept {c}")

    def to_json_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_concepts": self.num_concepts,
            "separation": self.separation,
            "noise_sigma": self.noise_sigma,
            "tasks": {
                tid: {
                    "classes": [list(g) for g in task.classes],
                    "samples_per_class": task.samples_per_class,
                }
                for tid, task in self.tasks.items()
            },
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "ConceptSuiteSpec":
        return cls(
            input_dim=int(obj["input_dim"]),
            num_concepts=int(obj["num_concepts"]),
            separation=float(obj["separation"]),
            noise_sigma=float(obj["noise_sigma"]),
            tasks={
                tid: ConceptTaskSpec(
                    classes=tuple(tuple(g) for g in t["classes"]),
                    samples_per_class=int(t["samples_per_class"]),
                )
                for tid, t in obj["tasks"].items()
            },
        )


def generate_concept_tasks(spec: ConceptSuiteSpec, seed) -> dict[str, DatasetBundle]:
    """Generate one single-network bundle per task (network id ``input``)."""
    centers = np.zeros((spec.num_concepts, spec.input_dim))
    for k in range(spec.num_concepts):
        centers[k, k] = spec.separation
    task_ids = sorted(spec.tasks)
    children = np.random.SeedSequence(seed).spawn(len(task_ids))
    bundles = {}
    for child, tid in zip(children, task_ids):
        task = spec.tasks[tid]
        rng = np.random.default_rng(child)
        C = len(task.classes)
        n = C * task.samples_per_class
        labels = np.repeat(np.arange(C), task.samples_per_class)
        concepts = np.empty(n, dtype=np.int64)
        for i, c in enumerate(labels):
            group = task.classes[c]
            concepts[i] = group[rng.integers(len(group))]
        data = centers[concepts] + rng.normal(0.0, spec.noise_sigma, size=(n, spec.input_dim))
        split = stratified_split(labels, DEFAULT_SPLIT_FRACTIONS, rng)
        bundles[tid] = DatasetBundle(
            dataset_id=tid,
            class_names=["+".join(str(c) for c in g) for g in task.classes],
            labels=labels,
            split=split,
            features={"input": FeatureMatrix("input", tid, data.astype(np.float32))},
        )
    return bundles


def reference_task_quartet(
    samples_per_class: int = 60,
    separation: float = 5.0,
    noise_sigma: float = 1.0,
) -> ConceptSuiteSpec:
    """The default four-task transfer suite: broad task D, related A and B, held-out C.

    Task A groups concept pairs one way, task B groups the same concepts a
    crossing way, so each needs distinctions the other discards. Task C
    mixes fine distinctions among A/B's concepts with concepts neither A
    nor B ever sees, and task D labels every concept individually.
    """
    tasks = {
        "D": ConceptTaskSpec(
            classes=tuple((k,) for k in range(12)),
            samples_per_class=max(20, samples_per_class // 2),
        ),
        "A": ConceptTaskSpec(
            classes=((0, 1), (2, 3), (4, 5), (6, 7)),
            samples_per_class=samples_per_class,
        ),
        "B": ConceptTaskSpec(
            classes=((0, 2), (1, 3), (4, 6), (5, 7)),
            samples_per_class=samples_per_class,
        ),
        "C": ConceptTaskSpec(
            classes=((0,), (1,), (2,), (8,), (9,), (10,)),
            samples_per_class=samples_per_class,
        ),
    }
    return ConceptSuiteSpec(
        input_dim=16,
        num_concepts=12,
        separation=separation,
        noise_sigma=noise_sigma,
        tasks=tasks,
    )
