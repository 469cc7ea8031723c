"""Run a pretrained torchvision model over an image directory and export
the chosen layer's activations as a featstack feature file plus a JSON
manifest fragment recording model/layer provenance and row order."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms
from torchvision.models.feature_extraction import (
    create_feature_extractor,
    get_graph_node_names,
)

from .writer import write_feature_file

log = logging.getLogger("featextract")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tiff", ".webp"}

# the standard ImageNet evaluation transform, used when no pretrained
# weight metadata is available
DEFAULT_TRANSFORM = transforms.Compose(
    [
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ]
)


@dataclass
class ExtractJob:
    image_dir: Path
    model: str
    layer: str
    out_dir: Path
    batch_size: int = 16
    weights: str = "pretrained"  # or "random" (seeded; for offline smoke runs)
    network_id: str | None = None
    dataset_id: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.image_dir = Path(self.image_dir)
        self.out_dir = Path(self.out_dir)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weights not in ("pretrained", "random"):
            raise ValueError("weights must be 'pretrained' or 'random'")
        if self.network_id is None:
            self.network_id = self.model
        if self.dataset_id is None:
            self.dataset_id = self.image_dir.name


@dataclass
class ExtractResult:
    feature_file: Path
    manifest_fragment: Path
    n: int
    d: int
    images: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def list_model_layers(model_name: str) -> list[str]:
    """Node names usable as --layer for the given model (eval graph)."""
    model = models.get_model(model_name, weights=None)
    _, eval_nodes = get_graph_node_names(model)
    return eval_nodes


def _build_model(job: ExtractJob):
    if job.weights == "pretrained":
        weights = models.get_model_weights(job.model).DEFAULT
        model = models.get_model(job.model, weights=weights)
        preprocess = weights.transforms()
    else:
        torch.manual_seed(job.seed)
        model = models.get_model(job.model, weights=None)
        preprocess = DEFAULT_TRANSFORM
    model.eval()
    _, eval_nodes = get_graph_node_names(model)
    if job.layer not in eval_nodes:
        raise ValueError(
            f"unknown layer '{job.layer}' in model '{job.model}'; "
            f"candidates include {eval_nodes[-6:]}"
        )
    return create_feature_extractor(model, return_nodes=[job.layer]), preprocess


def _image_paths(image_dir: Path) -> list[Path]:
    if not image_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {image_dir}")
    paths = sorted(
        p for p in image_dir.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise ValueError(f"no images in {image_dir}")
    return paths


def extract_features(job: ExtractJob) -> ExtractResult:
    """Extract features for every decodable image under ``job.image_dir``.

    Rows follow the sorted relative image paths recorded in the manifest
    fragment; undecodable images are skipped with a warning and listed
    under ``skipped``.
    """
    paths = _image_paths(job.image_dir)
    extractor, preprocess = _build_model(job)

    kept: list[str] = []
    skipped: list[str] = []
    tensors: list[torch.Tensor] = []
    for path in paths:
        rel = str(path.relative_to(job.image_dir))
        try:
            with Image.open(path) as img:
                tensors.append(preprocess(img.convert("RGB")))
            kept.append(rel)
        except Exception as e:  # undecodable image: skip, warn, record
            log.warning("skipping undecodable image %s: %s", path, e)
            warnings.warn(f"skipping undecodable image {path}: {e}", stacklevel=2)
            skipped.append(rel)
    if not kept:
        raise ValueError(f"no decodable images in {job.image_dir}")

    chunks = []
    with torch.no_grad():
        for start in range(0, len(tensors), job.batch_size):
            batch = torch.stack(tensors[start : start + job.batch_size])
            out = extractor(batch)[job.layer]
            chunks.append(out.reshape(out.shape[0], -1).cpu().numpy())
    features = np.concatenate(chunks, axis=0).astype(np.float32)

    job.out_dir.mkdir(parents=True, exist_ok=True)
    feature_file = job.out_dir / f"{job.network_id}.feat"
    write_feature_file(job.network_id, job.dataset_id, features, feature_file)

    fragment = {
        "network_id": job.network_id,
        "dataset_id": job.dataset_id,
        "model": job.model,
        "layer": job.layer,
        "weights": job.weights,
        "n": int(features.shape[0]),
        "d": int(features.shape[1]),
        "feature_file": feature_file.name,
        "images": kept,
        "skipped": skipped,
    }
    fragment_file = job.out_dir / f"{job.network_id}.manifest.json"
    fragment_file.write_text(json.dumps(fragment, indent=2) + "\n")
    return ExtractResult(
        feature_file=feature_file,
        manifest_fragment=fragment_file,
        n=int(features.shape[0]),
        d=int(features.shape[1]),
        images=kept,
        skipped=skipped,
    )
