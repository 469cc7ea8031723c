"""featextract: run torchvision models over image folders and export
penultimate-layer features in the featstack feature-file format."""

from .extract import ExtractJob, ExtractResult, extract_features, list_model_layers
from .writer import write_feature_file

__version__ = "0.1.0"
