"""On-disk dataset format, splits and synthetic data generation."""

from .dataset import TEST, TRAIN, Dataset, Sample
from .embed import deterministic_embed
from .manifest import load_dataset, save_dataset
from .split import random_split
from .store import read_feature_store, write_feature_store
from .synth import SynthSpec, SynthTruth, deviation_to_mos, generate_synthetic

__all__ = [
    "TEST",
    "TRAIN",
    "Dataset",
    "Sample",
    "SynthSpec",
    "SynthTruth",
    "deterministic_embed",
    "deviation_to_mos",
    "generate_synthetic",
    "load_dataset",
    "random_split",
    "read_feature_store",
    "save_dataset",
    "write_feature_store",
]
