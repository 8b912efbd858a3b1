from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..errors import DimensionError, ManifestError

TRAIN = "train"
TEST = "test"
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Sample:
    """One video's cached record: prompt, its embedding and two backbone features."""

    id: str
    prompt: str
    prompt_emb: np.ndarray
    visual_feat: np.ndarray
    align_feat: np.ndarray
    mos: float | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, validated collection of samples with a train/test labelling.

    Samples with no explicit label count as training data, so an unsplit
    dataset is one big reference pool.
    """

    dims: tuple
    samples: tuple
    split_labels: dict = field(default_factory=dict)
    truth: object = None  # generator-side ground truth, synthetic data only

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        labels = {s.id: self.split_labels.get(s.id, TRAIN) for s in self.samples}
        object.__setattr__(self, "split_labels", labels)
        validate(self)

    def __len__(self):
        return len(self.samples)

    @cached_property
    def index(self) -> dict:
        return {s.id: i for i, s in enumerate(self.samples)}

    @cached_property
    def ids(self) -> list:
        return [s.id for s in self.samples]

    @cached_property
    def prompt_matrix(self) -> np.ndarray:
        return _stack([s.prompt_emb for s in self.samples], self.dims[0])

    @cached_property
    def visual_matrix(self) -> np.ndarray:
        return _stack([s.visual_feat for s in self.samples], self.dims[1])

    @cached_property
    def align_matrix(self) -> np.ndarray:
        return _stack([s.align_feat for s in self.samples], self.dims[2])

    @cached_property
    def mos(self) -> np.ndarray:
        return np.array([np.nan if s.mos is None else s.mos for s in self.samples])

    def __getitem__(self, sample_id: str) -> Sample:
        return self.samples[self.index[sample_id]]

    def split_ids(self, split: str) -> list:
        return [s.id for s in self.samples if self.split_labels[s.id] == split]

    def rows(self, ids) -> np.ndarray:
        return np.array([self.index[i] for i in ids], dtype=np.int64)

    def with_splits(self, labels: dict) -> "Dataset":
        return replace(self, split_labels=dict(labels))


def _stack(vectors, dim):
    if not vectors:
        return np.zeros((0, dim))
    return np.vstack(vectors)


def validate(ds: Dataset) -> None:
    d_p, d_v, d_s = ds.dims
    seen = set()
    for s in ds.samples:
        if s.id in seen:
            raise ManifestError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        for name, vec, dim in (("prompt_emb", s.prompt_emb, d_p), ("visual_feat", s.visual_feat, d_v),
                               ("align_feat", s.align_feat, d_s)):
            if vec.shape != (dim,):
                raise DimensionError(f"sample {s.id!r}: {name} has shape {vec.shape}, dataset declares ({dim},)")
            if not np.all(np.isfinite(vec)):
                raise ManifestError(f"sample {s.id!r}: non-finite values in {name}")
        if abs(np.linalg.norm(s.prompt_emb) - 1.0) > UNIT_NORM_TOL:
            raise ManifestError(f"sample {s.id!r}: prompt embedding is not unit norm")
        if s.mos is not None and not np.isfinite(s.mos):
            raise ManifestError(f"sample {s.id!r}: non-finite mos")
    for sid, label in ds.split_labels.items():
        if label not in (TRAIN, TEST):
            raise ManifestError(f"sample {sid!r}: unknown split {label!r}")
