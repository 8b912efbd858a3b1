from __future__ import annotations

from ..numkit import Rng
from .dataset import TEST, TRAIN, Dataset


def random_split(ds: Dataset, train_frac: float = 0.8, seed: int = 0) -> Dataset:
    """Relabel every sample train/test; ``round(train_frac * n)`` go to train."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = len(ds)
    n_train = int(round(train_frac * n))
    order = Rng(seed).child(0x5917).permutation(n)
    labels = {}
    for rank, idx in enumerate(order):
        labels[ds.samples[idx].id] = TRAIN if rank < n_train else TEST
    return ds.with_splits(labels)
