"""Reference pool, threshold retrieval and query-centred star graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import TEST, TRAIN, Dataset
from .errors import DataError

STRATEGIES = ("prompt", "feature", "random", "batch")
DEFAULT_TAU = 0.7


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _row_normalize(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(norms == 0.0, 1.0, norms)


@dataclass(frozen=True, eq=False)
class ReferencePool:
    """Training samples eligible as references, with their embeddings stacked."""

    ids: tuple
    prompt_emb: np.ndarray
    visual_unit: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, split: str = TRAIN) -> "ReferencePool":
        ids = ds.split_ids(split)
        rows = ds.rows(ids)
        return cls(
            ids=tuple(ids),
            prompt_emb=_row_normalize(ds.prompt_matrix[rows]),
            visual_unit=_row_normalize(ds.visual_matrix[rows]),
        )

    def __len__(self):
        return len(self.ids)

    def __contains__(self, sample_id):
        return sample_id in set(self.ids)


@dataclass(frozen=True)
class ReferenceGraph:
    """Star graph: one edge from each reference to the query, weighted by similarity."""

    query_id: str
    refs: tuple  # ((ref_id, weight), ...) by descending weight, ties by id

    @property
    def ref_ids(self) -> list:
        return [r for r, _ in self.refs]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.refs], dtype=float)

    @property
    def edges(self) -> list:
        return [(self.query_id, r) for r, _ in self.refs]

    def __len__(self):
        return len(self.refs)

    def to_dict(self) -> dict:
        return {"query": self.query_id, "refs": [{"id": r, "weight": w} for r, w in self.refs]}


def _graph(query_id, ids, sims, tau, max_refs=None) -> ReferenceGraph:
    keep = [(ids[i], float(sims[i])) for i in np.flatnonzero(sims > tau) if ids[i] != query_id]
    keep.sort(key=lambda e: (-e[1], e[0]))
    if max_refs is not None:
        keep = keep[:max_refs]
    return ReferenceGraph(query_id, tuple(keep))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DataError("query embedding is the zero vector")
    return v / n


def retrieve(query, pool: ReferencePool, tau: float = DEFAULT_TAU, max_refs: int | None = None) -> ReferenceGraph:
    """All pool members whose prompt similarity to ``query`` exceeds ``tau``, minus the query itself."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")
    sims = np.clip(pool.prompt_emb @ _unit(query.prompt_emb), -1.0, 1.0)
    return _graph(query.id, pool.ids, sims, tau, max_refs)


def retrieve_variant(strategy: str, query, pool: ReferencePool, tau: float = DEFAULT_TAU, *,
                     k: int = 8, rng=None, batch_ids=(), max_refs: int | None = None) -> ReferenceGraph:
    """Retrieval under one of the ablation strategies.

    ``random`` draws ``k`` pool members (excluding the query) with weight 1;
    ``batch`` links the query to the other ``batch_ids`` with weight 1.
    """
    if strategy == "prompt":
        return retrieve(query, pool, tau, max_refs)
    if strategy == "feature":
        sims = np.clip(pool.visual_unit @ _unit(query.visual_feat), -1.0, 1.0)
        return _graph(query.id, pool.ids, sims, tau, max_refs)
    if strategy == "random":
        if k < 1:
            raise ValueError(f"random retrieval needs k >= 1, got {k}")
        if rng is None:
            raise ValueError("random retrieval needs an rng")
        eligible = [i for i in pool.ids if i != query.id]
        picks = rng.choice(len(eligible), size=min(k, len(eligible)), replace=False)
        return ReferenceGraph(query.id, tuple(sorted((eligible[i], 1.0) for i in picks)))
    if strategy == "batch":
        others = sorted(set(batch_ids) - {query.id})
        return ReferenceGraph(query.id, tuple((i, 1.0) for i in others))
    raise ValueError(f"unknown retrieval strategy {strategy!r}; expected one of {STRATEGIES}")


def retrieve_all(ds: Dataset, query_ids, pool: ReferencePool, tau: float = DEFAULT_TAU,
                 strategy: str = "prompt", *, k: int = 8, rng=None, max_refs: int | None = None) -> dict:
    """Graphs for many queries at once (``batch`` is handled by the caller)."""
    if strategy == "batch":
        raise ValueError("batch retrieval depends on the mini-batch; use retrieve_variant per batch")
    if strategy in ("prompt", "feature"):
        # one mat-vec per query, exactly as retrieve() does, so near-ties order identically
        return {q: retrieve_variant(strategy, ds[q], pool, tau, max_refs=max_refs) for q in query_ids}
    out = {}
    for j, q in enumerate(query_ids):
        out[q] = retrieve_variant(strategy, ds[q], pool, tau, k=k, rng=rng.child(j) if rng else None)
    return out


@dataclass(frozen=True)
class PoolStats:
    tau: float
    min: int
    max: int
    mean: float

    def to_dict(self) -> dict:
        return {"tau": self.tau, "min": self.min, "max": self.max, "avg": self.mean}


def pool_stats(pool: ReferencePool, ds: Dataset, tau: float, query_ids=None) -> PoolStats:
    """Reference-count statistics over every query in ``ds`` (or ``query_ids``)."""
    query_ids = ds.ids if query_ids is None else list(query_ids)
    graphs = retrieve_all(ds, query_ids, pool, tau)
    counts = np.array([len(graphs[q]) for q in query_ids])
    if counts.size == 0:
        return PoolStats(tau, 0, 0, 0.0)
    return PoolStats(tau, int(counts.min()), int(counts.max()), float(counts.mean()))


def check_pool_excludes_test(pool: ReferencePool, ds: Dataset) -> None:
    leaked = set(pool.ids) & set(ds.split_ids(TEST))
    if leaked:
        raise DataError(f"reference pool contains {len(leaked)} test ids, e.g. {sorted(leaked)[0]!r}")
