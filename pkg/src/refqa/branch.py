"""Graph-guided difference aggregation branch.

One branch turns a query feature and its weighted references into an
enhanced feature of the same width::

    d      = GeLU(sum_n s_n W (q - r_n))          aggregated reference signal
    q~     = adapter_self(q)                      residual MLPs
    d~     = adapter_ref(d)
    alpha  = sigmoid(gate_w . [q~ || d~])
    out    = LN(GeLU(fuse [q~ || alpha d~]))

The same code serves the visual and the alignment feature streams.

Because backbone features are frozen, the weighted sum is linear in cached
data and ``sum_n s_n W d_n == W (sum_n s_n d_n)``. :func:`reference_summary`
computes the bracketed vector once per query (in ascending reference-id
order, so results are bitwise independent of input order) and
:func:`branch_forward_batch` applies the learnable part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numkit import (
    ParamRegistry,
    Tensor,
    concat,
    dot,
    gelu,
    glorot_uniform,
    layer_norm,
    linear,
    mul,
    reshape,
    sigmoid,
)
from .numkit.tensor import add

FEATURE_MODES = ("diff", "self")
AGGREGATIONS = ("graph", "avg")


def diff_features(query_feat, ref_feats) -> list:
    q = np.asarray(query_feat, dtype=float)
    out = []
    for r in ref_feats:
        r = np.asarray(r, dtype=float)
        if r.shape != q.shape:
            raise DimensionError(f"reference shape {r.shape} does not match query shape {q.shape}")
        out.append(q - r)
    return out


def _as_array(W):
    return W.data if isinstance(W, Tensor) else np.asarray(W, dtype=float)


def _gelu(x):
    return gelu(Tensor(x)).data


def aggregate(diffs, weights, W) -> np.ndarray:
    """``GeLU(sum_n s_n W diff_n)``, literally; the empty sum gives zeros."""
    W = _as_array(W)
    if len(diffs) != len(weights):
        raise ValueError(f"{len(diffs)} diffs but {len(weights)} weights")
    acc = np.zeros(W.shape[0])
    for d, s in zip(diffs, weights):
        acc = acc + s * (W @ d)
    return _gelu(acc)


def aggregate_avg(diffs, W) -> np.ndarray:
    """``GeLU(mean_n W diff_n)``; weights play no part."""
    W = _as_array(W)
    if not len(diffs):
        return np.zeros(W.shape[0])
    acc = np.zeros(W.shape[0])
    for d in diffs:
        acc = acc + W @ d
    return _gelu(acc / len(diffs))


def self_features_mode(ref_feats, weights, W, aggregation: str = "graph") -> np.ndarray:
    """Aggregate raw reference features in place of differences (ablation path)."""
    if aggregation == "avg":
        return aggregate_avg(list(ref_feats), W)
    return aggregate(list(ref_feats), weights, W)


def reference_summary(query_feat, refs, feature_mode: str = "diff", aggregation: str = "graph") -> np.ndarray:
    """Pre-projection reference vector for one query.

    ``refs`` is a sequence of ``(ref_id, feature, weight)``. They are summed in
    ascending id order. Returns ``sum s_n x_n`` (graph) or ``mean x_n`` (avg)
    with ``x_n = q - r_n`` (diff) or ``x_n = r_n`` (self).
    """
    if feature_mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    q = np.asarray(query_feat, dtype=float)
    if not refs:
        return np.zeros_like(q)
    ordered = sorted(refs, key=lambda r: r[0])
    feats = np.array([np.asarray(f, dtype=float) for _, f, _ in ordered])
    if feats.shape[1:] != q.shape:
        raise DimensionError(f"reference shape {feats.shape[1:]} does not match query shape {q.shape}")
    x = q - feats if feature_mode == "diff" else feats
    if aggregation == "avg":
        return x.sum(axis=0) / len(ordered)
    weights = np.array([w for _, _, w in ordered], dtype=float)
    return weights @ x


@dataclass
class Adapter:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def __call__(self, x):
        return add(linear(gelu(linear(x, self.W1, self.b1)), self.W2, self.b2), x)


@dataclass
class BranchParams:
    dim: int
    W: Tensor
    adapter_self: Adapter
    adapter_ref: Adapter
    gate_w: Tensor
    fuse_W: Tensor
    fuse_b: Tensor
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def from_registry(cls, reg: ParamRegistry, prefix: str) -> "BranchParams":
        def adapter(name):
            return Adapter(*(reg[f"{prefix}.{name}.{p}"] for p in ("W1", "b1", "W2", "b2")))

        W = reg[f"{prefix}.W"]
        return cls(
            dim=W.shape[0],
            W=W,
            adapter_self=adapter("adapt_self"),
            adapter_ref=adapter("adapt_ref"),
            gate_w=reg[f"{prefix}.gate_w"],
            fuse_W=reg[f"{prefix}.fuse.W"],
            fuse_b=reg[f"{prefix}.fuse.b"],
            ln_gain=reg[f"{prefix}.ln.gain"],
            ln_bias=reg[f"{prefix}.ln.bias"],
        )


def init_branch(reg: ParamRegistry, prefix: str, dim: int, rng) -> BranchParams:
    """Register a branch of width ``dim``: Glorot weights, zero biases, neutral gate, identity LN."""
    reg.add(f"{prefix}.W", glorot_uniform(rng, dim, dim))
    for name in ("adapt_self", "adapt_ref"):
        reg.add(f"{prefix}.{name}.W1", glorot_uniform(rng, dim, dim))
        reg.add(f"{prefix}.{name}.b1", np.zeros(dim))
        reg.add(f"{prefix}.{name}.W2", glorot_uniform(rng, dim, dim))
        reg.add(f"{prefix}.{name}.b2", np.zeros(dim))
    reg.add(f"{prefix}.gate_w", np.zeros(2 * dim))
    reg.add(f"{prefix}.fuse.W", glorot_uniform(rng, dim, 2 * dim))
    reg.add(f"{prefix}.fuse.b", np.zeros(dim))
    reg.add(f"{prefix}.ln.gain", np.ones(dim))
    reg.add(f"{prefix}.ln.bias", np.zeros(dim))
    return BranchParams.from_registry(reg, prefix)


@dataclass
class BranchOutput:
    enhanced: Tensor
    gate: Tensor
    aggregated: Tensor
    diffs: list | None = None

    @property
    def gate_value(self):
        return self.gate.data


def branch_forward_batch(query, summary, params: BranchParams, ln_eps: float = 1e-5) -> BranchOutput:
    """Differentiable branch over rows: ``query`` and ``summary`` are (B, D) arrays or tensors."""
    query = query if isinstance(query, Tensor) else Tensor(query)
    summary = summary if isinstance(summary, Tensor) else Tensor(summary)
    if query.shape[-1] != params.dim or summary.shape != query.shape:
        raise DimensionError(
            f"branch of width {params.dim} got query {query.shape} and reference summary {summary.shape}")
    aggregated = gelu(linear(summary, params.W))
    q_t = params.adapter_self(query)
    d_t = params.adapter_ref(aggregated)
    alpha = sigmoid(dot(concat([q_t, d_t]), params.gate_w))
    gated = mul(d_t, reshape(alpha, alpha.shape + (1,)))
    fused = gelu(linear(concat([q_t, gated]), params.fuse_W, params.fuse_b))
    enhanced = layer_norm(fused, params.ln_gain, params.ln_bias, ln_eps)
    return BranchOutput(enhanced=enhanced, gate=alpha, aggregated=aggregated)


def branch_forward(query_feat, graph_refs, params: BranchParams, mode: str = "diff", aggregation: str = "graph",
                   training: bool = False, rng=None, ln_eps: float = 1e-5) -> BranchOutput:
    """Single-query branch. ``graph_refs`` holds ``(ref_id, feature, weight)`` triples.

    The branch has no stochastic layers; ``training`` and ``rng`` are accepted
    for signature symmetry with the model.
    """
    q = np.asarray(query_feat, dtype=float)
    if q.shape != (params.dim,):
        raise DimensionError(f"branch of width {params.dim} got query of shape {q.shape}")
    summary = reference_summary(q, graph_refs, mode, aggregation)
    out = branch_forward_batch(q[None, :], summary[None, :], params, ln_eps)
    if mode == "diff":
        out.diffs = diff_features(q, [f for _, f, _ in sorted(graph_refs, key=lambda r: r[0])])
    return out
