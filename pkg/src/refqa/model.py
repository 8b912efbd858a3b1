"""Full predictor: two reference-aware branches, fusion MLP and softplus head."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .branch import AGGREGATIONS, FEATURE_MODES, BranchParams, branch_forward_batch, init_branch, reference_summary
from .errors import (
    ConfigMismatchError,
    DimensionError,
    ModelFormatError,
    ShapeMismatchError,
    UsageError,
    VersionMismatchError,
)
from .numkit import Layer, ParamRegistry, Rng, Tensor, concat, glorot_uniform, linear, mlp_forward, reshape, softplus
from .retrieval import STRATEGIES

MAGIC = b"RFQM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_v: int = 64
    d_s: int = 64
    d_h: int = 32
    tau: float = 0.7
    retrieval: str = "prompt"
    aggregation: str = "graph"
    feature_mode: str = "diff"
    use_visual: bool = True
    use_align: bool = True
    refs_visual: bool = True
    refs_align: bool = True
    dropout: float = 0.1
    seed: int = 0
    ln_eps: float = 1e-5
    random_k: int = 8
    max_refs: int | None = None

    def __post_init__(self):
        if not (self.use_visual or self.use_align):
            raise UsageError("at least one branch must be enabled")
        if min(self.d_v, self.d_s, self.d_h) < 1:
            raise UsageError("dims must be >= 1")
        if self.retrieval not in STRATEGIES:
            raise UsageError(f"retrieval must be one of {STRATEGIES}, got {self.retrieval!r}")
        if self.aggregation not in AGGREGATIONS:
            raise UsageError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.feature_mode not in FEATURE_MODES:
            raise UsageError(f"feature_mode must be one of {FEATURE_MODES}, got {self.feature_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.tau < 1.0:
            raise UsageError(f"tau must be in [0, 1), got {self.tau}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def diff(self, other: "ModelConfig") -> list:
        a, b = self.to_dict(), other.to_dict()
        return [k for k in a if a[k] != b[k]]


@dataclass
class ModelInputs:
    """Per-row branch inputs: query features and their reference summaries."""

    ids: list
    visual: np.ndarray
    visual_refs: np.ndarray
    align: np.ndarray
    align_refs: np.ndarray

    def take(self, idx) -> "ModelInputs":
        idx = np.asarray(idx)
        return ModelInputs([self.ids[i] for i in idx], self.visual[idx], self.visual_refs[idx],
                           self.align[idx], self.align_refs[idx])


class ModelState:
    def __init__(self, config: ModelConfig, registry: ParamRegistry):
        self.config = config
        self.registry = registry
        self.visual = BranchParams.from_registry(registry, "visual") if config.use_visual else None
        self.align = BranchParams.from_registry(registry, "align") if config.use_align else None
        self.fusion = [
            Layer(registry["fc.W1"], registry["fc.b1"], "relu"),
            Layer(registry["fc.W2"], registry["fc.b2"]),
        ]
        self.head = Layer(registry["reg.W"], registry["reg.b"])

    def fusion_width(self) -> int:
        return self.config.d_v * self.config.use_visual + self.config.d_s * self.config.use_align


def expected_shapes(config: ModelConfig) -> dict:
    shapes = {}
    for prefix, dim, on in (("visual", config.d_v, config.use_visual), ("align", config.d_s, config.use_align)):
        if not on:
            continue
        shapes[f"{prefix}.W"] = (dim, dim)
        for name in ("adapt_self", "adapt_ref"):
            shapes.update({f"{prefix}.{name}.W1": (dim, dim), f"{prefix}.{name}.b1": (dim,),
                           f"{prefix}.{name}.W2": (dim, dim), f"{prefix}.{name}.b2": (dim,)})
        shapes.update({f"{prefix}.gate_w": (2 * dim,), f"{prefix}.fuse.W": (dim, 2 * dim),
                       f"{prefix}.fuse.b": (dim,), f"{prefix}.ln.gain": (dim,), f"{prefix}.ln.bias": (dim,)})
    width = config.d_v * config.use_visual + config.d_s * config.use_align
    shapes.update({"fc.W1": (config.d_h, width), "fc.b1": (config.d_h,), "fc.W2": (config.d_h, config.d_h),
                   "fc.b2": (config.d_h,), "reg.W": (1, config.d_h), "reg.b": (1,)})
    return shapes


def init_model(config: ModelConfig) -> ModelState:
    rng = Rng(config.seed).child(0x1A17)
    reg = ParamRegistry()
    if config.use_visual:
        init_branch(reg, "visual", config.d_v, rng.child(1))
    if config.use_align:
        init_branch(reg, "align", config.d_s, rng.child(2))
    head_rng = rng.child(3)
    width = config.d_v * config.use_visual + config.d_s * config.use_align
    reg.add("fc.W1", glorot_uniform(head_rng, config.d_h, width))
    reg.add("fc.b1", np.zeros(config.d_h))
    reg.add("fc.W2", glorot_uniform(head_rng, config.d_h, config.d_h))
    reg.add("fc.b2", np.zeros(config.d_h))
    reg.add("reg.W", glorot_uniform(head_rng, 1, config.d_h))
    reg.add("reg.b", np.zeros(1))
    return ModelState(config, reg)


def forward(state: ModelState, inputs: ModelInputs, training: bool = False, rng=None):
    """Scores for every row of ``inputs`` as a (B,) tensor, plus diagnostics."""
    cfg = state.config
    parts, diag = [], {}
    for name, params, q, refs in (("visual", state.visual, inputs.visual, inputs.visual_refs),
                                  ("align", state.align, inputs.align, inputs.align_refs)):
        if params is None:
            continue
        out = branch_forward_batch(q, refs, params, cfg.ln_eps)
        parts.append(out.enhanced)
        diag[f"{name}_gate"] = out.gate.data
    h = concat(parts) if len(parts) > 1 else parts[0]
    h = mlp_forward(h, state.fusion, cfg.dropout, training, rng)
    raw = linear(h, state.head.W, state.head.b)
    score = softplus(reshape(raw, raw.shape[:-1]))
    diag["pre_activation"] = raw.data[..., 0]
    return score, diag


def _graph_refs(ds, graph, matrix):
    return [(rid, matrix[ds.index[rid]], w) for rid, w in graph.refs]


def build_inputs(ds, query_ids, graphs: dict, config: ModelConfig) -> ModelInputs:
    """Look up query features and precompute each branch's reference summary.

    A branch whose references are disabled gets an all-zero summary, the
    same as an empty reference set.
    """
    rows = ds.rows(query_ids)
    V, S = ds.visual_matrix, ds.align_matrix
    qv, qs = V[rows], S[rows]
    if qv.shape[1] != config.d_v or qs.shape[1] != config.d_s:
        raise DimensionError(f"dataset feature dims ({qv.shape[1]}, {qs.shape[1]}) "
                             f"do not match model dims ({config.d_v}, {config.d_s})")
    sv, ss = np.zeros_like(qv), np.zeros_like(qs)
    for j, qid in enumerate(query_ids):
        g = graphs.get(qid)
        if g is None or not len(g):
            continue
        if config.refs_visual and config.use_visual:
            sv[j] = reference_summary(qv[j], _graph_refs(ds, g, V), config.feature_mode, config.aggregation)
        if config.refs_align and config.use_align:
            ss[j] = reference_summary(qs[j], _graph_refs(ds, g, S), config.feature_mode, config.aggregation)
    return ModelInputs(list(query_ids), qv, sv, qs, ss)


def predict(sample, refs_v, refs_s, state: ModelState, training: bool = False, rng=None):
    """Score one sample. ``refs_v``/``refs_s`` are ``(ref_id, feature, weight)`` triples."""
    cfg = state.config
    qv = np.asarray(sample.visual_feat, dtype=float)
    qs = np.asarray(sample.align_feat, dtype=float)
    if qv.shape != (cfg.d_v,) or qs.shape != (cfg.d_s,):
        raise DimensionError(f"sample {sample.id!r} dims ({qv.shape}, {qs.shape}) vs model ({cfg.d_v}, {cfg.d_s})")
    sv = reference_summary(qv, refs_v if cfg.refs_visual else [], cfg.feature_mode, cfg.aggregation)
    ss = reference_summary(qs, refs_s if cfg.refs_align else [], cfg.feature_mode, cfg.aggregation)
    inputs = ModelInputs([sample.id], qv[None], sv[None], qs[None], ss[None])
    score, diag = forward(state, inputs, training, rng)
    return float(score.data[0]), {k: float(v[0]) for k, v in diag.items()}


# -- serialization -----------------------------------------------------------

def save(state: ModelState, path) -> None:
    cfg = json.dumps(state.config.to_dict(), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg)), cfg, struct.pack("<I", len(state.registry))]
    for name, t in state.registry.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<II", len(raw), t.data.ndim))
        chunks.append(raw)
        chunks.append(struct.pack(f"<{t.data.ndim}Q", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ModelFormatError(f"{self.path}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load(path, expected_config: ModelConfig | None = None) -> ModelState:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise ModelFormatError(f"{path}: bad magic, not a model file")
    version, cfg_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: model format version {version}, expected {FORMAT_VERSION}")
    try:
        cfg_dict = json.loads(r.take(cfg_len).decode("utf-8"))
        config = ModelConfig.from_dict(cfg_dict)
    except (ValueError, TypeError, UsageError) as exc:
        raise ModelFormatError(f"{path}: invalid embedded config ({exc})") from exc
    if expected_config is not None and expected_config != config:
        raise ConfigMismatchError(expected_config.diff(config))

    shapes = expected_shapes(config)
    (count,) = r.unpack("<I")
    if count != len(shapes):
        raise ShapeMismatchError(f"{path}: {count} parameter blocks, config implies {len(shapes)}")
    reg = ParamRegistry()
    for _ in range(count):
        name_len, ndim = r.unpack("<II")
        if ndim > 8:
            raise ModelFormatError(f"{path}: implausible rank {ndim}")
        name = r.take(name_len).decode("utf-8", errors="replace")
        shape = r.unpack(f"<{ndim}Q")
        if name not in shapes:
            raise ShapeMismatchError(f"{path}: unexpected parameter {name!r}")
        if tuple(shape) != shapes[name]:
            raise ShapeMismatchError(f"{path}: parameter {name!r} has shape {tuple(shape)}, "
                                     f"config implies {shapes[name]}")
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        if name in reg:
            raise ModelFormatError(f"{path}: duplicate parameter {name!r}")
        reg.add(name, data)
    if r.pos != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - r.pos} trailing bytes")
    missing = [n for n in shapes if n not in reg]
    if missing:
        raise ShapeMismatchError(f"{path}: missing parameters {missing}")
    ordered = ParamRegistry()
    for name in shapes:
        ordered.add(name, reg[name].data)
    return ModelState(config, ordered)


def with_config(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)
