"""Objectives, optimizer, schedule, training loop and the repeated-split protocol."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .dataio import TEST, TRAIN, Dataset, random_split
from .errors import DataError, NumericError, UsageError
from .metrics import EvalResult, score_all
from .model import ModelConfig, ModelInputs, ModelState, build_inputs, forward, init_model
from .numkit import Rng, Tensor, add, grad_check, mul
from .numkit.tensor import as_tensor, make_node
from .retrieval import ReferencePool, check_pool_excludes_test, retrieve_all, retrieve_variant

log = logging.getLogger(__name__)

PLCC_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-5
    weight_decay: float = 0.05
    gamma: float = 0.3
    warmup_frac: float = 0.1
    seed: int = 0
    repeats: int = 5
    train_frac: float = 0.8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise UsageError(f"batch_size must be >= 2 (PLCC needs variance), got {self.batch_size}")
        if self.gamma < 0:
            raise UsageError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise UsageError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.epochs < 1 or self.repeats < 1:
            raise UsageError("epochs and repeats must be >= 1")
        if not 0.0 < self.train_frac < 1.0:
            raise UsageError(f"train_frac must be in (0, 1), got {self.train_frac}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


# -- objectives ---------------------------------------------------------------

def loss_plcc(pred, mos) -> Tensor:
    """``(1 - r) / 2`` with ``r`` the Pearson correlation of ``pred`` and ``mos``.

    Both spreads get ``PLCC_EPS`` added under the square root, so a constant
    batch yields r = 0 (loss 0.5) instead of a division by zero.
    """
    pred = as_tensor(pred)
    s = np.asarray(mos, dtype=float)
    y = pred.data
    if y.shape != s.shape or y.ndim != 1 or y.size < 2:
        raise DataError(f"loss_plcc needs two equal vectors of length >= 2, got {y.shape} and {s.shape}")
    yc, sc = y - y.mean(), s - s.mean()
    a = math.sqrt(yc @ yc + PLCC_EPS)
    b = math.sqrt(sc @ sc + PLCC_EPS)
    num = yc @ sc
    r = num / (a * b)

    def backward(g):
        dr = sc / (a * b) - num * yc / (a ** 3 * b)
        return (-0.5 * float(g) * dr,)

    return make_node(np.asarray(0.5 * (1.0 - r)), (pred,), backward)


def loss_rank(pred, mos) -> Tensor:
    """Pairwise hinge: ``mean_ij max(0, |s_i - s_j| - sign(s_i - s_j) (y_i - y_j))`` over all m^2 pairs."""
    pred = as_tensor(pred)
    s = np.asarray(mos, dtype=float)
    y = pred.data
    if y.shape != s.shape or y.ndim != 1:
        raise DataError(f"loss_rank needs two equal vectors, got {y.shape} and {s.shape}")
    m = y.size
    ds = s[:, None] - s[None, :]
    e = np.sign(ds)
    terms = np.abs(ds) - e * (y[:, None] - y[None, :])
    active = terms > 0
    value = np.where(active, terms, 0.0).sum() / (m * m)

    def backward(g):
        w = np.where(active, e, 0.0)
        # term_ij depends on y_i with slope -e_ij and on y_j with slope +e_ij
        grad = (-w.sum(axis=1) + w.sum(axis=0)) / (m * m)
        return (float(g) * grad,)

    return make_node(np.asarray(value), (pred,), backward)


def loss_total(pred, mos, gamma: float = 0.3) -> Tensor:
    return add(loss_plcc(pred, mos), mul(loss_rank(pred, mos), gamma))


# -- optimizer ---------------------------------------------------------------

class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, registry, weight_decay=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
        self.registry = registry
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in registry.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in registry.items()}

    def step(self, lr: float) -> None:
        for name, p in self.registry.items():
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.registry.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.registry.zero_grad()


def adamw_step(optimizer: AdamW, lr_t: float) -> None:
    optimizer.step(lr_t)


def lr_schedule(step: float, total_steps: int, base_lr: float, warmup_frac: float = 0.1) -> float:
    """Linear warm-up from 0 to ``base_lr``, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_frac * total_steps
    if step < warm:
        return base_lr * step / warm
    span = total_steps - warm
    if span <= 0:
        return base_lr
    progress = (step - warm) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- loop ----------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    steps: int = 0
    dropped_tail_batches: int = 0
    degenerate_batches: int = 0
    eval: dict | None = None
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


def batches(n: int, m: int, rng) -> tuple:
    """Shuffled index batches of size ``m``; a trailing batch of one is dropped."""
    order = rng.permutation(n)
    out = [order[i:i + m] for i in range(0, n, m)]
    dropped = 0
    if out and len(out[-1]) < 2:
        out.pop()
        dropped = 1
    return out, dropped


def _batch_inputs(ds, ids, pool, mcfg):
    graphs = {q: retrieve_variant("batch", ds[q], pool, batch_ids=ids) for q in ids}
    return build_inputs(ds, ids, graphs, mcfg)


def prepare_inputs(ds: Dataset, query_ids, pool: ReferencePool, mcfg: ModelConfig, seed: int = 0):
    """Retrieve and summarize references for ``query_ids`` (not for batch retrieval)."""
    rng = Rng(seed).child(0xAE7) if mcfg.retrieval == "random" else None
    graphs = retrieve_all(ds, list(query_ids), pool, mcfg.tau, mcfg.retrieval,
                          k=mcfg.random_k, rng=rng, max_refs=mcfg.max_refs)
    return build_inputs(ds, list(query_ids), graphs, mcfg), graphs


def train(ds: Dataset, mcfg: ModelConfig, tcfg: TrainConfig, state: ModelState | None = None):
    """Fit the heads on cached features of the training split."""
    t0 = time.perf_counter()
    train_ids = ds.split_ids(TRAIN)
    m = tcfg.batch_size
    if len(train_ids) < 2 * m:
        raise DataError(f"training split has {len(train_ids)} samples, need at least {2 * m}")
    pool = ReferencePool.from_dataset(ds, TRAIN)
    check_pool_excludes_test(pool, ds)
    state = state or init_model(mcfg)
    opt = AdamW(state.registry, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)

    fixed = None
    if mcfg.retrieval != "batch":
        fixed, _ = prepare_inputs(ds, train_ids, pool, mcfg, tcfg.seed)

    rng = Rng(tcfg.seed)
    n = len(train_ids)
    per_epoch = len(batches(n, m, rng.child(0))[0])
    total_steps = per_epoch * tcfg.epochs
    report = TrainReport(seeds={"train": tcfg.seed, "model": mcfg.seed})
    mos_all = ds.mos[ds.rows(train_ids)]
    if np.isnan(mos_all).any():
        raise DataError("training samples without mos")

    step = 0
    for epoch in range(tcfg.epochs):
        groups, dropped = batches(n, m, rng.child(1, epoch))
        report.dropped_tail_batches += dropped
        sums = np.zeros(3)
        for b, idx in enumerate(groups):
            if fixed is not None:
                inputs = fixed.take(idx)
            else:
                inputs = _batch_inputs(ds, [train_ids[i] for i in idx], pool, mcfg)
            mos = mos_all[idx]
            if np.ptp(mos) == 0.0:
                report.degenerate_batches += 1
            score, _ = forward(state, inputs, training=True, rng=rng.child(2, epoch, b))
            lp, lr_ = loss_plcc(score, mos), loss_rank(score, mos)
            loss = add(lp, mul(lr_, tcfg.gamma))
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step(lr_schedule(step, total_steps, tcfg.lr, tcfg.warmup_frac))
            step += 1
            sums += (float(lp.data), float(lr_.data), float(loss.data))
        mean = sums / max(len(groups), 1)
        report.epochs.append({"epoch": epoch + 1, "loss_plcc": float(mean[0]), "loss_rank": float(mean[1]),
                              "loss": float(mean[2])})
        log.debug("epoch %d loss %.5f", epoch + 1, mean[2])
    report.steps = step
    report.wall_time = time.perf_counter() - t0
    return state, report


def predict_split(state: ModelState, ds: Dataset, query_ids, pool: ReferencePool | None = None,
                  batch_size: int = 8, seed: int = 0) -> np.ndarray:
    """Eval-mode scores for ``query_ids`` with references from the training pool."""
    pool = pool or ReferencePool.from_dataset(ds, TRAIN)
    query_ids = list(query_ids)
    if state.config.retrieval == "batch":
        out = []
        for i in range(0, len(query_ids), batch_size):
            inputs = _batch_inputs(ds, query_ids[i:i + batch_size], pool, state.config)
            out.append(forward(state, inputs, training=False)[0].data)
        return np.concatenate(out) if out else np.zeros(0)
    inputs, _ = prepare_inputs(ds, query_ids, pool, state.config, seed)
    return forward(state, inputs, training=False)[0].data


def evaluate(state: ModelState, ds: Dataset, pool: ReferencePool | None = None, split: str = TEST,
             batch_size: int = 8, seed: int = 0, strict: bool = False):
    """Score a split against its MOS; returns ``(EvalResult, predictions)``."""
    ids = ds.split_ids(split)
    if not ids:
        raise DataError(f"split {split!r} is empty")
    mos = ds.mos[ds.rows(ids)]
    if np.isnan(mos).any():
        raise DataError(f"split {split!r} has samples without mos")
    pred = predict_split(state, ds, ids, pool, batch_size, seed)
    return score_all(pred, mos, strict=strict), pred


def gradient_suite(n_batches: int = 20, batch_size: int = 4, dim: int = 8, seed: int = 0,
                   h: float = 1e-4, tol: float = 1e-4, gamma: float = 0.3) -> list:
    """Finite-difference check of ``loss_total`` through the whole model on random batches.

    Parameters are jittered away from their initial values first so the
    gate and normalization gradients are exercised at generic points.
    """
    reports = []
    for b in range(n_batches):
        r = Rng(seed).child(0x6C, b)
        cfg = ModelConfig(d_v=dim, d_s=dim, d_h=dim, dropout=0.0, seed=int(r.integers(0, 2**31)))
        state = init_model(cfg)
        for _, p in state.registry.items():
            p.data += r.normal(0.0, 0.1, size=p.shape)
        shape = (batch_size, dim)
        inputs = ModelInputs([f"q{i}" for i in range(batch_size)], r.normal(size=shape), r.normal(size=shape),
                             r.normal(size=shape), r.normal(size=shape))
        mos = r.uniform(0.0, 100.0, size=batch_size)
        reports.append(grad_check(lambda: loss_total(forward(state, inputs)[0], mos, gamma),
                                  state.registry, h=h, tol=tol))
    return reports


# -- protocol ---------------------------------------------------------------------

METRICS = ("srcc", "plcc", "krcc", "rmse")


@dataclass
class ProtocolReport:
    runs: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def to_dict(self, include_timing: bool = False) -> dict:
        runs = []
        for r in self.runs:
            r = dict(r)
            r["train"] = r["train"].to_dict(include_timing) if isinstance(r["train"], TrainReport) else r["train"]
            runs.append(r)
        return {"runs": runs, "mean": self.mean, "std": self.std, "failures": self.failures}

    def summary(self, metric: str) -> str:
        return f"{self.mean[metric]:.3f}±{self.std[metric]:.3f}"


def repeat_seeds(master_seed: int, repeat: int) -> dict:
    r = Rng(master_seed).child(0x9E9, repeat)
    return {"split": int(r.integers(0, 2**31)), "model": int(r.integers(0, 2**31)),
            "train": int(r.integers(0, 2**31))}


def run_protocol(ds: Dataset, mcfg: ModelConfig, tcfg: TrainConfig, keep_states: bool = False):
    """Train and test on ``tcfg.repeats`` fresh random splits; aggregate mean and std."""
    report = ProtocolReport()
    states = []
    for rep in range(tcfg.repeats):
        seeds = repeat_seeds(tcfg.seed, rep)
        split = random_split(ds, tcfg.train_frac, seeds["split"])
        state, trep = train(split, replace(mcfg, seed=seeds["model"]), replace(tcfg, seed=seeds["train"]))
        result, _ = evaluate(state, split, batch_size=tcfg.batch_size, seed=seeds["train"])
        trep.eval = result.to_dict()
        report.runs.append({"repeat": rep, "seeds": seeds, "train": trep, "test": result.to_dict()})
        if result.errors:
            report.failures.append({"repeat": rep, "errors": result.errors})
        if keep_states:
            states.append(state)
    for k in METRICS:
        vals = [r["test"][k] for r in report.runs if r["test"][k] is not None]
        report.mean[k] = float(np.mean(vals)) if vals else None
        report.std[k] = float(np.std(vals)) if vals else None
    return (report, states) if keep_states else report


__all__ = [
    "AdamW",
    "EvalResult",
    "ProtocolReport",
    "TrainConfig",
    "TrainReport",
    "adamw_step",
    "evaluate",
    "gradient_suite",
    "loss_plcc",
    "loss_rank",
    "loss_total",
    "lr_schedule",
    "predict_split",
    "run_protocol",
    "train",
]
