"""Agreement statistics between predicted scores and opinion scores."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInputError


def _pair(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DegenerateInputError(f"need at least 2 samples, got {x.size}")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = xc @ xc, yc @ yc
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("pearson: constant input")
    return float(np.clip(xc @ yc / math.sqrt(sxx * syy), -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks (ties share the mean rank)."""
    x, y = _pair(x, y)
    try:
        return pearson(rankdata(x), rankdata(y))
    except DegenerateInputError:
        raise DegenerateInputError("spearman: all values tied") from None


def kendall(x, y) -> float:
    """Kendall tau-b from exact pair counts."""
    x, y = _pair(x, y)
    n = x.size
    iu = np.triu_indices(n, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    prod = dx * dy
    concordant = int(np.count_nonzero(prod > 0))
    discordant = int(np.count_nonzero(prod < 0))
    ties_x = int(np.count_nonzero(dx == 0))
    ties_y = int(np.count_nonzero(dy == 0))
    return tau_b(concordant, discordant, ties_x, ties_y, n)


def tau_b(concordant: int, discordant: int, ties_x: int, ties_y: int, n: int) -> float:
    """``(C - D) / sqrt((P - Tx)(P - Ty))`` with ``P = n(n-1)/2``; ``Tx``, ``Ty`` count pairs tied in x, y."""
    pairs = n * (n - 1) // 2
    denom = (pairs - ties_x) * (pairs - ties_y)
    if denom == 0:
        raise DegenerateInputError("kendall: every pair is tied in x or in y")
    return (concordant - discordant) / math.sqrt(denom)


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape or pred.size < 1:
        raise ValueError(f"rmse needs equal, non-empty inputs ({pred.size} vs {target.size})")
    d = pred - target
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EvalResult:
    srcc: float | None
    plcc: float | None
    krcc: float | None
    rmse: float
    n: int
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def score_all(pred, mos, strict: bool = False) -> EvalResult:
    """All four metrics. Undefined correlations are ``None`` (or raise when ``strict``)."""
    pred = np.asarray(pred, dtype=float)
    mos = np.asarray(mos, dtype=float)
    out, errors = {}, {}
    for name, fn in (("srcc", spearman), ("plcc", pearson), ("krcc", kendall)):
        try:
            out[name] = fn(pred, mos)
        except DegenerateInputError as exc:
            if strict:
                raise DegenerateInputError(f"{name} over {pred.size} samples: {exc}") from exc
            out[name] = None
            errors[name] = str(exc)
    return EvalResult(rmse=rmse(pred, mos), n=int(pred.size), errors=errors, **out)
