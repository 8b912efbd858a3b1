"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class GradCheckReport:
    h: float
    tol: float
    max_rel_err: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_err.values())

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "tol": self.tol,
            "passed": self.passed,
            "worst": self.worst,
            "max_rel_err": dict(self.max_rel_err),
        }


def _value(f, name) -> float:
    v = float(np.asarray(f().data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"non-finite objective while perturbing {name}")
    return v


def grad_check(f, registry, h: float = 1e-4, tol: float = 1e-4, names=None, atol: float = 1e-6) -> GradCheckReport:
    """Compare the backward pass of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the registry tensors on every call.
    The error for a parameter is ``max|a - n| / max(max|a|, max|n|, atol)``:
    entrywise error relative to that parameter's gradient scale. ``atol``
    keeps near-zero gradients (saturated gates) from being judged on
    finite-difference roundoff alone.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    names = list(registry.names() if names is None else names)
    registry.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericError("non-finite objective at the base point")
    out.backward()
    report = GradCheckReport(h=h, tol=tol)
    for name in names:
        p = registry[name]
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _value(f, name)
            flat[i] = orig - h
            down = _value(f, name)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * h)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), atol)
        report.max_rel_err[name] = float(np.abs(analytic - numeric).max(initial=0.0) / scale)
    registry.zero_grad()
    return report
