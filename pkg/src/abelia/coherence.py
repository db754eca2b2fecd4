"""Consultation gate: accept a domain response only if the state change it
causes is smaller than the disagreement that motivated asking.

    accept  iff  KL(after || before) < KL(before || domain)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .dims import Dimension, parse_dimension
from .unify import UnifyError, unify


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class DiagGaussian:
    mean: tuple[float, ...]
    variance: tuple[float, ...]

    def __init__(self, mean: Sequence[float], variance: Sequence[float]):
        mean = tuple(float(x) for x in mean)
        variance = tuple(float(x) for x in variance)
        if len(mean) != len(variance):
            raise DistributionError(f"mean has {len(mean)} entries, variance {len(variance)}")
        if not all(v > 0 and math.isfinite(v) for v in variance):
            raise DistributionError("variances must be positive and finite")
        if not all(math.isfinite(m) for m in mean):
            raise DistributionError("means must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    def __len__(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class Categorical:
    probs: tuple[float, ...]

    def __init__(self, probs: Sequence[float]):
        probs = tuple(float(p) for p in probs)
        if not probs or any(p < 0 or not math.isfinite(p) for p in probs):
            raise DistributionError("probabilities must be finite and nonnegative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise DistributionError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)


def kl_gaussian_diag(p: DiagGaussian, q: DiagGaussian) -> float:
    if len(p) != len(q):
        raise DistributionError(f"dimension mismatch: {len(p)} vs {len(q)}")
    terms = []
    for pm, pv, qm, qv in zip(p.mean, p.variance, q.mean, q.variance):
        terms.append(0.5 * (math.log(qv / pv) + (pv + (pm - qm) ** 2) / qv - 1.0))
    # each term is >= 0 mathematically; clamp rounding noise
    return max(0.0, math.fsum(terms))


def kl_categorical(p: Categorical, q: Categorical) -> float:
    """``sum p log(p/q)`` in nats; ``math.inf`` when p has mass where q has none."""
    if len(p) != len(q):
        raise DistributionError(f"dimension mismatch: {len(p)} vs {len(q)}")
    terms = []
    for pi, qi in zip(p.probs, q.probs):
        if pi == 0:
            continue
        if qi == 0:
            return math.inf
        terms.append(pi * math.log(pi / qi))
    return max(0.0, math.fsum(terms))


def kl(p, q) -> float:
    if isinstance(p, DiagGaussian) and isinstance(q, DiagGaussian):
        return kl_gaussian_diag(p, q)
    if isinstance(p, Categorical) and isinstance(q, Categorical):
        return kl_categorical(p, q)
    raise DistributionError(f"cannot compare {type(p).__name__} with {type(q).__name__}")


@dataclass(frozen=True)
class GateDecision:
    accept: bool
    state_change: float  # KL(after || before)
    disagreement: float  # KL(before || domain)

    @property
    def decision(self) -> str:
        return "accept" if self.accept else "reject"

    def to_json(self) -> dict:
        def num(x: float):
            return "inf" if math.isinf(x) else x

        return {"decision": self.decision, "state_change": num(self.state_change),
                "disagreement": num(self.disagreement)}


def accept_consultation(before, after, domain) -> GateDecision:
    left = kl(after, before)
    right = kl(before, domain)
    if math.isinf(right):
        # unbounded disagreement licenses any finite update
        return GateDecision(not math.isinf(left), left, right)
    return GateDecision(left < right, left, right)


def distribution_from_json(d: dict):
    family = d.get("family")
    params = d.get("params", {})
    if family in ("gaussian", "diag_gaussian"):
        return DiagGaussian(params["mean"], params["variance"])
    if family == "categorical":
        return Categorical(params["probs"])
    raise DistributionError(f"unknown family {family!r}")


# ---------------------------------------------------------- typed responses


@dataclass(frozen=True)
class TypedResponse:
    value: float
    dim: Dimension
    confidence: tuple[float, float]
    certificate: str

    @classmethod
    def from_json(cls, d: dict, basis=None) -> TypedResponse:
        dim = d["dim"]
        if isinstance(dim, str):
            dim = parse_dimension(dim, basis) if basis is not None else parse_dimension(dim)
        return cls(float(d["value"]), dim, tuple(d["confidence"]), d.get("certificate", ""))


CHECKS = ("containment", "dimension", "certificate")


def validate_typed_response(r: TypedResponse, query_dim: Dimension) -> list[str]:
    """Names of the failed checks; an empty list means the response is accepted."""
    failed = []
    lo, hi = r.confidence
    if not (lo <= r.value <= hi):
        failed.append("containment")
    try:
        unify(r.dim, query_dim, "response")
    except UnifyError:
        failed.append("dimension")
    if not isinstance(r.certificate, str) or not r.certificate.strip():
        failed.append("certificate")
    return failed


__all__ = [
    "CHECKS",
    "Categorical",
    "DiagGaussian",
    "DistributionError",
    "GateDecision",
    "TypedResponse",
    "accept_consultation",
    "distribution_from_json",
    "kl",
    "kl_categorical",
    "kl_gaussian_diag",
    "validate_typed_response",
]
