"""Monte Carlo estimators of the ruin-severity indicators I and J.

For an allocation ``v`` of total capital ``u`` the two indicators are

    I(v) = sum_k E[ g(v_k - X_k) 1{X_k > v_k} 1{S <= u} ]
    J(v) = sum_k E[ g(v_k - X_k) 1{X_k > v_k} 1{S >= u} ]

with ``S = X_1 + ... + X_d``.  The group event does not depend on ``v``, so on
a fixed batch both indicators are separable convex functions of the shares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .risk_model import SampleBatch

__all__ = [
    "PenaltyFn",
    "ABSOLUTE",
    "Allocation",
    "IndicatorEstimate",
    "OptimalityResidual",
    "SumIdentity",
    "estimate_indicator",
    "estimate_subgradient",
    "optimality_residual",
    "indicator_sum_identity",
    "as_table",
    "check_kind",
]

KINDS = ("I", "J")


def check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"indicator kind must be 'I' or 'J', got {kind!r}")
    return kind


@dataclass(frozen=True)
class PenaltyFn:
    """Penalty applied to a negative reserve ``x <= 0``.

    ``absolute`` is ``g(x) = |x|``; ``power`` is ``g(x) = |x|**p`` with
    ``p >= 1``.  The derivative convention is the derivative of ``x -> g(x)``
    on ``x < 0``, so ``g'(x) = -1`` for the absolute penalty.
    """

    kind: str = "absolute"
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("absolute", "power"):
            raise ValueError(f"penalty kind must be 'absolute' or 'power', got {self.kind!r}")
        p = 1.0 if self.kind == "absolute" else float(self.p)
        if not p >= 1.0:
            raise ValueError(f"power penalty needs p >= 1, got {self.p}")
        object.__setattr__(self, "p", p)

    @classmethod
    def power(cls, p: float) -> "PenaltyFn":
        return cls("power", p)

    @property
    def one_homogeneous(self) -> bool:
        return self.p == 1.0

    def value(self, x) -> np.ndarray:
        a = np.abs(np.asarray(x, dtype=float))
        return a if self.p == 1.0 else a**self.p

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.p == 1.0:
            return np.where(x < 0, -1.0, 0.0)
        return np.where(x < 0, -self.p * np.abs(x) ** (self.p - 1.0), 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p}


ABSOLUTE = PenaltyFn()


@dataclass(frozen=True, eq=False)
class Allocation:
    """Shares ``u_1..u_d`` of the capital ``total``."""

    parts: np.ndarray
    total: float

    def __post_init__(self):
        parts = np.array(self.parts, dtype=float).reshape(-1)
        total = float(self.total)
        if not total >= 0 or not math.isfinite(total):
            raise ValueError(f"total capital must be finite and >= 0, got {self.total}")
        if parts.size == 0:
            raise ValueError("allocation needs at least one share")
        if np.any(parts < 0) or np.any(parts > total * (1 + 1e-12)):
            raise ValueError("every share must lie in [0, total]")
        if not math.isclose(math.fsum(parts), total, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"shares sum to {math.fsum(parts)!r}, expected {total!r}")
        parts.setflags(write=False)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "total", total)

    @classmethod
    def from_fractions(cls, fractions, total: float) -> "Allocation":
        return cls(close_sum(np.asarray(fractions, dtype=float) * total, total), total)

    @property
    def d(self) -> int:
        return self.parts.size

    @property
    def fractions(self) -> np.ndarray:
        if self.total == 0:
            raise ZeroDivisionError("fractions are undefined for zero capital")
        return self.parts / self.total

    def __iter__(self):
        return iter(self.parts.tolist())

    def __len__(self):
        return self.parts.size

    def __repr__(self):
        return f"Allocation(parts={self.parts.tolist()}, total={self.total!r})"


def close_sum(v: np.ndarray, total: float) -> np.ndarray:
    """Clip at zero and make the shares sum to ``total`` under ``math.fsum``.

    The largest share absorbs the residue, computed in exact rational
    arithmetic. If that lands on a rounding tie, the next share is nudged by
    one ulp and the residue recomputed.
    """
    v = np.clip(np.asarray(v, dtype=float), 0.0, None)
    if v.size == 0 or math.fsum(v) == total:
        return v
    order = [int(k) for k in np.argsort(-v, kind="stable")]
    target = Fraction(total)
    for attempt in range(2 * v.size):
        k = order[0]
        rest = sum((Fraction(float(x)) for i, x in enumerate(v) if i != k), Fraction(0))
        v[k] = max(float(target - rest), 0.0)
        if math.fsum(v) == total:
            break
        if v.size == 1:
            break
        if v[k] == 0.0:
            # others already exceed the total: shrink the next largest share
            order = order[1:] + order[:1]
            continue
        j = order[1 + attempt % (v.size - 1)]
        if v[j] > 0.0:
            v[j] = np.nextafter(v[j], 0.0)
    return v


@dataclass(frozen=True)
class IndicatorEstimate:
    kind: str
    value: float
    std_error: float
    n: int

    def to_record(self, alloc: Allocation | None = None, penalty: PenaltyFn | None = None,
                  model_digest: str | None = None, seed: int | None = None) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "std_error": self.std_error,
            "n": self.n,
            "allocation": None if alloc is None else alloc.parts.tolist(),
            "penalty": None if penalty is None else penalty.to_dict(),
            "model_digest": model_digest,
            "seed": seed,
        }


def as_table(batch) -> np.ndarray:
    """Loss table from a :class:`SampleBatch` or anything array-like."""
    data = batch.data if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    if data.ndim != 2:
        raise ValueError(f"loss table must be 2-d, got shape {data.shape}")
    if data.shape[0] == 0:
        raise ValueError("empty batch")
    return data


def _as_parts(alloc, d: int) -> tuple[np.ndarray, float]:
    if isinstance(alloc, Allocation):
        parts, total = alloc.parts, alloc.total
    else:
        parts = np.asarray(alloc, dtype=float)
        total = float(parts.sum())
    if parts.size != d:
        raise ValueError(f"allocation has {parts.size} shares but the batch has {d} lines")
    return parts, total


def group_event(totals: np.ndarray, u: float, kind: str) -> np.ndarray:
    return totals <= u if kind == "I" else totals >= u


def row_penalties(data: np.ndarray, parts: np.ndarray, penalty: PenaltyFn) -> np.ndarray:
    """Per-row, per-line ``g(v_k - X_k) 1{X_k > v_k}``."""
    excess = np.maximum(data - parts, 0.0)
    return excess if penalty.p == 1.0 else excess**penalty.p


def _mean_se(rows: np.ndarray) -> tuple[float, float]:
    n = rows.shape[0]
    mean = float(rows.mean())
    se = float(rows.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def estimate_indicator(kind: str, batch, alloc, penalty: PenaltyFn = ABSOLUTE) -> IndicatorEstimate:
    """Sample mean and standard error of the indicator on ``batch``."""
    check_kind(kind)
    data = as_table(batch)
    parts, u = _as_parts(alloc, data.shape[1])
    event = group_event(data.sum(axis=1), u, kind)
    rows = row_penalties(data, parts, penalty).sum(axis=1) * event
    value, se = _mean_se(rows)
    return IndicatorEstimate(kind, value, se, data.shape[0])


def estimate_subgradient(kind: str, batch, alloc, penalty: PenaltyFn = ABSOLUTE) -> np.ndarray:
    """Coordinate-varying part of the indicator gradient.

    Component ``k`` is the sample mean of ``g'(v_k - X_k) 1{X_k > v_k}`` on the
    group event.  The true gradient adds a term that is the same for every
    coordinate (a density of S at u); it cancels on the simplex and is left
    out.  With the absolute penalty component ``k`` equals ``-P(X_k > v_k, event)``.
    """
    check_kind(kind)
    data = as_table(batch)
    parts, u = _as_parts(alloc, data.shape[1])
    event = group_event(data.sum(axis=1), u, kind)
    return _subgradient(data[event], parts, penalty, data.shape[0])


def _subgradient(hit: np.ndarray, parts: np.ndarray, penalty: PenaltyFn, n: int) -> np.ndarray:
    if penalty.p == 1.0:
        return -(hit > parts).sum(axis=0) / n
    excess = np.maximum(hit - parts, 0.0)
    return -penalty.p * (excess ** (penalty.p - 1.0) * (hit > parts)).sum(axis=0) / n


class OptimalityResidual(NamedTuple):
    probabilities: np.ndarray
    max_spread: float
    std_error: float


def optimality_residual(kind: str, batch, alloc, penalty: PenaltyFn = ABSOLUTE) -> OptimalityResidual:
    """Empirical ``P(X_i > v_i, event)`` per line and their max-min spread.

    At an interior optimum under the absolute penalty these probabilities are
    equal.  For a power penalty the per-line terms are the magnitudes of the
    subgradient, ``E[-g'(v_i - X_i) 1{X_i > v_i} 1{event}]``, which must be
    equal for the same reason.  ``std_error`` is the standard error of the
    difference between the two extreme coordinates, computed row-wise so
    overlapping events are handled.
    """
    check_kind(kind)
    data = as_table(batch)
    parts, u = _as_parts(alloc, data.shape[1])
    event = group_event(data.sum(axis=1), u, kind)
    if penalty.p == 1.0:
        terms = ((data > parts) & event[:, None]).astype(float)
    else:
        terms = -penalty.derivative(parts - data) * event[:, None]
    n = data.shape[0]
    probs = terms.sum(axis=0) / n
    hi, lo = int(np.argmax(probs)), int(np.argmin(probs))
    spread = float(probs[hi] - probs[lo])
    if hi == lo or n < 2:
        se = 0.0
    else:
        se = float((terms[:, hi] - terms[:, lo]).std(ddof=1) / math.sqrt(n))
    return OptimalityResidual(probs, spread, se)


class SumIdentity(NamedTuple):
    lhs: float
    rhs: float
    ties: int


def indicator_sum_identity(batch, alloc, penalty: PenaltyFn = ABSOLUTE) -> SumIdentity:
    """I + J against the unconditioned penalty mean, rows with ``S == u`` excluded."""
    data = as_table(batch)
    parts, u = _as_parts(alloc, data.shape[1])
    totals = data.sum(axis=1)
    tie = totals == u
    kept = data[~tie]
    if kept.shape[0] == 0:
        return SumIdentity(0.0, 0.0, int(tie.sum()))
    lhs = (estimate_indicator("I", kept, Allocation(parts, u), penalty).value
           + estimate_indicator("J", kept, Allocation(parts, u), penalty).value)
    rhs = float(row_penalties(kept, parts, penalty).sum(axis=1).mean())
    return SumIdentity(lhs, rhs, int(tie.sum()))
