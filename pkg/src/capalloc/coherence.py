"""Executable checks of the coherence properties of the optimal allocation.

Each check solves two or more related allocation problems on common random
numbers and compares the solutions with what the property predicts. The base
batch is drawn once from ``case.model`` with ``case.seed``; every transformed
problem (merged lines, scaled or shifted losses, an added deterministic line)
is built from those same rows.

Checks whose premise is not met by the case (non-exchangeable pair,
non-homogeneous penalty, no stochastic dominance, ...) come back SKIPPED with
the reason; they never pass silently.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import optimizer
from .indicators import ABSOLUTE, Allocation, PenaltyFn, check_kind
from .optimizer import AllocationResult, OptimizerConfig
from .risk_model import (
    DependenceSpec,
    LossModel,
    MarginalSpec,
    RiskModel,
    add_deterministic_line,
    merge_lines,
    scale_lines,
    shift_lines,
)

__all__ = [
    "PROPERTIES",
    "SUITE_VERSION",
    "PropertyCase",
    "PropertyReport",
    "check_full_allocation",
    "check_symmetry",
    "check_riskless",
    "check_comonotonic_additivity",
    "check_positive_homogeneity",
    "check_translation_invariance",
    "check_continuity",
    "check_monotonicity",
    "check_subadditivity_empirical",
    "run_case",
    "run_suite",
    "default_suite",
]

SUITE_VERSION = "1"

PROPERTIES = (
    "full_allocation",
    "symmetry",
    "riskless",
    "subadditivity_empirical",
    "comonotonic_additivity",
    "positive_homogeneity",
    "translation_invariance",
    "continuity",
    "monotonicity",
)

# properties reported as evidence only; they never gate a suite
EVIDENCE_ONLY = frozenset({"subadditivity_empirical"})


@dataclass
class PropertyCase:
    """One property check: the model, the problem and the solver to use.

    ``params`` carries the property-specific arguments (``c``, ``pair``,
    ``alpha``, ``shifts``, ``epsilons``, ``line``, ``subset``, ``mode``).
    Deviations are measured in units of ``u`` and compared with
    ``tolerance`` unless the check is an exact identity.
    """

    property: str
    model: LossModel
    u: float
    kind: str = "I"
    penalty: PenaltyFn = ABSOLUTE
    solver: str = "mirror_kw"
    tolerance: float = 0.02
    seed: int = 0
    n: int = 100_000
    params: dict[str, Any] = field(default_factory=dict)
    name: str = ""
    config: OptimizerConfig | None = None

    def __post_init__(self):
        if self.property not in PROPERTIES:
            raise ValueError(f"unknown property {self.property!r}")
        check_kind(self.kind)
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.u >= 0:
            raise ValueError("capital must be >= 0")
        if not self.name:
            self.name = self.property

    @property
    def gating(self) -> bool:
        return self.property not in EVIDENCE_ONLY


@dataclass
class PropertyReport:
    case: PropertyCase
    observed_deviation: float
    threshold: float
    details: dict[str, Any] = field(default_factory=dict)
    skipped_reason: str | None = None

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None

    @property
    def passed(self) -> bool:
        return not self.skipped and self.observed_deviation <= self.threshold

    @property
    def status(self) -> str:
        if self.skipped:
            return "SKIPPED"
        if not self.case.gating:
            return "EVIDENCE"
        return "PASS" if self.passed else "FAIL"

    def to_row(self) -> dict[str, Any]:
        return {
            "property": self.case.property,
            "model_digest": self.case.model.digest,
            "kind": self.case.kind,
            "deviation": self.observed_deviation,
            "threshold": self.threshold,
            "passed": self.passed,
            "skipped_reason": self.skipped_reason or "",
        }

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.case.name,
            **self.to_row(),
            "status": self.status,
            "gating": self.case.gating,
            "u": self.case.u,
            "solver": self.case.solver,
            "seed": self.case.seed,
            "n": self.case.n,
            "tolerance": self.case.tolerance,
            "penalty": self.case.penalty.to_dict(),
            "params": _jsonable(self.case.params),
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# solving helpers
# ---------------------------------------------------------------------------


def _exact(u: float) -> float:
    """Threshold for identities that hold up to rounding."""
    return 4 * math.ulp(max(abs(u), 1.0))


def _solve(case: PropertyCase, table: np.ndarray, u: float) -> AllocationResult | Allocation:
    d = table.shape[1]
    if d == 1 or u == 0:
        return Allocation(np.full(d, u / d) if d == 1 else np.zeros(d), u)
    solver = optimizer.SOLVERS[case.solver]
    if case.solver in ("mirror_kw", "projected_sgd"):
        return solver(table, u, case.kind, case.penalty, case.config, seed=case.seed)
    if case.solver == "grid_oracle":
        res = case.params.get("resolution", 0.005)
        return solver(table, u, case.kind, case.penalty, resolution=res * u)
    if case.penalty.p != 1.0:
        raise ValueError("the bivariate solver needs the absolute penalty")
    return solver(table, u, case.kind)


def _parts(res) -> np.ndarray:
    return np.asarray(res.parts if isinstance(res, Allocation) else res.alloc.parts)


def _diag(res) -> dict[str, Any]:
    if isinstance(res, Allocation):
        return {"allocation": res.parts.tolist()}
    return {
        "allocation": res.alloc.parts.tolist(),
        "residual_spread": res.residual_spread,
        "residual_std_error": res.residual_std_error,
        "indicator": res.indicator.value,
        "indicator_std_error": res.indicator.std_error,
        "flags": list(res.flags),
    }


def _base_table(case: PropertyCase, seed: int | None = None) -> np.ndarray:
    return case.model.sample(case.n, case.seed if seed is None else seed).data


def _skip(case: PropertyCase, reason: str, **details) -> PropertyReport:
    return PropertyReport(case, math.nan, case.tolerance, details, skipped_reason=reason)


def _support_flags(model: LossModel, u: float) -> list[bool] | None:
    if not isinstance(model, RiskModel):
        return None
    return [m.lower_support - a <= 0 and m.upper_support - a >= u
            for m, a in zip(model.marginals, model.shift)]


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def check_full_allocation(case: PropertyCase) -> PropertyReport:
    res = _solve(case, _base_table(case), case.u)
    parts = _parts(res)
    dev = abs(math.fsum(parts) - case.u)
    return PropertyReport(case, dev, math.ulp(case.u) if case.u else 0.0, _diag(res))


def check_symmetry(case: PropertyCase) -> PropertyReport:
    i, j = case.params.get("pair", (0, 1))
    m = case.model
    if not isinstance(m, RiskModel) or not m.pair_exchangeable(i, j):
        return _skip(case, f"lines {i} and {j} are not exchangeable in the model")
    res = _solve(case, _base_table(case), case.u)
    parts = _parts(res)
    dev = abs(parts[i] - parts[j]) / case.u
    return PropertyReport(case, dev, case.tolerance,
                          {**_diag(res), "support_covers_0_u": _support_flags(m, case.u)})


def check_riskless(case: PropertyCase, c: float | None = None) -> PropertyReport:
    """Deterministic line ``c`` inserted in front of the risky lines."""
    c = case.params.get("c", 0.0) if c is None else c
    if not case.penalty.one_homogeneous:
        return _skip(case, "riskless allocation needs a 1-homogeneous penalty")
    if c < 0:
        return _skip(case, "negative deterministic amounts are untested")
    if not c < case.u:
        return _skip(case, "the deterministic amount must be below the capital")
    table = _base_table(case)
    extended = add_deterministic_line(case.model, c).map_table(table)
    full = _parts(_solve(case, extended, case.u))
    rest = _parts(_solve(case, table, case.u - c))
    dev = max(abs(full[0] - c), float(np.max(np.abs(full[1:] - rest)))) / case.u
    return PropertyReport(case, dev, case.tolerance,
                          {"with_deterministic": full.tolist(), "risky_only": rest.tolist(), "c": c})


def _comonotonic_pair(model: LossModel, i: int, j: int) -> bool:
    if not isinstance(model, RiskModel):
        return False
    if model.marginals[i].is_deterministic or model.marginals[j].is_deterministic:
        return True
    dep = model.dependence
    if dep.kind == "comonotonic":
        return True
    if dep.kind == "comonotonic_groups":
        return any(i in g and j in g for g in dep.groups)
    return False


def check_comonotonic_additivity(case: PropertyCase, pair: tuple[int, int] | None = None) -> PropertyReport:
    i, j = sorted(case.params.get("pair", (0, 1)) if pair is None else pair)
    if case.penalty.p != 1.0 or case.penalty.kind != "absolute":
        return _skip(case, "comonotonic additivity is stated for the absolute penalty")
    if not _comonotonic_pair(case.model, i, j):
        return _skip(case, f"lines {i} and {j} are not comonotonic in the model")
    table = _base_table(case)
    full = _parts(_solve(case, table, case.u))
    if case.model.d == 2:
        # merging the only two lines leaves the singleton simplex
        merged = np.array([case.u])
    else:
        merged_model = merge_lines(case.model, (i, j))
        merged = _parts(_solve(case, merged_model.map_table(table), case.u))
    others = [k for k in range(case.model.d) if k not in (i, j)]
    merged_others = [k for k in range(merged.size) if k != i]
    dev = abs(merged[i] - (full[i] + full[j]))
    if others:
        dev = max(dev, float(np.max(np.abs(merged[merged_others] - full[others]))))
    return PropertyReport(case, dev / case.u, case.tolerance,
                          {"unmerged": full.tolist(), "merged": merged.tolist(), "pair": [i, j]})


def check_positive_homogeneity(case: PropertyCase, alpha: float | None = None) -> PropertyReport:
    """Solve at ``alpha * u`` on ``alpha * X``.

    ``mode="crn"`` reuses the base rows (an exact identity for power-of-two
    ``alpha``); ``mode="independent"`` draws the scaled problem from a fresh
    seed and uses the statistical tolerance.
    """
    alpha = float(case.params.get("alpha", 2.0) if alpha is None else alpha)
    mode = case.params.get("mode", "crn")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if not case.penalty.one_homogeneous:
        return _skip(case, "positive homogeneity needs a 1-homogeneous penalty")
    table = _base_table(case)
    scaled_model = scale_lines(case.model, [alpha] * case.model.d)
    if mode == "crn":
        scaled_table = scaled_model.map_table(table)
    else:
        scaled_table = scaled_model.sample(case.n, case.seed + 1).data
    base = _parts(_solve(case, table, case.u))
    scaled = _parts(_solve(case, scaled_table, alpha * case.u))
    dev = float(np.max(np.abs(scaled - alpha * base))) / (alpha * case.u)
    exact_identity = mode == "crn" and math.frexp(alpha)[0] == 0.5
    threshold = _exact(1.0) if exact_identity else case.tolerance
    return PropertyReport(case, dev, threshold,
                          {"base": base.tolist(), "scaled": scaled.tolist(), "alpha": alpha, "mode": mode})


def check_translation_invariance(case: PropertyCase, shifts=None) -> PropertyReport:
    """Allocation of ``u`` on ``X - a`` against allocation of ``u + sum(a)`` on ``X``."""
    a = np.asarray(case.params.get("shifts", [0.0] * case.model.d) if shifts is None else shifts,
                   dtype=float)
    if a.size != case.model.d:
        raise ValueError("one shift per line is required")
    table = _base_table(case)
    big_u = case.u + math.fsum(a)
    if not big_u >= 0:
        return _skip(case, "the unshifted problem has negative capital")
    unshifted = _parts(_solve(case, table, big_u))
    if np.any(unshifted < a - case.tolerance * case.u):
        return _skip(case, "the unshifted optimum gives some line less than its shift, "
                           "so the shifted optimum is not an interior translate",
                     unshifted=unshifted.tolist())
    shifted = _parts(_solve(case, shift_lines(case.model, a).map_table(table), case.u))
    dev = float(np.max(np.abs(shifted - (unshifted - a)))) / case.u
    threshold = _exact(1.0) if not np.any(a) else case.tolerance
    nonneg = bool(np.all(table.min(axis=0) - a >= 0))
    return PropertyReport(case, dev, threshold,
                          {"shifted": shifted.tolist(), "unshifted": unshifted.tolist(),
                           "shifts": a.tolist(), "shifted_losses_nonnegative": nonneg})


def check_continuity(case: PropertyCase, epsilons=None) -> PropertyReport:
    """Distances ``|A(X with (1+eps) X_i) - A(X)| / u`` along decreasing ``eps``.

    The deviation is the larger of the distance at the smallest ``eps`` and
    the largest increase along the sequence.
    """
    eps = list(case.params.get("epsilons", (0.1, 0.05, 0.01)) if epsilons is None else epsilons)
    line = case.params.get("line", 0)
    if any(e < 0 for e in eps) or any(b > a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be a non-increasing sequence of non-negative numbers")
    table = _base_table(case)
    base = _parts(_solve(case, table, case.u))
    dists, allocs = [], []
    for e in eps:
        factors = [1.0] * case.model.d
        factors[line] = 1.0 + e
        sol = _parts(_solve(case, scale_lines(case.model, factors).map_table(table), case.u))
        allocs.append(sol.tolist())
        dists.append(float(np.max(np.abs(sol - base))) / case.u)
    rise = max([0.0] + [b - a for a, b in zip(dists, dists[1:])])
    dev = max(dists[-1], rise)
    threshold = _exact(1.0) if eps[-1] == 0 and len(eps) == 1 else case.tolerance
    return PropertyReport(case, dev, threshold,
                          {"epsilons": eps, "distances": dists, "allocations": allocs,
                           "base": base.tolist(), "largest_increase": rise})


def _dominated(model: LossModel, i: int, j: int) -> bool:
    """X_i <=_st X_j, checked on a dense grid of the two marginals."""
    if not isinstance(model, RiskModel):
        return False
    mi, mj = model.marginals[i], model.marginals[j]
    ai, aj = model.shift[i], model.shift[j]
    probs = np.linspace(1e-4, 1 - 1e-4, 2001)
    pts = np.concatenate([mi.ppf(probs) - ai, mj.ppf(probs) - aj, np.linspace(0, 50, 2001)])
    pts = np.concatenate([pts, np.nextafter(pts, np.inf), np.nextafter(pts, -np.inf)])
    return bool(np.all(mi.survival(pts + ai) <= mj.survival(pts + aj) + 1e-12))


def check_monotonicity(case: PropertyCase, pair: tuple[int, int] | None = None) -> PropertyReport:
    """``X_i <=_st X_j`` should give ``u_i <= u_j``."""
    i, j = case.params.get("pair", (0, 1)) if pair is None else pair
    if not _dominated(case.model, i, j):
        return _skip(case, f"line {j} does not stochastically dominate line {i}")
    res = _solve(case, _base_table(case), case.u)
    parts = _parts(res)
    dev = max(0.0, parts[i] - parts[j]) / case.u
    return PropertyReport(case, dev, case.tolerance,
                          {**_diag(res), "margin": (parts[j] - parts[i]) / case.u})


def check_subadditivity_empirical(case: PropertyCase, subset=None) -> PropertyReport:
    """Evidence only: merged share against the sum of the separate shares."""
    M = sorted(case.params.get("subset", (0, 1)) if subset is None else subset)
    if not M or len(M) >= case.model.d:
        raise ValueError("subset must be a proper non-empty subset of the lines")
    table = _base_table(case)
    full = _parts(_solve(case, table, case.u))
    if len(M) == 1:
        return PropertyReport(case, 0.0, case.tolerance, {"unmerged": full.tolist(), "subset": M})
    merged = _parts(_solve(case, merge_lines(case.model, M).map_table(table), case.u))
    excess = merged[M[0]] - full[M].sum()
    return PropertyReport(case, max(0.0, excess) / case.u, case.tolerance,
                          {"unmerged": full.tolist(), "merged": merged.tolist(), "subset": M,
                           "signed_excess": excess / case.u})


CHECKS: dict[str, Callable[[PropertyCase], PropertyReport]] = {
    "full_allocation": check_full_allocation,
    "symmetry": check_symmetry,
    "riskless": check_riskless,
    "comonotonic_additivity": check_comonotonic_additivity,
    "positive_homogeneity": check_positive_homogeneity,
    "translation_invariance": check_translation_invariance,
    "continuity": check_continuity,
    "monotonicity": check_monotonicity,
    "subadditivity_empirical": check_subadditivity_empirical,
}


def run_case(case: PropertyCase) -> PropertyReport:
    return CHECKS[case.property](case)


def run_suite(cases, threads: int = 1, properties=None) -> list[PropertyReport]:
    """Run ``cases`` (optionally filtered by property name), preserving order."""
    cases = [c for c in cases if properties is None or c.property in properties]
    if threads <= 1:
        return [run_case(c) for c in cases]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_case, cases))


def suite_passed(reports) -> bool:
    return all(r.passed for r in reports if r.case.gating and not r.skipped)


# ---------------------------------------------------------------------------
# default suite
# ---------------------------------------------------------------------------


def default_suite(n: int = 100_000, seed: int = 20150301) -> list[PropertyCase]:
    """The versioned scenario families of the coherence suite."""
    E = MarginalSpec.exponential
    iid2 = RiskModel((E(1.0), E(1.0)))
    iid3 = RiskModel((E(1.0),) * 3)
    e2e1 = RiskModel((E(2.0), E(1.0)))
    pair_exch = RiskModel((E(1.0), E(1.0), MarginalSpec.lognormal(0.0, 0.5)),
                          DependenceSpec.gaussian([[1, 0.3, 0.2], [0.3, 1, 0.2], [0.2, 0.2, 1]]))
    clayton3 = RiskModel((E(1.0),) * 3, DependenceSpec.clayton(1.5))
    como_tail = RiskModel((E(1.0), E(1.0), E(1.0)), DependenceSpec.comonotonic_groups([[0], [1, 2]]))
    como_double = RiskModel((E(1.0), E(0.5), E(1.0)), DependenceSpec.comonotonic_groups([[0, 1], [2]]))
    gauss2 = RiskModel((E(1.0), MarginalSpec.lognormal(-0.2, 0.6)), DependenceSpec.gaussian([[1, 0.4], [0.4, 1]]))
    det_vs_exp = RiskModel((MarginalSpec.deterministic(1.0), E(1.0)), shift=(0.0, -1.0))
    indep3 = RiskModel((E(1.0), E(1.5), E(0.8)))

    C = PropertyCase
    cases = [
        C("full_allocation", clayton3, 3.0, "I", name="full_allocation/mirror/clayton3"),
        C("full_allocation", e2e1, 2.0, "J", solver="grid_oracle", name="full_allocation/grid/exp2-exp1"),
        C("symmetry", iid3, 3.0, "I", name="symmetry/mirror/iid3/I"),
        C("symmetry", clayton3, 3.0, "J", params={"pair": (0, 2)}, name="symmetry/mirror/clayton3/J"),
        C("symmetry", pair_exch, 3.0, "I", solver="grid_oracle", name="symmetry/grid/pair-exchangeable"),
        C("symmetry", iid2, 2.0, "I", solver="bivariate_bisection", name="symmetry/bisection/iid2"),
        C("riskless", iid2, 3.0, "I", params={"c": 1.0}, name="riskless/mirror/c=1"),
        C("riskless", iid2, 3.0, "J", solver="grid_oracle", params={"c": 0.0}, name="riskless/grid/c=0"),
        C("riskless", iid2, 3.0, "I", solver="grid_oracle", params={"c": 2.7}, name="riskless/grid/c=0.9u"),
        C("comonotonic_additivity", como_tail, 3.0, "I", params={"pair": (1, 2)},
          name="comonotonic_additivity/mirror/equal-marginals"),
        C("comonotonic_additivity", como_double, 3.0, "I", solver="grid_oracle", params={"pair": (0, 1)},
          name="comonotonic_additivity/grid/x2=2x1-in-d3"),
        C("comonotonic_additivity", como_tail, 3.0, "J", params={"pair": (1, 2)},
          name="comonotonic_additivity/mirror/equal-marginals/J"),
        C("positive_homogeneity", clayton3, 3.0, "I", params={"alpha": 2.0},
          name="positive_homogeneity/mirror/crn/alpha=2"),
        C("positive_homogeneity", gauss2, 2.0, "J", solver="grid_oracle", params={"alpha": 0.5},
          name="positive_homogeneity/grid/crn/alpha=0.5"),
        C("positive_homogeneity", e2e1, 2.0, "I", solver="bivariate_bisection",
          params={"alpha": 0.5, "mode": "independent"}, name="positive_homogeneity/bisection/independent"),
        C("translation_invariance", iid2, 2.0, "I", solver="grid_oracle", params={"shifts": (0.5, 0.5)},
          name="translation_invariance/grid/(0.5,0.5)"),
        C("translation_invariance", e2e1, 2.0, "I", solver="bivariate_bisection", params={"shifts": (0.3, 0.0)},
          name="translation_invariance/bisection/(0.3,0)"),
        C("translation_invariance", clayton3, 3.0, "J", params={"shifts": (0.0, 0.0, 0.0)},
          name="translation_invariance/mirror/zero"),
        C("continuity", e2e1, 2.0, "I", solver="bivariate_bisection", params={"epsilons": (0.1, 0.05, 0.01)},
          name="continuity/bisection/exp2-exp1"),
        C("continuity", iid3, 3.0, "I", solver="grid_oracle", params={"epsilons": (0.1, 0.05, 0.01), "line": 2},
          name="continuity/grid/iid3"),
        C("continuity", gauss2, 2.0, "J", params={"epsilons": (0.1, 0.05, 0.01), "line": 1},
          name="continuity/mirror/gauss2/J"),
        C("monotonicity", e2e1, 2.0, "I", solver="bivariate_bisection", name="monotonicity/bisection/exp2-exp1/I"),
        C("monotonicity", e2e1, 2.0, "J", name="monotonicity/mirror/exp2-exp1/J"),
        C("monotonicity", indep3, 3.0, "I", params={"pair": (0, 2)}, name="monotonicity/mirror/indep3"),
        C("monotonicity", det_vs_exp, 3.0, "I", solver="grid_oracle", name="monotonicity/grid/det-vs-shifted-exp"),
        C("subadditivity_empirical", como_tail, 3.0, "I", params={"subset": (1, 2)},
          name="subadditivity_empirical/mirror/comonotonic"),
        C("subadditivity_empirical", indep3, 3.0, "I", solver="grid_oracle", params={"subset": (0, 1)},
          name="subadditivity_empirical/grid/independent-pair"),
    ]
    for c in cases:
        c.n = n
        c.seed = seed
    return cases
