"""Acceptance criteria at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line. Run on its own with
``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
Solvers run on shared fixed batches (common random numbers); the residual
check of criterion 4 is evaluated on the same batch each allocation was
solved on, and is collected while criteria 1-3 run.
"""

import math
import sys
import time

import numpy as np
import pytest

from capalloc import coherence
from capalloc.coherence import PropertyCase, check_comonotonic_additivity, check_positive_homogeneity
from capalloc.indicators import (
    ABSOLUTE,
    Allocation,
    PenaltyFn,
    estimate_indicator,
    estimate_subgradient,
    indicator_sum_identity,
    optimality_residual,
)
from capalloc.optimizer import grid_search_oracle, mirror_descent_kw, projected_sgd, solve_bivariate
from capalloc.risk_model import DependenceSpec, MarginalSpec, RiskModel, sample

pytestmark = pytest.mark.acceptance

E = MarginalSpec.exponential
N = 100_000
SEED = 2015

# allocations returned in criteria 1-3, checked by criterion 4
RETURNED: list[tuple[str, str, np.ndarray, Allocation]] = []


def report(capsys, criterion: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


def solve_and_keep(label, solver, table, u, kind, **kw):
    res = solver(table, u, kind, **kw)
    RETURNED.append((label, kind, table, res.alloc))
    return res


def test_criterion_1_exchangeable_equal_split(capsys):
    t0 = time.perf_counter()
    worst, lines, ok = 0.0, [], True
    for d in (2, 3, 5):
        table = sample(RiskModel((E(1.0),) * d), N, SEED + d).data
        for kind in "IJ":
            start = time.perf_counter()
            res = solve_and_keep(f"iid d={d}", mirror_descent_kw, table, float(d), kind, seed=SEED)
            elapsed = time.perf_counter() - start
            dev = float(np.max(np.abs(res.alloc.parts - 1.0)))
            worst = max(worst, dev)
            ok &= dev <= 0.02 and elapsed < 60
            lines.append(f"d={d}/{kind}:{dev:.4f}")
    report(capsys, "1", ok, f"max |u_k - 1| = {worst:.4f} <= 0.02 ({', '.join(lines)}; "
                            f"{time.perf_counter() - t0:.1f}s)")
    assert ok


def test_criterion_2_comonotonic_forcing(capsys):
    model = RiskModel((E(1.0), E(0.5)), DependenceSpec("comonotonic"))
    table = sample(model, N, SEED).data
    assert np.allclose(table[:, 1], 2 * table[:, 0], rtol=1e-12)
    start = time.perf_counter()
    parts = {}
    for name, solver in (("mirror_kw", mirror_descent_kw), ("projected_sgd", projected_sgd)):
        parts[name] = solve_and_keep("comonotone", solver, table, 3.0, "I", seed=SEED).alloc.parts
    parts["bivariate_bisection"] = solve_and_keep("comonotone", solve_bivariate, table, 3.0, "I").alloc.parts
    rel = {k: float(np.max(np.abs(v - [1.0, 2.0]) / [1.0, 2.0])) for k, v in parts.items()}
    merged = check_comonotonic_additivity(PropertyCase("comonotonic_additivity", model, 3.0, n=N, seed=SEED))
    elapsed = time.perf_counter() - start
    ok = max(rel.values()) <= 0.02 and merged.passed and merged.observed_deviation <= 0.02 and elapsed < 60
    report(capsys, "2", ok, f"relative error to (1,2): "
                            + ", ".join(f"{k} {v:.4f}" for k, v in rel.items())
                            + f"; merged deviation {merged.observed_deviation:.2e} of u ({elapsed:.1f}s)")
    assert ok


ORACLE_SCENARIOS = {
    "exp2-exp1/I": (RiskModel((E(2.0), E(1.0))), 2.0, "I"),
    "exp2-exp1/J": (RiskModel((E(2.0), E(1.0))), 2.0, "J"),
    "gauss-exp-lognormal/I": (RiskModel((E(1.0), MarginalSpec.lognormal(-0.2, 0.6)),
                                        DependenceSpec.gaussian([[1, 0.4], [0.4, 1]])), 2.0, "I"),
    "clayton-d3/I": (RiskModel((E(1.0), E(1.5), E(0.8)), DependenceSpec.clayton(1.5)), 3.0, "I"),
    "gauss-d3/J": (RiskModel((E(1.0), E(0.7), MarginalSpec.lognormal(0.0, 0.6)),
                             DependenceSpec.gaussian([[1, 0.3, 0.2], [0.3, 1, 0.2], [0.2, 0.2, 1]])), 3.0, "J"),
    "pareto-lognormal-exp/I": (RiskModel((MarginalSpec.pareto(3.0, 1.0), MarginalSpec.lognormal(0.0, 0.5),
                                          E(1.0))), 4.5, "I"),
}


def test_criterion_3_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    ok, worst, lines = True, 0.0, []
    for i, (name, (model, u, kind)) in enumerate(ORACLE_SCENARIOS.items()):
        table = sample(model, N, SEED + 100 + i).data
        step = 0.01 * u
        oracle = grid_search_oracle(table, u, kind, resolution=step)
        solvers = [("mirror_kw", mirror_descent_kw, {"seed": SEED}),
                   ("projected_sgd", projected_sgd, {"seed": SEED})]
        if model.d == 2:
            solvers.append(("bivariate_bisection", solve_bivariate, {}))
        for sname, solver, kw in solvers:
            res = solve_and_keep(name, solver, table, u, kind, **kw)
            gap = float(np.max(np.abs(res.alloc.parts - oracle.alloc.parts))) / step
            worst = max(worst, gap)
            ok &= gap <= 1.0 + 1e-9
            if gap > 1.0:
                lines.append(f"{name}/{sname} off by {gap:.2f} steps")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    report(capsys, "3", ok, f"6 scenarios, max distance to grid oracle {worst:.2f} resolution steps "
                            f"({elapsed:.1f}s){'; ' + '; '.join(lines) if lines else ''}")
    assert ok


def test_criterion_4_optimality_residual(capsys):
    if not RETURNED:
        pytest.skip("criteria 1-3 did not run in this session")
    worst, failures = 0.0, []
    for label, kind, table, alloc in RETURNED:
        res = optimality_residual(kind, table, alloc)
        ratio = res.max_spread / res.std_error if res.std_error > 0 else (0.0 if res.max_spread == 0 else math.inf)
        worst = max(worst, ratio)
        if res.max_spread > 3 * res.std_error:
            failures.append(f"{label}/{kind}: spread {res.max_spread:.2e} vs 3 SE {3 * res.std_error:.2e}")
    ok = not failures
    report(capsys, "4", ok, f"{len(RETURNED)} allocations, max spread/SE = {worst:.2f} <= 3"
                            + ("; " + "; ".join(failures) if failures else ""))
    assert ok


def _accumulation_bound(value: float, n: int) -> float:
    # pairwise summation error grows like log2(n) units in the last place
    return (math.ceil(math.log2(n)) + 2) * math.ulp(value)


def test_criterion_5_exact_identities(capsys):
    scenarios = {name: (model, u) for name, (model, u, _) in ORACLE_SCENARIOS.items()}
    scenarios["iid d=3"] = (RiskModel((E(1.0),) * 3), 3.0)
    rng = np.random.default_rng(SEED)
    sum_gap, homog_dev, convex_violations, triples = 0.0, 0.0, 0, 0
    ok = True
    for i, (name, (model, u)) in enumerate(scenarios.items()):
        table = sample(model, 20_000, SEED + i).data
        d = model.d
        for penalty in (ABSOLUTE, PenaltyFn.power(2.0)):
            alloc = Allocation.from_fractions(rng.dirichlet(np.ones(d)), u)
            lhs, rhs, ties = indicator_sum_identity(table, alloc, penalty)
            gap = abs(lhs - rhs)
            sum_gap = max(sum_gap, gap / math.ulp(rhs))
            ok &= ties == 0 and gap <= _accumulation_bound(rhs, table.shape[0])
        for solver in ("mirror_kw", "grid_oracle", "bivariate_bisection", "projected_sgd"):
            if solver == "bivariate_bisection" and d != 2:
                continue
            for alpha in (0.5, 2.0):
                case = PropertyCase("positive_homogeneity", model, u, solver=solver, n=20_000, seed=SEED,
                                    params={"alpha": alpha, "resolution": 0.02})
                rep = check_positive_homogeneity(case)
                homog_dev = max(homog_dev, rep.observed_deviation)
                ok &= rep.observed_deviation <= math.ulp(1.0)
        for kind in "IJ":
            for _ in range(100):
                v = rng.dirichlet(np.ones(d)) * u
                w = rng.dirichlet(np.ones(d)) * u
                lam = rng.uniform()
                mid = lam * v + (1 - lam) * w
                f = lambda x: estimate_indicator(kind, table, x).value
                lhs, rhs = f(mid), lam * f(v) + (1 - lam) * f(w)
                triples += 1
                if lhs > rhs + _accumulation_bound(max(rhs, 1.0), table.shape[0]):
                    convex_violations += 1
    ok &= convex_violations == 0
    report(capsys, "5", ok, f"sum identity max gap {sum_gap:.1f} ulp; CRN homogeneity max deviation "
                            f"{homog_dev:.1e}; convexity violations {convex_violations}/{triples}")
    assert ok


def test_criterion_6_gradient_consistency(capsys):
    model = RiskModel((E(1.0), E(0.7), MarginalSpec.lognormal(0.0, 0.6)))
    table = sample(model, N, SEED).data
    worst, ok = 0.0, True
    h = 0.02
    for parts in ((0.5, 2.0, 1.5), (2.0, 0.6, 1.4), (1.0, 1.0, 2.0)):
        alloc = Allocation(parts, 4.0)
        for penalty in (ABSOLUTE, PenaltyFn.power(2.0)):
            for kind in "IJ":
                g = estimate_subgradient(kind, table, alloc, penalty)
                for i, j in ((0, 1), (0, 2), (1, 2)):
                    e = np.zeros(3)
                    e[i], e[j] = h, -h
                    fd = (estimate_indicator(kind, table, alloc.parts + e, penalty).value
                          - estimate_indicator(kind, table, alloc.parts - e, penalty).value) / (2 * h)
                    rel = abs(fd - (g[i] - g[j])) / abs(g[i] - g[j])
                    worst = max(worst, rel)
                    ok &= rel <= 1e-2
    report(capsys, "6", ok, f"max relative error {worst:.2e} <= 1e-2 (absolute and power p=2, I and J)")
    assert ok


def test_criterion_7_coherence_suite(capsys):
    t0 = time.perf_counter()
    suite = coherence.default_suite()
    reports = coherence.run_suite(suite)
    elapsed = time.perf_counter() - t0
    gating = [r for r in reports if r.case.gating]
    failed = [r for r in gating if r.status == "FAIL"]
    skipped = [r for r in gating if r.skipped]
    evidence = [r for r in reports if not r.case.gating]
    ok = len(gating) >= 20 and not failed and elapsed < 600
    ev = ", ".join(f"{r.case.name} deviation {r.observed_deviation:.2e}" for r in evidence)
    report(capsys, "7", ok, f"suite v{coherence.SUITE_VERSION}: {len(gating)} gating cases, "
                            f"{len(failed)} failed, {len(skipped)} skipped ({elapsed:.1f}s); evidence: {ev}"
                            + ("; failed: " + ", ".join(r.case.name for r in failed) if failed else ""))
    assert ok


def test_criterion_8_monotonicity(capsys):
    model = RiskModel((E(2.0), E(1.0)))
    table = sample(model, N, SEED).data
    tolerance = 0.02  # solver tolerance, in units of u
    margins = {}
    start = time.perf_counter()
    for name, solver, kw in (("mirror_kw", mirror_descent_kw, {"seed": SEED}),
                             ("bivariate_bisection", solve_bivariate, {})):
        parts = solver(table, 2.0, "I", **kw).alloc.parts
        margins[name] = (parts[1] - parts[0]) / 2.0
    elapsed = time.perf_counter() - start
    ok = all(m > tolerance for m in margins.values()) and elapsed < 60
    report(capsys, "8", ok, "margin (u_2 - u_1)/u: " + ", ".join(f"{k} {v:.3f}" for k, v in margins.items())
                            + f" > {tolerance}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
