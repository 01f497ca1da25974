"""Command line front end: ``capalloc allocate|coherence|compare``.

Exit codes: 0 success, 1 error (nothing written), 2 allocation returned with
a boundary or residual flag, 3 at least one gating coherence check failed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__, coherence, optimizer
from .indicators import estimate_indicator
from .reporting import csv_text, json_text, write_atomic
from .risk_model import sample
from .scenario import Scenario, load_scenario

__all__ = ["RunConfig", "main", "run_allocate", "run_coherence", "run_compare", "solve_scenario"]

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED, EXIT_FAILED = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    scenario_path: str | None
    output_dir: str
    seed: int | None = None
    overrides: dict[str, Any] = field(default_factory=dict)
    threads: int | None = None
    solver: str | None = None
    resolution: float | None = None
    properties: tuple[str, ...] | None = None
    samples: int | None = None


def _scenario(cfg: RunConfig) -> Scenario:
    overrides = dict(cfg.overrides)
    if cfg.seed is not None:
        overrides["seed"] = cfg.seed
    if cfg.solver is not None:
        overrides["solver.name"] = cfg.solver
    if cfg.resolution is not None:
        overrides["solver.resolution"] = cfg.resolution
    if cfg.samples is not None:
        overrides["samples"] = cfg.samples
    return load_scenario(cfg.scenario_path, overrides)


def solve_scenario(sc: Scenario, table: np.ndarray, kind: str | None = None):
    """Run the scenario's solver on a fixed loss table."""
    kind = sc.indicator if kind is None else kind
    name = sc.solver
    solver = optimizer.SOLVERS[name]
    if name in ("mirror_kw", "projected_sgd"):
        return solver(table, sc.capital, kind, sc.penalty, sc.config, seed=sc.seed)
    if name == "grid_oracle":
        res = None if sc.resolution is None else sc.resolution * sc.capital
        return solver(table, sc.capital, kind, sc.penalty, resolution=res)
    if sc.penalty.p != 1.0:
        raise ValueError("bivariate_bisection supports the absolute penalty only")
    return solver(table, sc.capital, kind)


def _names(sc: Scenario) -> list[str]:
    return list(sc.line_names) or [f"line{k + 1}" for k in range(sc.model.d)]


def run_allocate(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    batch = sample(sc.model, sc.samples, sc.seed)
    result = solve_scenario(sc, batch.data)
    u = sc.capital
    rows = [(name, share, share / u if u else 0.0) for name, share in zip(_names(sc), result.alloc.parts)]
    diagnostics = {
        "solver": result.solver,
        "seed": sc.seed,
        "samples": sc.samples,
        "rejected_rows": batch.rejected,
        "model_digest": sc.model.digest,
        "capital": u,
        "indicator": {"kind": sc.indicator, "value": result.indicator.value,
                      "std_error": result.indicator.std_error, "n": result.indicator.n},
        "penalty": sc.penalty.to_dict(),
        "residual_spread": result.residual_spread,
        "residual_std_error": result.residual_std_error,
        "flags": list(result.flags),
        "solver_config": result.config,
        "version": __version__,
    }
    write_atomic(cfg.output_dir, {
        "allocation.csv": csv_text(["line", "share", "fraction"], rows),
        "trace.csv": result.trace_csv(),
        "diagnostics.json": json_text(diagnostics),
    })
    flagged = "boundary" in result.flags or "residual_above_tolerance" in result.flags
    return EXIT_FLAGGED if flagged else EXIT_OK


def _scenario_cases(sc: Scenario) -> list[coherence.PropertyCase]:
    """One case per property on the scenario's own model and capital."""
    d, u = sc.model.d, sc.capital
    params = {
        "full_allocation": {},
        "symmetry": {"pair": (0, 1)},
        "riskless": {"c": 0.25 * u},
        "comonotonic_additivity": {"pair": (0, 1)},
        "positive_homogeneity": {"alpha": 2.0},
        "translation_invariance": {"shifts": [0.1 * u / d] * d},
        "continuity": {"epsilons": (0.1, 0.05, 0.01), "line": 0},
        "monotonicity": {"pair": (0, 1)},
        "subadditivity_empirical": {"subset": (0, 1) if d > 2 else (0,)},
    }
    solver = sc.solver
    extra = {} if sc.resolution is None else {"resolution": sc.resolution}
    return [
        coherence.PropertyCase(prop, sc.model, u, sc.indicator, sc.penalty, solver,
                               seed=sc.seed, n=sc.samples, params={**p, **extra},
                               name=f"{prop}/scenario", config=sc.config)
        for prop, p in params.items()
    ]


def run_coherence(cfg: RunConfig) -> int:
    if cfg.scenario_path is None:
        kwargs = {}
        if cfg.seed is not None:
            kwargs["seed"] = cfg.seed
        if cfg.samples is not None:
            kwargs["n"] = cfg.samples
        cases = coherence.default_suite(**kwargs)
        if cfg.solver is not None:
            cases = [replace(c, solver=cfg.solver) for c in cases]
        if cfg.resolution is not None:
            for c in cases:
                c.params = {**c.params, "resolution": cfg.resolution}
    else:
        cases = _scenario_cases(_scenario(cfg))
    if cfg.properties:
        unknown = set(cfg.properties) - set(coherence.PROPERTIES)
        if unknown:
            raise ValueError(f"unknown properties {sorted(unknown)}")
    threads = cfg.threads or os.cpu_count() or 1
    reports = coherence.run_suite(cases, threads=threads, properties=cfg.properties)
    header = ["property", "model_digest", "kind", "deviation", "threshold", "passed", "skipped_reason"]
    rows = [[r.to_row()[h] for h in header] for r in reports]
    failed = [r for r in reports if r.status == "FAIL"]
    bundle = {
        "suite_version": coherence.SUITE_VERSION,
        "passed": not failed,
        "failures": [r.case.name for r in failed],
        "reports": [r.to_json() for r in reports],
    }
    write_atomic(cfg.output_dir, {"coherence.csv": csv_text(header, rows),
                                  "coherence.json": json_text(bundle)})
    for r in failed:
        print(f"FAIL {r.case.name}: deviation {r.observed_deviation!r} > {r.threshold!r}", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


def run_compare(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    batch = sample(sc.model, sc.samples, sc.seed)
    table = batch.data
    opt_i = solve_scenario(sc, table, "I")
    opt_j = solve_scenario(sc, table, "J")
    allocations = {
        "optimal_I": opt_i.alloc,
        "optimal_J": opt_j.alloc,
        "proportional": optimizer.proportional_baseline(table, sc.capital),
    }
    alloc_rows = [
        [name] + [allocations[m].parts[k] for m in allocations]
        for k, name in enumerate(_names(sc))
    ]
    scores = {m: {kind: estimate_indicator(kind, table, a, sc.penalty) for kind in ("I", "J")}
              for m, a in allocations.items()}
    score_rows = [[m, s["I"].value, s["I"].std_error, s["J"].value, s["J"].std_error]
                  for m, s in scores.items()]
    bundle = {
        "seed": sc.seed,
        "samples": sc.samples,
        "model_digest": sc.model.digest,
        "capital": sc.capital,
        "penalty": sc.penalty.to_dict(),
        "solver": sc.solver,
        "flags": {"optimal_I": list(opt_i.flags), "optimal_J": list(opt_j.flags)},
        "allocations": {m: a.parts for m, a in allocations.items()},
        "indicators": {m: {k: {"value": e.value, "std_error": e.std_error} for k, e in s.items()}
                       for m, s in scores.items()},
    }
    write_atomic(cfg.output_dir, {
        "compare_allocations.csv": csv_text(["line", *allocations], alloc_rows),
        "compare_indicators.csv": csv_text(["method", "I", "I_std_error", "J", "J_std_error"], score_rows),
        "compare.json": json_text(bundle),
    })
    flagged = any(f in ("boundary", "residual_above_tolerance") for r in (opt_i, opt_j) for f in r.flags)
    return EXIT_FLAGGED if flagged else EXIT_OK


COMMANDS = {"allocate": run_allocate, "coherence": run_coherence, "compare": run_compare}


def _override(text: str) -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, yaml.safe_load(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capalloc", description="Optimal capital allocation by ruin-severity indicators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("allocate", "solve one scenario and write allocation.csv, trace.csv, diagnostics.json"),
        ("coherence", "run the coherence property suite (default suite without --scenario)"),
        ("compare", "compare optimal-I, optimal-J and proportional allocations on one batch"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=name != "coherence", metavar="PATH")
        p.add_argument("--out", required=True, metavar="DIR")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
        p.add_argument("--solver", choices=sorted(optimizer.SOLVERS))
        p.add_argument("--resolution", type=float, help="grid oracle step as a fraction of capital")
        p.add_argument("--samples", type=int, help="rows in the shared loss batch")
        p.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                       metavar="KEY=VALUE", help="override a scenario key, e.g. solver.iterations=2000")
        if name == "coherence":
            p.add_argument("--property", dest="properties", action="append",
                           choices=coherence.PROPERTIES, help="run only this property (repeatable)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        command=args.command,
        scenario_path=args.scenario,
        output_dir=args.out,
        seed=args.seed,
        overrides=dict(args.overrides),
        threads=args.threads,
        solver=args.solver,
        resolution=args.resolution,
        properties=tuple(getattr(args, "properties", None) or ()) or None,
        samples=args.samples,
    )
    if cfg.threads is not None and cfg.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[cfg.command](cfg)
    except (ValueError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
