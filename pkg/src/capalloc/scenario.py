"""Scenario files: one YAML document describing a single allocation experiment.

Example::

    lines:
      - {name: motor, family: exponential, params: {rate: 1.0}}
      - {name: property, family: lognormal, params: {mu: 0.0, sigma: 0.5}, shift: 0.0}
    dependence: {kind: gaussian, params: {correlation: [[1, 0.3], [0.3, 1]]}}
    capital: 2.0
    indicator: I
    penalty: {kind: absolute}
    solver: {name: mirror_kw, iterations: 4000, batch: 256, step_a: 0.5,
             step_alpha: 0.75, averaging: 0.5}
    samples: 100000
    seed: 7

Every key is validated; unknown keys are errors. Line indices in
``dependence.params.groups`` are 0-based.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .indicators import ABSOLUTE, PenaltyFn
from .optimizer import SOLVERS, ConfigError, OptimizerConfig
from .risk_model import DependenceSpec, MarginalSpec, ModelError, RiskModel

__all__ = ["Scenario", "ScenarioError", "parse_scenario", "load_scenario", "apply_overrides"]


class ScenarioError(ValueError):
    """Malformed or invalid scenario; ``path`` names the offending key."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


TOP_KEYS = {"lines", "dependence", "capital", "indicator", "penalty", "solver", "samples", "seed"}
LINE_KEYS = {"name", "family", "params", "shift"}
DEPENDENCE_KEYS = {"kind", "params"}
PENALTY_KEYS = {"kind", "p"}
# scenario key -> OptimizerConfig field
SOLVER_FIELDS = {
    "iterations": "iterations",
    "batch": "batch_per_iter",
    "step_a": "step_a",
    "step_alpha": "step_alpha",
    "averaging": "averaging_window",
    "tolerance": "tolerance",
    "gradient": "gradient",
    "fd_span_c": "fd_span_c",
    "fd_span_beta": "fd_span_beta",
    "eval_samples": "eval_samples",
}
SOLVER_KEYS = {"name", "resolution", *SOLVER_FIELDS}


@dataclass(frozen=True)
class Scenario:
    """Validated scenario.

    Iterating yields ``(model, capital, indicator, penalty, config)``.
    """

    model: RiskModel
    capital: float
    indicator: str = "I"
    penalty: PenaltyFn = ABSOLUTE
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    solver: str = "mirror_kw"
    resolution: float | None = None
    samples: int = 100_000
    seed: int = 0
    line_names: tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.model, self.capital, self.indicator, self.penalty, self.config))


def _mapping(obj, path: str, allowed: set[str]) -> dict:
    if not isinstance(obj, dict):
        raise ScenarioError(f"expected a mapping, got {type(obj).__name__}", path)
    unknown = sorted(set(map(str, obj)) - allowed)
    if unknown:
        key = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ScenarioError("unknown key", key)
    return obj


def _number(value, path: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {value!r}", path)
    if integer and not isinstance(value, int):
        raise ScenarioError(f"expected an integer, got {value!r}", path)
    return value


def _lines(raw, path: str = "lines"):
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("expected a non-empty list of lines", path)
    marginals, shifts, names = [], [], []
    for i, line in enumerate(raw):
        here = f"{path}[{i}]"
        line = _mapping(line, here, LINE_KEYS)
        if "family" not in line:
            raise ScenarioError("missing key", f"{here}.family")
        params = line.get("params", {})
        _mapping(params, f"{here}.params", set(map(str, params)) if isinstance(params, dict) else set())
        try:
            marginals.append(MarginalSpec(str(line["family"]), dict(params)))
        except ModelError as exc:
            # marginal parameters are reported as marginals[i].<param>
            where = f"marginals[{i}].{exc.field}" if exc.field != "family" else f"{here}.family"
            raise ScenarioError(exc.detail, where) from None
        shifts.append(float(_number(line.get("shift", 0.0), f"{here}.shift")))
        names.append(str(line.get("name", f"line{i + 1}")))
    if len(set(names)) != len(names):
        raise ScenarioError("line names must be unique", path)
    return marginals, shifts, names


def _dependence(raw) -> DependenceSpec:
    if raw is None:
        return DependenceSpec()
    raw = _mapping(raw, "dependence", DEPENDENCE_KEYS)
    kind = str(raw.get("kind", "independent"))
    params = raw.get("params") or {}
    allowed = {"gaussian": {"correlation"}, "clayton": {"theta"},
               "comonotonic_groups": {"groups"}}.get(kind, set())
    _mapping(params, "dependence.params", allowed)
    groups = params.get("groups")
    return DependenceSpec(
        kind,
        correlation=params.get("correlation"),
        theta=params.get("theta"),
        groups=None if groups is None else tuple(tuple(g) for g in groups),
    )


def _penalty(raw) -> PenaltyFn:
    if raw is None:
        return ABSOLUTE
    raw = _mapping(raw, "penalty", PENALTY_KEYS)
    try:
        if "p" in raw:
            _number(raw["p"], "penalty.p")
        return PenaltyFn(str(raw.get("kind", "absolute")), raw.get("p", 1.0))
    except ValueError as exc:
        raise ScenarioError(str(exc), "penalty") from None


def _solver(raw):
    raw = _mapping(raw or {}, "solver", SOLVER_KEYS)
    name = str(raw.get("name", "mirror_kw"))
    if name not in SOLVERS:
        raise ScenarioError(f"unknown solver {name!r}; expected one of {sorted(SOLVERS)}", "solver.name")
    changes = {}
    for key, attr in SOLVER_FIELDS.items():
        if key in raw:
            value = raw[key]
            if key != "gradient":
                _number(value, f"solver.{key}", integer=key in ("iterations", "batch", "eval_samples"))
            changes[attr] = value
    try:
        config = OptimizerConfig(**changes)
    except ConfigError as exc:
        raise ScenarioError(str(exc), "solver") from None
    resolution = raw.get("resolution")
    if resolution is not None and not _number(resolution, "solver.resolution") > 0:
        raise ScenarioError("must be > 0", "solver.resolution")
    return name, config, resolution


def parse_scenario(doc: dict[str, Any]) -> Scenario:
    """Validate a scenario mapping (as loaded from YAML)."""
    doc = _mapping(doc, "", TOP_KEYS)
    for key in ("lines", "capital"):
        if key not in doc:
            raise ScenarioError("missing key", key)
    marginals, shifts, names = _lines(doc["lines"])
    # dependence errors propagate as the risk model's own ModelError
    model = RiskModel(tuple(marginals), _dependence(doc.get("dependence")), tuple(shifts))
    capital = float(_number(doc["capital"], "capital"))
    if not capital >= 0:
        raise ScenarioError("must be >= 0", "capital")
    indicator = str(doc.get("indicator", "I"))
    if indicator not in ("I", "J"):
        raise ScenarioError(f"must be 'I' or 'J', got {indicator!r}", "indicator")
    solver, config, resolution = _solver(doc.get("solver"))
    samples = _number(doc.get("samples", 100_000), "samples", integer=True)
    if samples < 2:
        raise ScenarioError("must be >= 2", "samples")
    seed = _number(doc.get("seed", 0), "seed", integer=True)
    if not 0 <= seed < 2**64:
        raise ScenarioError("must be a 64-bit unsigned integer", "seed")
    return Scenario(model, capital, indicator, _penalty(doc.get("penalty")), config,
                    solver, resolution, samples, seed, tuple(names))


def apply_overrides(doc: dict, overrides: dict[str, Any]) -> dict:
    """Set dotted keys (``solver.iterations``) on a copy of ``doc``."""
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        node = doc
        *head, last = dotted.split(".")
        for key in head:
            nxt = node.setdefault(key, {})
            if not isinstance(nxt, dict):
                raise ScenarioError("cannot override inside a non-mapping", dotted)
            node = nxt
        node[last] = value
    return doc


def load_scenario(path, overrides: dict[str, Any] | None = None) -> Scenario:
    """Read and validate a scenario file, applying dotted-key ``overrides``.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ScenarioError
        On YAML syntax errors (with line and column) or invalid content.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else None
        raise ScenarioError(str(exc.problem or exc), where) from None
    if doc is None:
        raise ScenarioError("empty scenario file")
    if overrides:
        if not isinstance(doc, dict):
            raise ScenarioError("expected a mapping at the top level")
        doc = apply_overrides(doc, overrides)
    return parse_scenario(doc)
