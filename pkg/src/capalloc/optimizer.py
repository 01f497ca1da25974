"""Solvers for the optimal allocation of capital ``u`` over ``d`` lines.

Four routes to the minimiser of an indicator over the capital simplex
``{v >= 0, sum(v) = u}``:

* :func:`mirror_descent_kw` -- stochastic mirror descent with the entropic
  mirror map on the simplex scaled by ``u``; gradients come from the
  analytic subgradient or from Kiefer-Wolfowitz finite differences.
* :func:`projected_sgd` -- the same loop with a Euclidean projection step.
* :func:`grid_search_oracle` -- exhaustive lattice search on a fixed batch.
* :func:`solve_bivariate` -- bisection on the equal-probability condition
  for two lines.

The stochastic solvers accept either a model (fresh draws every iteration)
or a fixed batch (rows resampled with replacement, so the solver targets the
empirical minimiser of that batch and results are comparable under common
random numbers).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .indicators import (
    ABSOLUTE,
    Allocation,
    IndicatorEstimate,
    PenaltyFn,
    _subgradient,
    as_table,
    check_kind,
    close_sum,
    estimate_indicator,
    group_event,
    optimality_residual,
    row_penalties,
)
from .risk_model import LossModel, SampleBatch, substream

__all__ = [
    "ConfigError",
    "OptimizerConfig",
    "AllocationResult",
    "mirror_descent_kw",
    "projected_sgd",
    "grid_search_oracle",
    "solve_bivariate",
    "proportional_baseline",
    "simplex_project",
    "SOLVERS",
]

MAX_LATTICE_POINTS = 5_000_000
_CHUNK_ITERS = 64


class ConfigError(ValueError):
    """Invalid optimizer schedule or configuration."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Schedules and budgets of the stochastic solvers.

    Step size ``step_a / t**step_alpha`` (in fractions of ``u``, divided by the RMS
    gradient magnitude seen during a short warm-up); finite-difference span
    ``fd_span_c * u / t**fd_span_beta``, used when ``gradient == "fd"``.
    ``tolerance`` is the residual spread target; ``None`` means three
    standard errors of the spread.
    """

    iterations: int = 4000
    step_a: float = 0.5
    step_alpha: float = 0.75
    fd_span_c: float = 0.05
    fd_span_beta: float = 0.25
    batch_per_iter: int = 256
    averaging_window: float = 0.5
    tolerance: float | None = None
    gradient: str = "analytic"
    eval_samples: int = 100_000
    boundary_tol: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations!r}")
        if not isinstance(self.batch_per_iter, (int, np.integer)) or self.batch_per_iter < 1:
            raise ConfigError(f"batch_per_iter must be a positive integer, got {self.batch_per_iter!r}")
        if not self.step_a > 0:
            raise ConfigError(f"step_a must be > 0, got {self.step_a}")
        if not 0.5 < self.step_alpha <= 1.0:
            raise ConfigError(f"step_alpha must lie in (0.5, 1], got {self.step_alpha}")
        if not self.fd_span_c > 0:
            raise ConfigError(f"fd_span_c must be > 0, got {self.fd_span_c}")
        if not 0 < self.fd_span_beta < self.step_alpha:
            raise ConfigError(
                f"fd_span_beta must lie in (0, step_alpha={self.step_alpha}), got {self.fd_span_beta}"
            )
        if not 0 < self.averaging_window <= 1:
            raise ConfigError(f"averaging_window must lie in (0, 1], got {self.averaging_window}")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.gradient not in ("analytic", "fd"):
            raise ConfigError(f"gradient must be 'analytic' or 'fd', got {self.gradient!r}")
        if not isinstance(self.eval_samples, (int, np.integer)) or self.eval_samples < 2:
            raise ConfigError(f"eval_samples must be an integer >= 2, got {self.eval_samples!r}")

    def replace(self, **changes) -> "OptimizerConfig":
        return OptimizerConfig(**{**asdict(self), **changes})


@dataclass
class AllocationResult:
    alloc: Allocation
    indicator: IndicatorEstimate
    residual_spread: float
    residual_std_error: float
    solver: str
    trace: list[tuple] = field(default_factory=list, repr=False)
    flags: tuple[str, ...] = ()
    config: dict[str, Any] | None = None

    @property
    def boundary(self) -> bool:
        return "boundary" in self.flags

    @property
    def tie(self) -> bool:
        return "tie" in self.flags

    def trace_csv(self) -> str:
        """Trace as CSV text: ``iter,u_1,...,u_d,step,indicator_estimate``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.alloc.d
        w.writerow(["iter"] + [f"u_{k + 1}" for k in range(d)] + ["step", "indicator_estimate"])
        for it, parts, step, est in self.trace:
            w.writerow([it] + [repr(float(x)) for x in parts] + [repr(float(step)), repr(float(est))])
        return buf.getvalue()

    def to_record(self, penalty: PenaltyFn | None = None, model_digest: str | None = None,
                  seed: int | None = None) -> dict:
        rec = self.indicator.to_record(self.alloc, penalty, model_digest, seed)
        rec.update(
            solver=self.solver,
            residual_spread=self.residual_spread,
            residual_std_error=self.residual_std_error,
            flags=list(self.flags),
            config=self.config,
        )
        return rec


# ---------------------------------------------------------------------------
# projection and baseline
# ---------------------------------------------------------------------------


def simplex_project(point, u: float) -> Allocation:
    """Euclidean projection of ``point`` onto ``{v >= 0, sum(v) = u}``."""
    u = float(u)
    if not u >= 0:
        raise ValueError(f"capital must be >= 0, got {u}")
    return Allocation(_project(np.asarray(point, dtype=float), u), u)


def _project(y: np.ndarray, u: float) -> np.ndarray:
    if u == 0:
        return np.zeros_like(y)
    if np.all(y >= 0) and math.fsum(y) == u:
        return y.copy()
    s = np.sort(y)[::-1]
    css = np.cumsum(s) - u
    ks = np.arange(1, y.size + 1)
    hits = np.nonzero(s * ks > css)[0]
    # index 0 always qualifies in exact arithmetic; roundoff can hide it when u << |y|
    rho = hits[-1] if hits.size else 0
    tau = css[rho] / (rho + 1)
    return close_sum(np.maximum(y - tau, 0.0), u)


def proportional_baseline(batch, u: float) -> Allocation:
    """Shares proportional to the mean loss of each line."""
    data = as_table(batch)
    means = data.mean(axis=0)
    total = means.sum()
    if not total > 0:
        raise ValueError("proportional allocation needs a positive mean total loss")
    if np.any(means < 0):
        raise ValueError("proportional allocation needs non-negative line means")
    return Allocation(close_sum(float(u) * means / total, float(u)), u)


# ---------------------------------------------------------------------------
# stochastic solvers
# ---------------------------------------------------------------------------


class _Draws:
    """Mini-batch supplier: fresh model draws or bootstrap rows of a batch."""

    def __init__(self, source, seed: int, m: int):
        self.m = m
        self.seed = seed
        if isinstance(source, LossModel):
            self.model = source
            self.table = None
            self.d = source.d
        else:
            self.model = None
            self.table = as_table(source)
            self.d = self.table.shape[1]
            self.rng = substream(seed, "solver", "bootstrap")
        self._chunk = None
        self._chunk_id = -1

    def get(self, t: int) -> np.ndarray:
        if self.table is not None:
            return self.table[self.rng.integers(0, self.table.shape[0], size=self.m)]
        c, r = divmod(t - 1, _CHUNK_ITERS)
        if c != self._chunk_id:
            s = int(substream(self.seed, "solver", "chunk", c).integers(0, 2**63))
            self._chunk = self.model.sample(_CHUNK_ITERS * self.m, s).data
            self._chunk_id = c
        return self._chunk[r * self.m:(r + 1) * self.m]


def _gradient(mb: np.ndarray, v: np.ndarray, u: float, kind: str, penalty: PenaltyFn,
              config: OptimizerConfig, t: int) -> np.ndarray:
    hit = mb[group_event(mb.sum(axis=1), u, kind)]
    if config.gradient == "analytic":
        return _subgradient(hit, v, penalty, mb.shape[0])
    # Kiefer-Wolfowitz: central differences of each separable term on the same draws.
    c = config.fd_span_c * u / t**config.fd_span_beta
    n = mb.shape[0]
    up = row_penalties(hit, v + c, penalty).sum(axis=0) / n
    dn = row_penalties(hit, v - c, penalty).sum(axis=0) / n
    return (up - dn) / (2.0 * c)


def _stochastic(source, u: float, kind: str, penalty: PenaltyFn, config: OptimizerConfig,
                seed: int, mirror: bool) -> AllocationResult:
    check_kind(kind)
    config = config if config is not None else OptimizerConfig()
    name = "mirror_kw" if mirror else "projected_sgd"
    u = float(u)
    if not u >= 0:
        raise ValueError(f"capital must be >= 0, got {u}")
    draws = _Draws(source, seed, config.batch_per_iter)
    d = draws.d
    if d < 1:
        raise ValueError("at least one line is required")
    if u == 0 or d == 1:
        alloc = Allocation(np.full(d, u / d) if d == 1 else np.zeros(d), u)
        return _finish(source, alloc, u, kind, penalty, config, seed, name, [], ())

    T = config.iterations
    start_avg = T - max(1, int(math.ceil(config.averaging_window * T))) + 1
    log_frac = np.full(d, -math.log(d))
    v = np.full(d, u / d)
    acc = np.zeros(d)
    n_acc = 0
    sq = 0.0
    scale = 0.0
    # gradient-magnitude estimate, frozen after the warm-up so steps keep decaying
    warmup = max(20, int(math.ceil(0.05 * T)))
    trace = []
    for t in range(1, T + 1):
        mb = draws.get(t)
        g = _gradient(mb, v, u, kind, penalty, config, t)
        if t <= warmup or scale == 0:
            sq += float(g @ g) / d
            scale = math.sqrt(sq / t)
        g = g - g.mean()
        base = config.step_a / t**config.step_alpha
        est = float(row_penalties(mb, v, penalty).sum(axis=1)
                    @ group_event(mb.sum(axis=1), u, kind)) / mb.shape[0]
        if scale > 0:
            if mirror:
                log_frac -= (base / scale) * g
                log_frac -= logsumexp(log_frac)
                v = u * np.exp(log_frac)
            else:
                v = _project(v - (base * u / scale) * g, u)
        trace.append((t, v.copy(), base, est))
        if t >= start_avg:
            acc += v
            n_acc += 1
    alloc = Allocation(close_sum(acc / n_acc, u), u)
    return _finish(source, alloc, u, kind, penalty, config, seed, name, trace, ())


def _finish(source, alloc: Allocation, u: float, kind: str, penalty: PenaltyFn,
            config: OptimizerConfig | None, seed: int, name: str, trace, flags,
            check_residual: bool = True) -> AllocationResult:
    if isinstance(source, LossModel):
        n_eval = config.eval_samples if config is not None else 100_000
        s = int(substream(seed, "solver", "evaluate").integers(0, 2**63))
        table = source.sample(n_eval, s).data
    else:
        table = as_table(source)
    est = estimate_indicator(kind, table, alloc, penalty)
    res = optimality_residual(kind, table, alloc, penalty)
    flags = list(flags)
    tol = config.boundary_tol if config is not None else 1e-3
    if u > 0 and alloc.d > 1 and np.any(alloc.parts <= tol * u):
        flags.append("boundary")
    limit = (config.tolerance if config is not None and config.tolerance is not None
             else 3.0 * res.std_error)
    if check_residual and alloc.d > 1 and u > 0 and res.max_spread > limit and "boundary" not in flags:
        flags.append("residual_above_tolerance")
    return AllocationResult(
        alloc=alloc,
        indicator=est,
        residual_spread=res.max_spread,
        residual_std_error=res.std_error,
        solver=name,
        trace=trace,
        flags=tuple(dict.fromkeys(flags)),
        config=None if config is None else asdict(config),
    )


def mirror_descent_kw(source, u: float, kind: str = "I", penalty: PenaltyFn = ABSOLUTE,
                      config: OptimizerConfig | None = None, seed: int = 0) -> AllocationResult:
    """Stochastic mirror descent of Kiefer-Wolfowitz type on the scaled simplex.

    Iterates stay strictly inside the simplex (entropic mirror map); the
    returned allocation is the average of the trailing ``averaging_window``
    fraction of iterates.

    Parameters
    ----------
    source : LossModel or SampleBatch or array-like
        A model to draw fresh mini-batches from, or a fixed loss table whose
        rows are resampled.
    u : float
        Total capital.
    kind : {"I", "J"}
    penalty : PenaltyFn
    config : OptimizerConfig, optional
    seed : int
        Root seed of every random stream the solver uses.
    """
    return _stochastic(source, u, kind, penalty, config, seed, mirror=True)


def projected_sgd(source, u: float, kind: str = "I", penalty: PenaltyFn = ABSOLUTE,
                  config: OptimizerConfig | None = None, seed: int = 0) -> AllocationResult:
    """Projected stochastic (sub)gradient descent with Polyak averaging."""
    return _stochastic(source, u, kind, penalty, config, seed, mirror=False)


# ---------------------------------------------------------------------------
# exhaustive and bisection solvers
# ---------------------------------------------------------------------------


def _compositions(m: int, d: int) -> np.ndarray:
    """All non-negative integer vectors of length d summing to m, lexicographic."""
    if d == 1:
        return np.array([[m]])
    # stars and bars: bar positions in increasing order give lexicographic parts
    count = math.comb(m + d - 1, d - 1)
    if count > MAX_LATTICE_POINTS:
        raise MemoryError(f"lattice of {count} points exceeds the limit {MAX_LATTICE_POINTS}")
    bars = np.array(list(combinations(range(m + d - 1), d - 1)), dtype=np.int64)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), m + d - 1)])
    return np.diff(edges, axis=1) - 1


def grid_search_oracle(batch, u: float, kind: str = "I", penalty: PenaltyFn = ABSOLUTE,
                       resolution: float | None = None) -> AllocationResult:
    """Minimise the empirical indicator over the simplex lattice of step ``resolution``.

    The lattice step is ``u / round(u / resolution)``.  Because the group event
    does not depend on the allocation, the indicator at a lattice point is a
    sum of per-line penalty means evaluated on the 1-d grid of share values;
    the search tabulates those and scans every lattice point.  Ties (within a
    relative 1e-12) go to the lexicographically smallest point and are flagged.
    The residual-spread flag is not raised: a lattice minimizer is exact for
    its lattice, and its residual reflects the step size rather than noise.
    """
    check_kind(kind)
    data = as_table(batch)
    n, d = data.shape
    u = float(u)
    if d > 4:
        raise ValueError(f"grid search is limited to d <= 4 lines (cost grows as m**(d-1)); got d={d}")
    if resolution is None:
        resolution = 0.01 * u
    if u == 0:
        return _finish(data, Allocation(np.zeros(d), 0.0), 0.0, kind, penalty, None, 0,
                       "grid_oracle", [], ())
    if not resolution > 0:
        raise ValueError(f"resolution must be > 0, got {resolution}")
    m = max(1, int(round(u / resolution)))
    points = _compositions(m, d)
    levels = np.arange(m + 1) * (u / m)
    levels[-1] = u
    hit = data[group_event(data.sum(axis=1), u, kind)]
    table = np.empty((d, m + 1))
    for k in range(d):
        col = hit[:, k]
        for j, level in enumerate(levels):
            ex = np.maximum(col - level, 0.0)
            table[k, j] = (ex if penalty.p == 1.0 else ex**penalty.p).sum() / n
    values = table[np.arange(d), points].sum(axis=1)
    best = values.min()
    near = np.nonzero(values <= best + 1e-12 * max(abs(best), 1e-300))[0]
    winner = points[near[0]]
    parts = close_sum(levels[winner], u)
    flags = ("tie",) if near.size > 1 else ()
    res = _finish(data, Allocation(parts, u), u, kind, penalty, None, 0, "grid_oracle", [], flags,
                  check_residual=False)
    res.config = {"resolution": u / m, "lattice_points": int(points.shape[0]), "ties": int(near.size)}
    return res


def _probabilities(hit_col: np.ndarray, n: int):
    sorted_col = np.sort(hit_col)

    def survival(v: float) -> float:
        return (sorted_col.size - np.searchsorted(sorted_col, v, side="right")) / n

    return survival


def solve_bivariate(batch, u: float, kind: str = "I") -> AllocationResult:
    """Exact two-line solver under the absolute penalty.

    Bisects the non-increasing residual
    ``r(v) = P(X_1 > v, E) - P(X_2 > u - v, E)`` on ``[0, u]`` down to a
    bracket of width ``1e-6 * u``.  When ``r`` keeps one sign the cheaper end
    point is returned and flagged as a boundary optimum.
    """
    check_kind(kind)
    data = as_table(batch)
    n, d = data.shape
    if d != 2:
        raise ValueError(f"solve_bivariate needs exactly two lines, got d={d}")
    u = float(u)
    if u == 0:
        return _finish(data, Allocation(np.zeros(2), 0.0), 0.0, kind, ABSOLUTE, None, 0,
                       "bivariate_bisection", [], ())
    hit = data[group_event(data.sum(axis=1), u, kind)]
    p1 = _probabilities(hit[:, 0], n)
    p2 = _probabilities(hit[:, 1], n)

    def r(v: float) -> float:
        return p1(v) - p2(u - v)

    trace = []
    flags: tuple[str, ...] = ()
    r_lo, r_hi = r(0.0), r(u)
    if r_lo < 0 or r_hi > 0:
        ends = [np.array([0.0, u]), np.array([u, 0.0])]
        vals = [estimate_indicator(kind, data, Allocation(e, u)).value for e in ends]
        v1 = ends[int(np.argmin(vals))][0]
        flags = ("boundary",)
    else:
        lo, hi = 0.0, u
        width = 1e-6 * u
        it = 0
        v1 = None
        while hi - lo > width:
            it += 1
            mid = 0.5 * (lo + hi)
            rm = r(mid)
            point = np.array([mid, u - mid])
            trace.append((it, point, hi - lo, estimate_indicator(kind, data, Allocation(point, u)).value))
            if rm > 0:
                lo = mid
            elif rm < 0:
                hi = mid
            else:
                v1 = mid
                break
        if v1 is None:
            v1 = 0.5 * (lo + hi)
    alloc = Allocation(close_sum(np.array([v1, u - v1]), u), u)
    return _finish(data, alloc, u, kind, ABSOLUTE, None, 0, "bivariate_bisection", trace, flags)


SOLVERS = {
    "mirror_kw": mirror_descent_kw,
    "projected_sgd": projected_sgd,
    "grid_oracle": grid_search_oracle,
    "bivariate_bisection": solve_bivariate,
}
