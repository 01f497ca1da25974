"""Dependent non-negative loss vectors.

A :class:`RiskModel` couples ``d`` marginal loss distributions with one of a
few dependence structures (independence, Gaussian or Clayton copula, full or
grouped comonotonicity).  Sampling is deterministic given ``(model, n, seed)``:
rows are produced in fixed-size blocks and every block/column pulls from its
own substream of the root seed, so common random numbers can be shared across
the problems being compared.

:class:`DerivedModel` expresses line-wise transformations of a parent model
(merging lines, scaling, shifting, adding a deterministic line).  A derived
model samples its parent with the same seed and maps the table, which makes
"sample the transformed model" and "transform the sampled batch" identical.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ModelError",
    "MarginalSpec",
    "DependenceSpec",
    "RiskModel",
    "DerivedModel",
    "SampleBatch",
    "sample",
    "marginal_quantile",
    "merge_lines",
    "scale_lines",
    "shift_lines",
    "add_deterministic_line",
    "substream",
    "read_batch",
]

BLOCK_ROWS = 65536
MAX_RESAMPLE_ATTEMPTS = 64

_PARAMS = {
    "exponential": ("rate",),
    "lognormal": ("mu", "sigma"),
    "pareto": ("shape", "scale"),
    "uniform": ("lo", "hi"),
    "deterministic": ("c",),
}


class ModelError(ValueError):
    """Invalid model construction.  ``field`` names the offending parameter."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
        self.detail = message


def _stable_key(key: Any) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys: Any) -> np.random.Generator:
    """Generator for the substream of ``seed`` addressed by ``keys``.

    Keys may be ints or strings; strings are mapped through CRC32 so the
    address is stable across processes and Python versions.
    """
    seed = _check_seed(seed)
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_stable_key(k) for k in keys))
    return np.random.default_rng(ss)


def _check_seed(seed: Any) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
    return seed


def _open_uniforms(rng: np.random.Generator, size) -> tuple[np.ndarray, np.ndarray]:
    # p = (2k+1)/2**53 lies strictly inside (0, 1) and 1 - p is exact.
    k = rng.integers(0, 2**52, size=size, dtype=np.uint64).astype(np.float64)
    p = (2.0 * k + 1.0) * 2.0**-53
    q = (2.0**53 - 2.0 * k - 1.0) * 2.0**-53
    return p, q


# ---------------------------------------------------------------------------
# marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginalSpec:
    """One marginal loss distribution.

    Use the named constructors (:meth:`exponential`, :meth:`pareto`, ...)
    or ``MarginalSpec(family, {"rate": 1.0})``.
    """

    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _PARAMS:
            raise ModelError(f"unknown family {self.family!r}", "family")
        expected = _PARAMS[self.family]
        extra = set(self.params) - set(expected)
        if extra:
            raise ModelError(f"unexpected parameter(s) {sorted(extra)}", sorted(extra)[0])
        clean = {}
        for name in expected:
            if name not in self.params:
                raise ModelError("missing parameter", name)
            value = self.params[name]
            if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
                raise ModelError(f"must be a real number, got {value!r}", name)
            value = float(value)
            if not math.isfinite(value):
                raise ModelError("must be finite", name)
            clean[name] = value
        object.__setattr__(self, "params", clean)
        p = clean
        if self.family == "exponential" and not p["rate"] > 0:
            raise ModelError("must be > 0", "rate")
        if self.family == "lognormal" and not p["sigma"] > 0:
            raise ModelError("must be > 0", "sigma")
        if self.family == "pareto":
            if not p["shape"] > 1:
                raise ModelError("must be > 1 (finite mean)", "shape")
            if not p["scale"] > 0:
                raise ModelError("must be > 0", "scale")
        if self.family == "uniform":
            if not p["lo"] >= 0:
                raise ModelError("must be >= 0", "lo")
            if not p["hi"] > p["lo"]:
                raise ModelError("must be > lo", "hi")
        if self.family == "deterministic" and not p["c"] >= 0:
            raise ModelError("must be >= 0", "c")

    # named constructors
    @classmethod
    def exponential(cls, rate: float = 1.0) -> "MarginalSpec":
        return cls("exponential", {"rate": rate})

    @classmethod
    def lognormal(cls, mu: float = 0.0, sigma: float = 1.0) -> "MarginalSpec":
        return cls("lognormal", {"mu": mu, "sigma": sigma})

    @classmethod
    def pareto(cls, shape: float, scale: float = 1.0) -> "MarginalSpec":
        return cls("pareto", {"shape": shape, "scale": scale})

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "MarginalSpec":
        return cls("uniform", {"lo": lo, "hi": hi})

    @classmethod
    def deterministic(cls, c: float) -> "MarginalSpec":
        return cls("deterministic", {"c": c})

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    @property
    def is_deterministic(self) -> bool:
        return self.family == "deterministic"

    @property
    def lower_support(self) -> float:
        p = self.params
        return {
            "exponential": 0.0,
            "lognormal": 0.0,
            "pareto": p.get("scale", 0.0),
            "uniform": p.get("lo", 0.0),
            "deterministic": p.get("c", 0.0),
        }[self.family]

    @property
    def upper_support(self) -> float:
        p = self.params
        if self.family == "uniform":
            return p["hi"]
        if self.family == "deterministic":
            return p["c"]
        return math.inf

    def mean(self) -> float:
        p = self.params
        if self.family == "exponential":
            return 1.0 / p["rate"]
        if self.family == "lognormal":
            return math.exp(p["mu"] + 0.5 * p["sigma"] ** 2)
        if self.family == "pareto":
            return p["shape"] * p["scale"] / (p["shape"] - 1.0)
        if self.family == "uniform":
            return 0.5 * (p["lo"] + p["hi"])
        return p["c"]

    def survival(self, x) -> np.ndarray:
        """P(X > x), vectorised."""
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == "exponential":
            return np.exp(-p["rate"] * np.maximum(x, 0.0))
        if self.family == "lognormal":
            with np.errstate(divide="ignore"):
                z = (np.log(np.maximum(x, 0.0)) - p["mu"]) / p["sigma"]
            return special.ndtr(-z)
        if self.family == "pareto":
            return np.where(x < p["scale"], 1.0, (p["scale"] / np.maximum(x, p["scale"])) ** p["shape"])
        if self.family == "uniform":
            return np.clip((p["hi"] - x) / (p["hi"] - p["lo"]), 0.0, 1.0)
        return np.where(x < p["c"], 1.0, 0.0)

    def ppf(self, p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
        """Quantile function given ``p`` and optionally its complement ``q = 1 - p``.

        Passing an accurately computed ``q`` keeps the upper tail exact where
        ``1 - p`` would round to zero.
        """
        p = np.asarray(p, dtype=float)
        q = 1.0 - p if q is None else np.asarray(q, dtype=float)
        par = self.params
        with np.errstate(over="ignore", divide="ignore"):
            if self.family == "exponential":
                return -np.log(q) / par["rate"]
            if self.family == "lognormal":
                z = np.where(p < 0.5, special.ndtri(p), -special.ndtri(q))
                return np.exp(par["mu"] + par["sigma"] * z)
            if self.family == "pareto":
                return par["scale"] * np.exp(-np.log(q) / par["shape"])
            if self.family == "uniform":
                return par["lo"] + p * (par["hi"] - par["lo"])
            return np.full(np.shape(p), par["c"])

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


def marginal_quantile(spec: MarginalSpec, p: float) -> float:
    """F^{-1}(p) for ``p`` strictly inside (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return float(spec.ppf(np.array([p]))[0])


# ---------------------------------------------------------------------------
# dependence
# ---------------------------------------------------------------------------

_KINDS = ("independent", "gaussian", "clayton", "comonotonic", "comonotonic_groups")


@dataclass(frozen=True, eq=False)
class DependenceSpec:
    """Dependence structure of the loss vector.

    ``correlation`` is used by ``gaussian``, ``theta`` by ``clayton`` and
    ``groups`` (0-based column indices) by ``comonotonic_groups``: columns in
    one group are comonotonic, groups are mutually independent.
    """

    kind: str = "independent"
    correlation: np.ndarray | None = None
    theta: float | None = None
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ModelError(f"unknown dependence kind {self.kind!r}", "dependence.kind")
        if self.kind == "gaussian":
            if self.correlation is None:
                raise ModelError("required for a gaussian copula", "dependence.correlation")
            corr = np.array(self.correlation, dtype=float)
            if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
                raise ModelError("must be a square matrix", "dependence.correlation")
            if not np.allclose(corr, corr.T, atol=1e-12, rtol=0):
                raise ModelError("must be symmetric", "dependence.correlation")
            if not np.allclose(np.diag(corr), 1.0, atol=1e-12, rtol=0):
                raise ModelError("must have a unit diagonal", "dependence.correlation")
            try:
                chol = np.linalg.cholesky(corr)
            except np.linalg.LinAlgError:
                raise ModelError("is not positive definite", "dependence.correlation") from None
            corr.setflags(write=False)
            chol.setflags(write=False)
            object.__setattr__(self, "correlation", corr)
            object.__setattr__(self, "_chol", chol)
        if self.kind == "clayton":
            if self.theta is None or not float(self.theta) > 0:
                raise ModelError("must be > 0", "dependence.theta")
            object.__setattr__(self, "theta", float(self.theta))
        if self.kind == "comonotonic_groups":
            if not self.groups:
                raise ModelError("required for comonotonic_groups", "dependence.groups")
            groups = tuple(tuple(int(i) for i in g) for g in self.groups)
            if any(len(g) == 0 for g in groups):
                raise ModelError("groups must be non-empty", "dependence.groups")
            object.__setattr__(self, "groups", groups)

    @classmethod
    def gaussian(cls, correlation) -> "DependenceSpec":
        return cls("gaussian", correlation=np.asarray(correlation, dtype=float))

    @classmethod
    def clayton(cls, theta: float) -> "DependenceSpec":
        return cls("clayton", theta=theta)

    @classmethod
    def comonotonic_groups(cls, groups: Iterable[Iterable[int]]) -> "DependenceSpec":
        return cls("comonotonic_groups", groups=tuple(tuple(g) for g in groups))

    def validate_dim(self, d: int):
        if self.kind == "gaussian" and self.correlation.shape[0] != d:
            raise ModelError(
                f"shape {self.correlation.shape} does not match d={d}", "dependence.correlation"
            )
        if self.kind == "comonotonic_groups":
            flat = sorted(i for g in self.groups for i in g)
            if flat != list(range(d)):
                raise ModelError(
                    f"groups must partition columns 0..{d - 1} exactly once", "dependence.groups"
                )

    def swap_invariant(self, i: int, j: int) -> bool:
        """Whether exchanging columns i and j leaves the copula unchanged."""
        if self.kind in ("independent", "clayton", "comonotonic"):
            return True
        if self.kind == "gaussian":
            perm = np.arange(self.correlation.shape[0])
            perm[[i, j]] = perm[[j, i]]
            return bool(np.array_equal(self.correlation, self.correlation[np.ix_(perm, perm)]))
        group_of = {c: g for g in self.groups for c in g}
        gi, gj = group_of[i], group_of[j]
        return gi == gj or (len(gi) == 1 and len(gj) == 1)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "gaussian":
            out["correlation"] = self.correlation.tolist()
        if self.kind == "clayton":
            out["theta"] = self.theta
        if self.kind == "comonotonic_groups":
            out["groups"] = [list(g) for g in self.groups]
        return out

    def __eq__(self, other):
        return isinstance(other, DependenceSpec) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))


INDEPENDENT = DependenceSpec()


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """An ``n x d`` table of simulated losses and its provenance."""

    data: np.ndarray
    seed: int
    model_digest: str
    rejected: int = 0

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("batch data must be a 2-d table")
        if not np.all(np.isfinite(data.sum(axis=1))):
            raise ValueError("batch rows must have finite sums")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def totals(self) -> np.ndarray:
        """Row sums S."""
        return self.data.sum(axis=1)

    def with_data(self, data: np.ndarray, digest: str | None = None) -> "SampleBatch":
        return SampleBatch(data, self.seed, digest or self.model_digest, self.rejected)

    def to_csv(self, path) -> Path:
        """Write ``sample_id,x1,...,xd`` plus a ``.meta.json`` sidecar."""
        path = Path(path)
        header = ",".join(["sample_id"] + [f"x{k + 1}" for k in range(self.d)])
        with path.open("w", newline="") as fh:
            fh.write(header + "\n")
            for i, row in enumerate(self.data):
                fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
        meta = {"seed": self.seed, "model_digest": self.model_digest, "n": self.n,
                "rejected": self.rejected}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path


def read_batch(path) -> SampleBatch:
    path = Path(path)
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    return SampleBatch(raw[:, 1:], meta["seed"], meta["model_digest"], meta.get("rejected", 0))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class LossModel:
    """Common surface of base and derived models."""

    d: int

    def to_dict(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def sample(self, n: int, seed: int) -> SampleBatch:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class RiskModel(LossModel):
    """Marginals plus dependence; line k is ``X_k - shift[k]``."""

    marginals: tuple[MarginalSpec, ...]
    dependence: DependenceSpec = INDEPENDENT
    shift: tuple[float, ...] | None = None

    def __post_init__(self):
        marginals = tuple(self.marginals)
        if not marginals:
            raise ModelError("at least one line is required", "marginals")
        for k, m in enumerate(marginals):
            if not isinstance(m, MarginalSpec):
                raise ModelError("must be a MarginalSpec", f"marginals[{k}]")
        object.__setattr__(self, "marginals", marginals)
        d = len(marginals)
        shift = (0.0,) * d if self.shift is None else tuple(float(a) for a in self.shift)
        if len(shift) != d:
            raise ModelError(f"length {len(shift)} does not match d={d}", "shift")
        if not all(math.isfinite(a) for a in shift):
            raise ModelError("must be finite", "shift")
        object.__setattr__(self, "shift", shift)
        self.dependence.validate_dim(d)

    @property
    def d(self) -> int:
        return len(self.marginals)

    @property
    def nonnegative(self) -> bool:
        """False when a shift pushes some line's support below zero."""
        return all(m.lower_support - a >= 0 for m, a in zip(self.marginals, self.shift))

    def pair_exchangeable(self, i: int, j: int) -> bool:
        return (
            self.marginals[i] == self.marginals[j]
            and self.shift[i] == self.shift[j]
            and self.dependence.swap_invariant(i, j)
        )

    def exchangeable(self) -> bool:
        return all(self.pair_exchangeable(0, j) for j in range(1, self.d)) and (
            self.dependence.kind != "gaussian"
            or all(self.dependence.swap_invariant(i, j)
                   for i in range(self.d) for j in range(i + 1, self.d))
        )

    def to_dict(self) -> dict:
        return {
            "marginals": [m.to_dict() for m in self.marginals],
            "dependence": self.dependence.to_dict(),
            "shift": list(self.shift),
        }

    def _uniforms(self, rng_key: tuple, m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        d = self.d
        dep = self.dependence
        P = np.empty((m, d))
        Q = np.empty((m, d))
        if dep.kind == "independent":
            for k in range(d):
                P[:, k], Q[:, k] = _open_uniforms(substream(seed, *rng_key, "col", k), m)
        elif dep.kind == "comonotonic":
            p, q = _open_uniforms(substream(seed, *rng_key, "common"), m)
            P[:] = p[:, None]
            Q[:] = q[:, None]
        elif dep.kind == "comonotonic_groups":
            for g, cols in enumerate(dep.groups):
                p, q = _open_uniforms(substream(seed, *rng_key, "group", g), m)
                P[:, cols] = p[:, None]
                Q[:, cols] = q[:, None]
        elif dep.kind == "gaussian":
            Z = np.empty((m, d))
            for k in range(d):
                Z[:, k] = substream(seed, *rng_key, "col", k).standard_normal(m)
            Y = Z @ dep._chol.T
            P, Q = special.ndtr(Y), special.ndtr(-Y)
        else:  # clayton, Marshall-Olkin frailty construction
            theta = dep.theta
            V = substream(seed, *rng_key, "frailty").gamma(1.0 / theta, 1.0, size=m)
            for k in range(d):
                E = substream(seed, *rng_key, "col", k).standard_exponential(m)
                t = np.log1p(E / V) / theta
                P[:, k] = np.exp(-t)
                Q[:, k] = -np.expm1(-t)
        return P, Q

    def _rows(self, rng_key: tuple, m: int, seed: int) -> np.ndarray:
        P, Q = self._uniforms(rng_key, m, seed)
        out = np.empty((m, self.d))
        for k, spec in enumerate(self.marginals):
            out[:, k] = spec.ppf(P[:, k], Q[:, k]) - self.shift[k]
        return out

    def sample(self, n: int, seed: int) -> SampleBatch:
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ValueError(f"n must be a positive integer, got {n!r}")
        seed = _check_seed(seed)
        blocks = []
        rejected = 0
        for b in range(-(-n // BLOCK_ROWS)):
            m = min(BLOCK_ROWS, n - b * BLOCK_ROWS)
            rows = self._rows(("block", b), m, seed)
            bad = ~np.isfinite(rows.sum(axis=1))
            attempt = 0
            while bad.any():
                if attempt >= MAX_RESAMPLE_ATTEMPTS:
                    raise OverflowError("could not draw finite rows; tails too heavy")
                nbad = int(bad.sum())
                rejected += nbad
                rows[bad] = self._rows(("block", b, "retry", attempt), nbad, seed)
                bad = ~np.isfinite(rows.sum(axis=1))
                attempt += 1
            blocks.append(rows)
        return SampleBatch(np.vstack(blocks), seed, self.digest, rejected)


@dataclass(frozen=True, eq=False)
class DerivedModel(LossModel):
    """Line-wise affine map of a parent model.

    New line ``k`` is ``scales[k] * sum(parent[c] for c in columns[k]) + offsets[k]``
    with the sum taken left to right.  An empty column tuple yields the
    constant ``offsets[k]``.
    """

    parent: LossModel
    columns: tuple[tuple[int, ...], ...]
    scales: tuple[float, ...]
    offsets: tuple[float, ...]
    label: str = "derived"

    def __post_init__(self):
        if not (len(self.columns) == len(self.scales) == len(self.offsets)):
            raise ModelError("columns, scales and offsets must have equal length")
        for cols in self.columns:
            for c in cols:
                if not 0 <= c < self.parent.d:
                    raise ModelError(f"column {c} out of range for d={self.parent.d}")

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def nonnegative(self) -> bool:
        parent_ok = getattr(self.parent, "nonnegative", True)
        return parent_ok and all(s >= 0 for s in self.scales) and all(o >= 0 for o in self.offsets)

    def map_table(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        out = np.empty((data.shape[0], self.d))
        for k, (cols, s, o) in enumerate(zip(self.columns, self.scales, self.offsets)):
            if cols:
                acc = data[:, cols[0]].copy()
                for c in cols[1:]:
                    acc += data[:, c]
            else:
                acc = np.zeros(data.shape[0])
            if s != 1.0:
                acc *= s
            if o != 0.0:
                acc += o
            out[:, k] = acc
        return out

    def map_batch(self, batch: SampleBatch) -> SampleBatch:
        return SampleBatch(self.map_table(batch.data), batch.seed, self.digest, batch.rejected)

    def sample(self, n: int, seed: int) -> SampleBatch:
        return self.map_batch(self.parent.sample(n, seed))

    def to_dict(self) -> dict:
        return {
            "parent": self.parent.to_dict(),
            "label": self.label,
            "columns": [list(c) for c in self.columns],
            "scales": list(self.scales),
            "offsets": list(self.offsets),
        }


def sample(model: LossModel, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` i.i.d. loss vectors from ``model`` under ``seed``."""
    return model.sample(n, seed)


def _identity_parts(d: int):
    return [(k,) for k in range(d)], [1.0] * d, [0.0] * d


def merge_lines(model: LossModel, index_set: Iterable[int]) -> DerivedModel:
    """Replace the lines in ``index_set`` (0-based) by their sum.

    The merged line takes the position of the smallest merged index; the
    other lines keep their relative order.
    """
    idx = sorted(set(int(i) for i in index_set))
    if not idx:
        raise ValueError("index_set must be non-empty")
    if len(idx) >= model.d:
        raise ValueError("index_set must be a proper subset of the lines")
    if idx[0] < 0 or idx[-1] >= model.d:
        raise ValueError(f"index_set out of range for d={model.d}")
    columns = []
    for k in range(model.d):
        if k == idx[0]:
            columns.append(tuple(idx))
        elif k not in idx:
            columns.append((k,))
    n = len(columns)
    return DerivedModel(model, tuple(columns), (1.0,) * n, (0.0,) * n, label="merge")


def scale_lines(model: LossModel, factors: Sequence[float]) -> DerivedModel:
    """Multiply line k by ``factors[k]``."""
    factors = [float(f) for f in factors]
    if len(factors) != model.d:
        raise ValueError("one factor per line is required")
    cols, _, offs = _identity_parts(model.d)
    return DerivedModel(model, tuple(cols), tuple(factors), tuple(offs), label="scale")


def shift_lines(model: LossModel, shifts: Sequence[float]) -> DerivedModel:
    """Line k becomes ``X_k - shifts[k]``."""
    shifts = [float(a) for a in shifts]
    if len(shifts) != model.d:
        raise ValueError("one shift per line is required")
    cols, scales, _ = _identity_parts(model.d)
    return DerivedModel(model, tuple(cols), tuple(scales), tuple(-a for a in shifts), label="shift")


def add_deterministic_line(model: LossModel, c: float, position: int = 0) -> DerivedModel:
    """Insert a constant line of value ``c`` at ``position``."""
    if not c >= 0:
        raise ValueError("deterministic line value must be >= 0")
    cols, scales, offs = _identity_parts(model.d)
    cols.insert(position, ())
    scales.insert(position, 1.0)
    offs.insert(position, float(c))
    return DerivedModel(model, tuple(cols), tuple(scales), tuple(offs), label="riskless")
