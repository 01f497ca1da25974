import csv
import json

import numpy as np
import pytest
import yaml

from capalloc import optimizer
from capalloc.cli import main
from capalloc.indicators import Allocation, estimate_indicator
from capalloc.reporting import csv_text, fmt, write_atomic


def scenario(tmp_path, name="s.yaml", **doc):
    base = {
        "lines": [{"name": f"l{k}", "family": "exponential", "params": {"rate": 1.0}} for k in range(3)],
        "capital": 3.0,
        "indicator": "I",
        "seed": 5,
    }
    base.update(doc)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(base))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_allocate_exchangeable(tmp_path):
    out = tmp_path / "out"
    assert main(["allocate", "--scenario", scenario(tmp_path), "--out", str(out)]) == 0
    rows = read_csv(out / "allocation.csv")
    assert [r["line"] for r in rows] == ["l0", "l1", "l2"]
    assert all(abs(float(r["share"]) - 1.0) <= 0.02 * 3 for r in rows)
    diag = json.loads((out / "diagnostics.json").read_text())
    assert {"residual_spread", "indicator", "solver", "seed"} <= set(diag)
    assert diag["seed"] == 5 and diag["solver"] == "mirror_kw"
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "iter,u_1,u_2,u_3,step,indicator_estimate"


def test_allocate_comonotone_ratio(tmp_path):
    path = scenario(tmp_path, lines=[{"family": "exponential", "params": {"rate": 1.0}},
                                     {"family": "exponential", "params": {"rate": 0.5}}],
                    dependence={"kind": "comonotonic"})
    out = tmp_path / "out"
    assert main(["allocate", "--scenario", path, "--out", str(out)]) == 0
    shares = [float(r["share"]) for r in read_csv(out / "allocation.csv")]
    assert shares == pytest.approx([1.0, 2.0], abs=0.06)


def test_allocate_byte_identical_reruns(tmp_path):
    path = scenario(tmp_path)
    codes = {main(["allocate", "--scenario", path, "--out", str(tmp_path / d), "--set", "solver.iterations=300"])
             for d in ("a", "b")}
    assert len(codes) == 1 and codes <= {0, 2}
    for f in ("allocation.csv", "trace.csv", "diagnostics.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_allocate_error_leaves_nothing(tmp_path, capsys):
    lines = [{"family": "exponential", "params": {"rate": 1.0}}] * 5
    out = tmp_path / "out"
    rc = main(["allocate", "--scenario", scenario(tmp_path, lines=lines), "--out", str(out),
               "--solver", "grid_oracle"])
    assert rc == 1 and "d <= 4" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_allocate_invalid_scenario(tmp_path, capsys):
    bad = scenario(tmp_path, lines=[{"family": "exponential", "params": {"rate": -2.0}}])
    assert main(["allocate", "--scenario", bad, "--out", str(tmp_path / "o")]) == 1
    assert "marginals[0].rate" in capsys.readouterr().err


def test_allocate_boundary_exit_2(tmp_path):
    # under J a riskless line worth more than the capital is always short, so it takes everything
    path = scenario(tmp_path, lines=[{"family": "deterministic", "params": {"c": 5.0}},
                                     {"family": "exponential", "params": {"rate": 1.0}}], capital=1.0,
                    indicator="J")
    out = tmp_path / "out"
    assert main(["allocate", "--scenario", path, "--out", str(out), "--solver", "bivariate_bisection"]) == 2
    assert "boundary" in json.loads((out / "diagnostics.json").read_text())["flags"]


def test_grid_resolution_flag(tmp_path):
    out = tmp_path / "out"
    assert main(["allocate", "--scenario", scenario(tmp_path), "--out", str(out),
                 "--solver", "grid_oracle", "--resolution", "0.05"]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["solver_config"]["resolution"] == pytest.approx(0.15)


def test_coherence_filtered(tmp_path):
    out = tmp_path / "out"
    rc = main(["coherence", "--out", str(out), "--property", "monotonicity", "--samples", "20000",
               "--threads", "1"])
    assert rc == 0
    rows = read_csv(out / "coherence.csv")
    assert rows and {r["property"] for r in rows} == {"monotonicity"}
    assert list(rows[0]) == ["property", "model_digest", "kind", "deviation", "threshold", "passed", "skipped_reason"]
    bundle = json.loads((out / "coherence.json").read_text())
    assert bundle["passed"] and bundle["suite_version"] == "1"


def test_coherence_broken_solver_exit_3(tmp_path, monkeypatch, capsys):
    def broken(batch, u, kind="I", *args, **kwargs):
        batch = np.asarray(batch)
        parts = np.zeros(batch.shape[1])
        parts[0] = u
        alloc = Allocation(parts, u)
        return optimizer.AllocationResult(alloc, estimate_indicator(kind, batch, alloc), 0.0, 0.0, "broken")

    for name in list(optimizer.SOLVERS):
        monkeypatch.setitem(optimizer.SOLVERS, name, broken)
    out = tmp_path / "out"
    rc = main(["coherence", "--out", str(out), "--property", "symmetry", "--samples", "2000"])
    assert rc == 3
    failing = [r for r in read_csv(out / "coherence.csv") if r["passed"] == "false"]
    assert failing and "FAIL symmetry" in capsys.readouterr().err


def test_coherence_on_scenario(tmp_path):
    out = tmp_path / "out"
    path = scenario(tmp_path, solver={"name": "grid_oracle", "resolution": 0.01}, samples=20000)
    assert main(["coherence", "--scenario", path, "--out", str(out)]) == 0
    rows = read_csv(out / "coherence.csv")
    skipped = {r["property"] for r in rows if r["skipped_reason"]}
    assert "comonotonic_additivity" in skipped  # independent lines
    assert len(rows) == 9


def test_compare_heterogeneous(tmp_path):
    path = scenario(tmp_path, lines=[{"name": "a", "family": "exponential", "params": {"rate": 2.0}},
                                     {"name": "b", "family": "exponential", "params": {"rate": 1.0}}],
                    capital=2.0, solver={"name": "grid_oracle"})
    out = tmp_path / "out"
    assert main(["compare", "--scenario", path, "--out", str(out)]) in (0, 2)
    scores = {r["method"]: r for r in read_csv(out / "compare_indicators.csv")}
    assert float(scores["optimal_I"]["I"]) <= min(float(s["I"]) for s in scores.values())
    assert float(scores["optimal_J"]["J"]) <= min(float(s["J"]) for s in scores.values())
    alloc = read_csv(out / "compare_allocations.csv")
    assert [r["line"] for r in alloc] == ["a", "b"]


def test_compare_exchangeable_agree(tmp_path):
    out = tmp_path / "out"
    assert main(["compare", "--scenario", scenario(tmp_path), "--out", str(out)]) == 0
    for row in read_csv(out / "compare_allocations.csv"):
        vals = [float(row[m]) for m in ("optimal_I", "optimal_J", "proportional")]
        assert max(vals) - min(vals) <= 0.02 * 3 * 2


def test_compare_deterministic_line(tmp_path):
    path = scenario(tmp_path, lines=[{"family": "deterministic", "params": {"c": 1.0}},
                                     {"family": "exponential", "params": {"rate": 1.0}},
                                     {"family": "exponential", "params": {"rate": 1.0}}],
                    solver={"name": "grid_oracle"})
    out = tmp_path / "out"
    main(["compare", "--scenario", path, "--out", str(out)])
    first = read_csv(out / "compare_allocations.csv")[0]
    assert float(first["optimal_I"]) == pytest.approx(1.0, abs=0.03)
    assert abs(float(first["proportional"]) - float(first["optimal_I"])) > 0.0


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit):
        main(["allocate", "--out", str(tmp_path)])
    assert main(["allocate", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 1
    assert main(["coherence", "--out", str(tmp_path / "o"), "--threads", "0"]) == 1


def test_fmt_full_precision():
    assert fmt(0.1 + 0.2) == "0.30000000000000004"
    assert fmt(np.float64(1e-300)) == "1e-300"
    assert fmt(True) == "true" and fmt(None) == "" and fmt(np.int64(3)) == "3"
    assert fmt(float("nan")) == "nan"
    assert csv_text(["a"], [[1.5]]) == "a\n1.5\n"


def test_write_atomic_all_or_nothing(tmp_path):
    with pytest.raises(OSError):
        write_atomic(tmp_path, {"ok.csv": "x\n", "missing/dir.csv": "y\n"})
    assert list(tmp_path.iterdir()) == []
    write_atomic(tmp_path, {"ok.csv": "x\n"})
    assert (tmp_path / "ok.csv").read_text() == "x\n" and len(list(tmp_path.iterdir())) == 1
