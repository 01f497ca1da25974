import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from capalloc.indicators import (
    ABSOLUTE,
    Allocation,
    PenaltyFn,
    estimate_indicator,
    estimate_subgradient,
    indicator_sum_identity,
    optimality_residual,
)
from capalloc.risk_model import MarginalSpec, RiskModel, sample

HAND = np.array([[3.0, 1.0], [1.0, 3.0]])
SQUARE = PenaltyFn.power(2.0)


def simplex_point(rng, d, u):
    return Allocation.from_fractions(rng.dirichlet(np.ones(d)), u)


@pytest.fixture(scope="module")
def batch3():
    return sample(RiskModel((MarginalSpec.exponential(1.0), MarginalSpec.exponential(0.7),
                             MarginalSpec.lognormal(0.0, 0.6))), 100_000, 5)


# --- penalty and allocation ------------------------------------------------


def test_penalty_values_and_sign_convention():
    assert ABSOLUTE.value(-2.5) == 2.5 and ABSOLUTE.value(0.0) == 0.0
    assert ABSOLUTE.derivative(-0.1) == -1.0
    assert SQUARE.value(-3.0) == 9.0 and SQUARE.derivative(-3.0) == -6.0
    assert ABSOLUTE.one_homogeneous and not SQUARE.one_homogeneous
    with pytest.raises(ValueError):
        PenaltyFn.power(0.5)
    with pytest.raises(ValueError):
        PenaltyFn("huber")


def test_allocation_invariants():
    a = Allocation([1.0, 3.0], 4.0)
    assert a.fractions.tolist() == [0.25, 0.75]
    for parts, total in (([-1.0, 5.0], 4.0), ([1.0, 1.0], 3.0), ([5.0, 0.0], 4.0)):
        with pytest.raises(ValueError):
            Allocation(parts, total)
    with pytest.raises(ZeroDivisionError):
        Allocation([0.0, 0.0], 0.0).fractions


@given(hnp.arrays(float, st.integers(1, 8), elements=st.floats(1e-6, 1.0)), st.floats(0.0, 1e6))
def test_from_fractions_sums_exactly(w, u):
    alloc = Allocation.from_fractions(w / w.sum(), u)
    assert math.fsum(alloc.parts) == u
    assert np.all(alloc.parts >= 0)


# --- estimate_indicator ----------------------------------------------------


def test_hand_batch_value():
    est = estimate_indicator("I", HAND, Allocation([2.0, 2.0], 4.0))
    assert est.value == 1.0 and est.std_error == 0.0 and est.n == 2


def test_no_local_ruin_gives_zero():
    rng = np.random.default_rng(0)
    data = rng.uniform(0, 1, size=(100, 2))
    for kind in "IJ":
        assert estimate_indicator(kind, data, Allocation([5.0, 5.0], 10.0)).value == 0.0


def test_zero_capital_j_is_mean_total():
    data = sample(RiskModel((MarginalSpec.exponential(1.0),) * 2), 1000, 1).data
    est = estimate_indicator("J", data, Allocation([0.0, 0.0], 0.0))
    assert est.value == pytest.approx(data.sum(axis=1).mean(), rel=1e-14)


def test_value_matches_explicit_loop():
    data = np.array([[0.5, 2.0, 1.0], [3.0, 0.1, 0.2], [1.0, 1.0, 1.0], [0.0, 0.0, 4.0]])
    alloc = Allocation([1.0, 1.5, 0.5], 3.0)
    for kind, event in (("I", lambda s: s <= 3.0), ("J", lambda s: s >= 3.0)):
        for pen in (ABSOLUTE, SQUARE):
            rows = [sum(pen.value(v - x) for x, v in zip(r, alloc.parts) if x > v) if event(sum(r)) else 0.0
                    for r in data]
            assert estimate_indicator(kind, data, alloc, pen).value == pytest.approx(np.mean(rows), rel=1e-15)


def test_errors():
    with pytest.raises(ValueError):
        estimate_indicator("I", HAND, Allocation([1.0, 1.0, 2.0], 4.0))
    with pytest.raises(ValueError):
        estimate_indicator("I", np.empty((0, 2)), Allocation([2.0, 2.0], 4.0))
    with pytest.raises(ValueError):
        estimate_indicator("K", HAND, Allocation([2.0, 2.0], 4.0))


def test_record_fields():
    rec = estimate_indicator("I", HAND, Allocation([2.0, 2.0], 4.0)).to_record(
        Allocation([2.0, 2.0], 4.0), ABSOLUTE, "abc", 3)
    assert set(rec) == {"kind", "value", "std_error", "n", "allocation", "penalty", "model_digest", "seed"}


@given(st.integers(0, 10_000), st.sampled_from("IJ"))
def test_nonnegative(seed, kind):
    rng = np.random.default_rng(seed)
    data = rng.exponential(size=(50, 3))
    alloc = simplex_point(rng, 3, float(rng.uniform(0, 6)))
    assert estimate_indicator(kind, data, alloc).value >= 0


# --- subgradient -----------------------------------------------------------


def test_subgradient_hand_batch():
    g = estimate_subgradient("I", HAND, Allocation([2.0, 2.0], 4.0))
    assert g.tolist() == [-0.5, -0.5]


def test_subgradient_absolute_is_minus_probability(batch3):
    alloc = Allocation([1.0, 1.5, 1.5], 4.0)
    g = estimate_subgradient("I", batch3, alloc)
    res = optimality_residual("I", batch3, alloc)
    assert np.array_equal(g, -res.probabilities)


def test_subgradient_zero_share_dominates():
    rng = np.random.default_rng(4)
    data = rng.uniform(0.1, 1.0, size=(10, 3))
    g = estimate_subgradient("I", data, Allocation([10.0, 0.0, 0.0], 10.0))
    assert abs(g[1]) == abs(g).max() and abs(g[2]) == abs(g).max() and g[0] == 0.0


@pytest.mark.parametrize("parts", [(0.5, 2.0, 1.5), (2.0, 0.6, 1.4)])
@pytest.mark.parametrize("penalty", [ABSOLUTE, SQUARE], ids=["absolute", "power2"])
@pytest.mark.parametrize("kind", ["I", "J"])
def test_subgradient_differences_match_finite_differences(batch3, parts, penalty, kind):
    """Coordinate differences of the subgradient against central differences along e_i - e_j.

    Test points sit away from the optimum so the differences are not
    vanishingly small, and the span (0.02) is far above the row spacing of a
    1e5-row batch so the empirical function is smooth at that scale.
    """
    alloc = Allocation(parts, 4.0)
    g = estimate_subgradient(kind, batch3, alloc, penalty)
    h = 0.02
    for i, j in ((0, 1), (0, 2), (1, 2)):
        step = np.zeros(3)
        step[i], step[j] = h, -h
        up = estimate_indicator(kind, batch3, alloc.parts + step, penalty).value
        dn = estimate_indicator(kind, batch3, alloc.parts - step, penalty).value
        fd = (up - dn) / (2 * h)
        assert fd == pytest.approx(g[i] - g[j], rel=1e-2)


# --- residual --------------------------------------------------------------


def test_residual_hand_batch():
    res = optimality_residual("I", HAND, Allocation([2.0, 2.0], 4.0))
    assert res.probabilities.tolist() == [0.5, 0.5] and res.max_spread == 0.0
    res = optimality_residual("I", HAND, Allocation([4.0, 0.0], 4.0))
    assert res.probabilities.tolist() == [0.0, 1.0] and res.max_spread == 1.0


def test_residual_exchangeable_equal_split():
    data = sample(RiskModel((MarginalSpec.exponential(1.0),) * 3), 100_000, 8).data
    for kind in "IJ":
        res = optimality_residual(kind, data, Allocation([1.0, 1.0, 1.0], 3.0))
        assert res.max_spread <= 3 * res.std_error


def test_residual_monotone_in_d2():
    data = sample(RiskModel((MarginalSpec.exponential(1.0), MarginalSpec.exponential(2.0))), 5000, 2).data
    grid = np.linspace(0, 2, 81)
    p = np.array([optimality_residual("I", data, Allocation([v, 2 - v], 2.0)).probabilities for v in grid])
    assert np.all(np.diff(p[:, 0]) <= 0) and np.all(np.diff(p[:, 1]) >= 0)
    r = p[:, 0] - p[:, 1]
    assert np.count_nonzero(np.diff(np.sign(r[r != 0]))) <= 1


# --- sum identity and convexity --------------------------------------------


def test_sum_identity_hand_ties():
    ident = indicator_sum_identity(HAND, Allocation([2.0, 2.0], 4.0))
    assert ident == (0.0, 0.0, 2)


@pytest.mark.parametrize("penalty", [ABSOLUTE, SQUARE], ids=["absolute", "power2"])
def test_sum_identity_continuous(batch3, penalty):
    lhs, rhs, ties = indicator_sum_identity(batch3, Allocation([1.0, 1.5, 1.5], 4.0), penalty)
    assert ties == 0
    assert abs(lhs - rhs) <= 8 * math.ulp(rhs)


def test_sum_identity_zero_capital():
    data = sample(RiskModel((MarginalSpec.exponential(1.0),) * 2), 1000, 4).data
    lhs, rhs, ties = indicator_sum_identity(data, Allocation([0.0, 0.0], 0.0))
    assert ties == 0 and rhs == pytest.approx(data.sum(axis=1).mean(), rel=1e-14)
    assert abs(lhs - rhs) <= 8 * math.ulp(rhs)


@given(st.integers(0, 2**31), st.floats(0.0, 1.0), st.sampled_from("IJ"),
       st.sampled_from([ABSOLUTE, SQUARE]))
def test_fixed_batch_convexity(seed, lam, kind, penalty):
    rng = np.random.default_rng(seed)
    data = rng.exponential(size=(200, 3)) * [1.0, 1.5, 0.7]
    u = 3.0
    v, w = simplex_point(rng, 3, u).parts, simplex_point(rng, 3, u).parts
    mid = lam * v + (1 - lam) * w
    f = lambda x: estimate_indicator(kind, data, Allocation(x, u) if math.isclose(x.sum(), u) else x, penalty).value
    lhs = estimate_indicator(kind, data, mid * (u / mid.sum()), penalty).value
    rhs = lam * f(v) + (1 - lam) * f(w)
    assert lhs <= rhs + 1e-12 * max(1.0, rhs)
