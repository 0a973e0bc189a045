import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from oracles import brute_force_assignment, sq_cost_matrix
from pcatlas.assignment import (auction_eps_final, mean_pair_cost, pair_cost, solve_assignment)
from pcatlas.errors import SizeError, SolverError
from pcatlas.seeding import make_rng


def scipy_cost(rows, cols):
    c = sq_cost_matrix(rows, cols)
    r, k = linear_sum_assignment(c)
    return float(c[r, k].sum())


def _check_injective(c4r, m):
    assert len(np.unique(c4r)) == len(c4r)
    assert c4r.min() >= 0 and c4r.max() < m


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=1, max_value=7),
    st.integers(min_value=0, max_value=3),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_exact_matches_brute_force(n, extra, seed):
    rng = make_rng(seed)
    rows = rng.uniform(-1, 1, (n, 3))
    cols = rng.uniform(-1, 1, (min(n + extra, 8), 3))
    best, _ = brute_force_assignment(rows, cols)
    res = solve_assignment(rows, cols, "exact")
    _check_injective(res.col_for_row, len(cols))
    assert res.cost == pytest.approx(best, rel=1e-12, abs=1e-14)


def test_exact_two_poles():
    rows = np.array([[0.9, 0, 0], [-0.9, 0, 0]])
    cols = np.array([[0.0, 1, 0], [-1.0, 0, 0], [0.0, 0, 1], [1.0, 0, 0]])
    res = solve_assignment(rows, cols, "exact")
    np.testing.assert_array_equal(res.col_for_row, [3, 1])


def test_exact_identity_has_zero_cost():
    pts = make_rng(3).normal(size=(50, 3))
    res = solve_assignment(pts, pts, "exact")
    assert res.cost == 0.0
    np.testing.assert_array_equal(res.col_for_row, np.arange(50))


@pytest.mark.parametrize("n,m", [(200, 200), (150, 400), (1, 30), (299, 300)])
def test_exact_matches_scipy_cold(n, m):
    rng = make_rng(n * 1000 + m)
    rows, cols = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (m, 3))
    res = solve_assignment(rows, cols, "exact")
    _check_injective(res.col_for_row, m)
    assert res.cost == pytest.approx(scipy_cost(rows, cols), rel=1e-10)


@pytest.mark.parametrize("n,m", [(1024, 1024), (700, 1500)])
def test_exact_warm_start_matches_scipy(n, m):
    # Large enough to take the auction-seeded path.
    rng = make_rng(n + m)
    rows, cols = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (m, 3))
    warm = solve_assignment(rows, cols, "exact")
    cold = solve_assignment(rows, cols, "exact", warm_start=False)
    want = scipy_cost(rows, cols)
    assert warm.cost == pytest.approx(want, rel=1e-10)
    assert cold.cost == pytest.approx(want, rel=1e-10)


@pytest.mark.parametrize("n,m", [(120, 120), (80, 200)])
def test_exact_with_arbitrary_prices_stays_optimal(n, m):
    rng = make_rng(7 * n + m)
    rows, cols = rng.uniform(-1, 1, (n, 2)), rng.uniform(-1, 1, (m, 2))
    prices = rng.normal(scale=0.5, size=m)
    res = solve_assignment(rows, cols, "exact", init_prices=prices)
    assert res.cost == pytest.approx(scipy_cost(rows, cols), rel=1e-10)


def test_exact_handles_duplicate_points():
    rng = make_rng(5)
    cols = rng.uniform(-1, 1, (40, 3))
    rows = np.repeat(cols[:10], 3, axis=0)
    res = solve_assignment(rows, cols, "exact")
    _check_injective(res.col_for_row, 40)
    assert res.cost == pytest.approx(scipy_cost(rows, cols), rel=1e-10)


@pytest.mark.parametrize("n,m", [(300, 300), (200, 500), (64, 64)])
def test_auction_is_eps_optimal(n, m):
    rng = make_rng(n + 3 * m)
    rows, cols = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (m, 3))
    res = solve_assignment(rows, cols, "auction")
    _check_injective(res.col_for_row, m)
    exact = scipy_cost(rows, cols)
    assert res.cost >= exact * (1 - 1e-12)
    assert res.cost <= exact * (1 + 1e-5)
    # The documented bound: within m * eps_final of optimal.
    assert res.cost - exact <= m * auction_eps_final(rows, cols) + 1e-12


def test_auction_bid_cap_raises_solver_error():
    rng = make_rng(0)
    rows, cols = rng.uniform(-1, 1, (100, 3)), rng.uniform(-1, 1, (100, 3))
    with pytest.raises(SolverError) as info:
        solve_assignment(rows, cols, "auction", max_bids=10)
    assert info.value.achieved_eps is not None


def test_reported_cost_matches_recomputation():
    rng = make_rng(1)
    rows, cols = rng.uniform(-1, 1, (90, 3)), rng.uniform(-1, 1, (100, 3))
    for method in ("exact", "auction"):
        res = solve_assignment(rows, cols, method)
        c = sq_cost_matrix(rows, cols)
        assert res.cost == pytest.approx(c[np.arange(90), res.col_for_row].sum(), rel=1e-9)


def test_more_rows_than_cols():
    with pytest.raises(SizeError):
        solve_assignment(np.zeros((3, 3)), np.zeros((2, 3)))


def test_dimension_mismatch():
    with pytest.raises(SizeError):
        solve_assignment(np.zeros((2, 3)), np.zeros((2, 2)))


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((2, 3)), np.ones((2, 3)), "hungarian")


def test_empty_rows():
    res = solve_assignment(np.zeros((0, 3)), np.ones((4, 3)))
    assert res.cost == 0.0 and len(res.col_for_row) == 0


def test_mean_pair_cost_closed_form():
    rng = make_rng(2)
    rows, cols = rng.normal(size=(30, 3)), rng.normal(size=(45, 3))
    assert mean_pair_cost(rows, cols) == pytest.approx(sq_cost_matrix(rows, cols).mean(), rel=1e-12)


def test_pair_cost():
    rows = np.array([[0.0, 0], [1, 1]])
    cols = np.array([[1.0, 0], [0, 0], [3, 1]])
    assert pair_cost(rows, cols, np.array([1, 2])) == 4.0
