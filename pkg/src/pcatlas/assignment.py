"""Linear assignment between two point sets under squared Euclidean cost.

Two solvers, both written against point coordinates so the n x m cost matrix
is evaluated on the fly and never stored:

* ``exact``: shortest augmenting path with dual potentials (the rectangular
  Jonker-Volgenant scheme). Optimal. Large instances are warm-started from
  the prices of a coarse auction: the columns that auction uses define a
  square subproblem that is solved exactly, and a final repair pass against
  the remaining columns restores optimality for the full problem.
* ``auction``: Gauss-Seidel forward auction with epsilon scaling. The result
  is within ``m * eps_final`` of optimal in total cost.

Both are deterministic: every scan runs in index order and ties go to the
lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import SizeError, SolverError

EXACT_MAX_SITES = 4096
AUCTION_REL_EPS = 1e-7
AUCTION_SCALING = 5.0
AUCTION_BIDS_PER_OBJECT = 20000
AUCTION_CACHE = 16
EXACT_WARM_REL_EPS = 1e-5
EXACT_WARM_MIN_PAIRS = 1 << 20


@njit(cache=True, inline="always")
def _sqdist(X, i, Y, j):
    s = 0.0
    for k in range(X.shape[1]):
        d = X[i, k] - Y[j, k]
        s += d * d
    return s


@njit(cache=True)
def _lsap_core(X, Y, u, v, col4row, row4col, v_sink):
    """Augment every unmatched row along a shortest path, in row order.

    The state must be dual feasible for matched rows (``c - u - v >= 0``,
    with equality on matched pairs). With more columns than rows, unmatched
    columns reach a virtual sink through edges of reduced length
    ``v[j] - v_sink``; this needs every unmatched column dual to be at least
    ``v_sink`` and every matched one at most ``v_sink``. The search keeps
    those invariants, so the final duals certify optimality.
    """
    n = X.shape[0]
    m = Y.shape[0]
    rect = n < m
    shortest = np.empty(m)
    path = np.empty(m, dtype=np.int64)
    remaining = np.empty(m, dtype=np.int64)
    sr = np.zeros(n, dtype=np.bool_)
    sc = np.zeros(m, dtype=np.bool_)
    for cur in range(n):
        if col4row[cur] != -1:
            continue
        for j in range(m):
            shortest[j] = np.inf
            path[j] = -1
            sc[j] = False
            # Reverse order so that after swap-removal ties resolve to low columns.
            remaining[j] = m - 1 - j
        for r in range(n):
            sr[r] = False
        num_rem = m
        min_val = 0.0
        i = cur
        sink = -1
        best_t = np.inf
        best_tj = -1
        while sink == -1:
            index = -1
            lowest = np.inf
            if i >= 0:
                sr[i] = True
            for it in range(num_rem):
                j = remaining[it]
                if i >= 0:
                    r = min_val + _sqdist(X, i, Y, j) - u[i] - v[j]
                    if r < shortest[j]:
                        path[j] = i
                        shortest[j] = r
                        if rect and row4col[j] == -1:
                            key = r + (v[j] - v_sink)
                            if key < best_t or (key == best_t and j < best_tj):
                                best_t = key
                                best_tj = j
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            if rect and best_t <= lowest:
                min_val = best_t
                sink = best_tj
                break
            min_val = lowest
            j = remaining[index]
            sc[j] = True
            num_rem -= 1
            remaining[index] = remaining[num_rem]
            if row4col[j] == -1:
                if not rect:
                    sink = j
                # A settled unmatched column has no row to expand.
                i = -1
            else:
                i = row4col[j]
        u[cur] += min_val
        for r in range(n):
            if sr[r] and r != cur:
                u[r] += min_val - shortest[col4row[r]]
        for j in range(m):
            if sc[j]:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur:
                break


@njit(cache=True)
def _lsap_cold(X, Y):
    """Plain rectangular shortest augmenting path from zero duals."""
    n = X.shape[0]
    m = Y.shape[0]
    u = np.zeros(n)
    v = np.zeros(m)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(m, -1, dtype=np.int64)
    _lsap_core(X, Y, u, v, col4row, row4col, 0.0)
    return col4row, u, v


@njit(cache=True)
def _lsap_square_warm(X, Y, v0):
    """Square problem from column duals ``v0``.

    Each row first takes its cheapest column under ``v0`` when that column
    is still free; such a pair is tight with ``u[i]`` at its feasible
    maximum, so the remaining rows start from a valid state.
    """
    n = X.shape[0]
    m = Y.shape[0]
    u = np.zeros(n)
    v = v0.copy()
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(m, -1, dtype=np.int64)
    for i in range(n):
        best = np.inf
        bj = -1
        for j in range(m):
            r = _sqdist(X, i, Y, j) - v[j]
            if r < best:
                best = r
                bj = j
        u[i] = best
        if row4col[bj] == -1:
            row4col[bj] = i
            col4row[i] = bj
    _lsap_core(X, Y, u, v, col4row, row4col, 0.0)
    return col4row, u, v


@njit(cache=True)
def _lsap_extend(X, Y, used, col4row_sub, u, v_sub):
    """Extend an optimal solution on the columns ``used`` to all of ``Y``.

    Unused columns take their largest feasible dual ``min_i(c_ij - u_i)``.
    The sink dual is the smallest of those, and matched columns whose dual
    exceeds it are released; with nothing released the solution is already
    optimal. Released rows are then re-augmented against every column.
    Returns (col4row, number of released rows).
    """
    n = X.shape[0]
    m = Y.shape[0]
    v = np.full(m, np.inf)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(m, -1, dtype=np.int64)
    for i in range(n):
        j = used[col4row_sub[i]]
        col4row[i] = j
        row4col[j] = i
    for k in range(len(used)):
        v[used[k]] = v_sub[k]
    v_sink = np.inf
    for j in range(m):
        if row4col[j] != -1:
            continue
        bound = np.inf
        for i in range(n):
            bound = min(bound, _sqdist(X, i, Y, j) - u[i])
        v[j] = bound
        v_sink = min(v_sink, bound)
    released = 0
    for j in range(m):
        if row4col[j] != -1 and v[j] > v_sink:
            col4row[row4col[j]] = -1
            row4col[j] = -1
            released += 1
    _lsap_core(X, Y, u, v, col4row, row4col, v_sink)
    return col4row, released


@njit(cache=True)
def _tree_better(va, ia, vb, ib):
    return va < vb or (va == vb and ia < ib)


@njit(cache=True)
def _tree_set(tval, tidx, size, j, value):
    k = size + j
    tval[k] = value
    k >>= 1
    while k >= 1:
        a = 2 * k
        b = a + 1
        if _tree_better(tval[b], tidx[b], tval[a], tidx[a]):
            tval[k] = tval[b]
            tidx[k] = tidx[b]
        else:
            tval[k] = tval[a]
            tidx[k] = tidx[a]
        k >>= 1


@njit(cache=True)
def _tree_min_excluding(tval, tidx, size, j):
    # Smallest price among all leaves except j: best sibling on the leaf-to-root path.
    best_v = np.inf
    best_i = -1
    k = size + j
    while k > 1:
        s = k ^ 1
        if _tree_better(tval[s], tidx[s], best_v, best_i if best_i >= 0 else 1 << 62):
            best_v = tval[s]
            best_i = tidx[s]
        k >>= 1
    return best_v


@njit(cache=True)
def _full_scan(X, Y, i, prices, cache_j, cache_top):
    """Scan every object for bidder i and refill its cache with the top L.

    ``cache_top[i]`` receives the best value among the objects left out.
    """
    m = Y.shape[0]
    L = cache_j.shape[1]
    top_v = np.full(L + 1, -np.inf)
    top_j = np.full(L + 1, -1, dtype=np.int64)
    filled = 0
    for j in range(m):
        val = -_sqdist(X, i, Y, j) - prices[j]
        if filled == L + 1 and val <= top_v[L]:
            continue
        # Descending insertion; equal values keep scan (index) order.
        pos = filled if filled < L + 1 else L
        while pos > 0 and top_v[pos - 1] < val:
            if pos < L + 1:
                top_v[pos] = top_v[pos - 1]
                top_j[pos] = top_j[pos - 1]
            pos -= 1
        top_v[pos] = val
        top_j[pos] = j
        if filled < L + 1:
            filled += 1
    for t in range(L):
        cache_j[i, t] = top_j[t]
    cache_top[i] = top_v[L] if L < m else -np.inf


@njit(cache=True)
def _best_two_cached(X, Y, i, prices, cache_j):
    best = -1
    w1 = -np.inf
    w2 = -np.inf
    for t in range(cache_j.shape[1]):
        j = cache_j[i, t]
        val = -_sqdist(X, i, Y, j) - prices[j]
        if val > w1 or (val == w1 and j < best):
            w2 = w1
            w1 = val
            best = j
        elif val > w2:
            w2 = val
    return best, w1, w2


@njit(cache=True)
def _auction_phases(X, Y, prices, eps_start, eps_final, theta, max_bids, cache_size):
    """Epsilon-scaling Gauss-Seidel forward auction; ``prices`` updated in place.

    Bidders 0..n-1 are the rows. Bidders n..m-1 are zero-benefit dummies that
    take the cheapest object through a min-price segment tree, which turns the
    rectangular problem into a square one. Each real bidder caches its top
    ``cache_size`` objects from its last full scan plus the best value outside
    that set. Prices only rise, so while the cached second-best value still
    reaches that bound the cached bid equals a full-scan bid.

    Returns (object per real bidder, final eps, bids, ok).
    """
    n = X.shape[0]
    m = Y.shape[0]
    L = min(cache_size, m)
    cache_j = np.full((n, L), -1, dtype=np.int64)
    cache_top = np.full(n, np.inf)
    owner = np.full(m, -1, dtype=np.int64)
    assigned = np.full(m, -1, dtype=np.int64)
    queue = np.empty(m, dtype=np.int64)
    size = 1
    while size < m:
        size <<= 1
    tval = np.full(2 * size, np.inf)
    tidx = np.full(2 * size, 1 << 62, dtype=np.int64)
    for j in range(m):
        tval[size + j] = prices[j]
        tidx[size + j] = j
    for k in range(size - 1, 0, -1):
        a = 2 * k
        b = a + 1
        if _tree_better(tval[b], tidx[b], tval[a], tidx[a]):
            tval[k] = tval[b]
            tidx[k] = tidx[b]
        else:
            tval[k] = tval[a]
            tidx[k] = tidx[a]
    eps = eps_start
    bids = 0
    while True:
        for k in range(m):
            owner[k] = -1
            assigned[k] = -1
            queue[k] = k
        head = 0
        pending = m
        while pending > 0:
            i = queue[head]
            head = (head + 1) % m
            pending -= 1
            if i >= n:
                best = tidx[1]
                w1 = -tval[1]
                w2 = -_tree_min_excluding(tval, tidx, size, best)
            else:
                best, w1, w2 = -1, -np.inf, -np.inf
                if cache_top[i] < np.inf:
                    best, w1, w2 = _best_two_cached(X, Y, i, prices, cache_j)
                    if w2 < cache_top[i]:
                        best = -1
                if best < 0:
                    _full_scan(X, Y, i, prices, cache_j, cache_top)
                    best, w1, w2 = _best_two_cached(X, Y, i, prices, cache_j)
                    w2 = max(w2, cache_top[i])
            if w2 == -np.inf:
                w2 = w1
            prices[best] += w1 - w2 + eps
            _tree_set(tval, tidx, size, best, prices[best])
            prev = owner[best]
            owner[best] = i
            assigned[i] = best
            if prev >= 0:
                assigned[prev] = -1
                queue[(head + pending) % m] = prev
                pending += 1
            bids += 1
            if bids > max_bids:
                return assigned[:n].copy(), eps, bids, False
        if eps <= eps_final:
            break
        eps = max(eps / theta, eps_final)
    return assigned[:n].copy(), eps, bids, True


def _solve_exact(rows, cols, prices, have_prices, auto_warm, cache_size):
    n, m = len(rows), len(cols)
    if n == m and (have_prices or auto_warm):
        if not have_prices:
            _coarse_auction(rows, cols, prices, cache_size)
        c4r = _lsap_square_warm(rows, cols, -prices)[0]
    elif have_prices or auto_warm:
        # The coarse auction names the columns worth using; solve that square
        # subproblem exactly, then repair against the columns left out.
        held, ok = _coarse_auction(rows, cols, prices, cache_size)
        if not ok:
            return _solve_exact(rows, cols, prices, False, False, cache_size)
        used = np.sort(held)
        sub, u, v = _lsap_square_warm(rows, cols[used], -prices[used])
        c4r = _lsap_extend(rows, cols, used, sub, u, v)[0]
    else:
        c4r = _lsap_cold(rows, cols)[0]
    return c4r, pair_cost(rows, cols, c4r), "exact"


def _coarse_auction(rows, cols, prices, cache_size):
    """Cheap auction run whose prices (updated in place) seed the exact solver."""
    mean = mean_pair_cost(rows, cols)
    held, _, _, ok = _auction_phases(rows, cols, prices, mean / 32.0, EXACT_WARM_REL_EPS * mean,
                                     AUCTION_SCALING, AUCTION_BIDS_PER_OBJECT * len(cols), cache_size)
    return held, ok


@dataclass(frozen=True, eq=False)
class SolveResult:
    col_for_row: np.ndarray
    cost: float
    method: str
    eps: float = 0.0
    bids: int = 0


def pair_cost(rows: np.ndarray, cols: np.ndarray, col_for_row: np.ndarray) -> float:
    """Sum of squared distances between ``rows[i]`` and ``cols[col_for_row[i]]``."""
    if len(col_for_row) == 0:
        return 0.0
    diff = rows - cols[col_for_row]
    return float(np.sum(np.sum(diff * diff, axis=1)))


def mean_pair_cost(rows: np.ndarray, cols: np.ndarray) -> float:
    """Mean of the full squared-distance matrix, in closed form."""
    return float(np.mean(np.sum(rows**2, 1)) + np.mean(np.sum(cols**2, 1))
                 - 2.0 * rows.mean(0) @ cols.mean(0))


def auction_eps_final(rows, cols, rel_eps: float = AUCTION_REL_EPS) -> float:
    return max(rel_eps * mean_pair_cost(rows, cols), 1e-300)


def solve_assignment(rows, cols, method: str = "exact", *, init_prices=None, eps_start=None,
                     rel_eps: float = AUCTION_REL_EPS, max_bids=None,
                     cache_size: int = AUCTION_CACHE, warm_start: bool = True) -> SolveResult:
    """Injectively assign every row point to a distinct column point.

    Args:
        rows: (n, d) points to place.
        cols: (m, d) target points, m >= n.
        method: ``"exact"`` or ``"auction"``.
        init_prices: optional (m,) starting column prices, e.g. a known
            transport potential. Speeds both solvers up without changing what
            they guarantee.
        eps_start: auction only; first scaling phase epsilon
            (default: mean pair cost / 32).
        rel_eps: auction only; final epsilon as a fraction of the mean pair cost.
            Total cost is then within ``m * eps_final`` of optimal.
        max_bids: auction only; bid cap before raising SolverError.
            Defaults to ``AUCTION_BIDS_PER_OBJECT * m``.
        cache_size: auction only; objects each bidder remembers between full scans.
        warm_start: exact only; on large instances without ``init_prices``,
            seed the dual with prices from a coarse auction. The result is
            still exactly optimal; only the running time changes.

    Raises:
        SizeError: more rows than columns.
        SolverError: the auction hit its bid cap.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    n, m = len(rows), len(cols)
    if rows.ndim != 2 or cols.ndim != 2 or rows.shape[1] != cols.shape[1]:
        raise SizeError("rows and cols must be (n, d) and (m, d) with equal d")
    if n > m:
        raise SizeError(f"cannot assign {n} points injectively to {m} sites")
    prices = np.zeros(m) if init_prices is None else np.array(init_prices, dtype=np.float64)
    if prices.shape != (m,):
        raise SizeError("init_prices needs one entry per column")
    if n == 0:
        return SolveResult(np.zeros(0, dtype=np.int64), 0.0, method)
    if method == "exact":
        return SolveResult(*_solve_exact(rows, cols, prices, init_prices is not None,
                                         warm_start and n * m >= EXACT_WARM_MIN_PAIRS, cache_size))
    if method != "auction":
        raise ValueError(f"unknown solver {method!r}")
    eps_final = auction_eps_final(rows, cols, rel_eps)
    if eps_start is None:
        eps_start = mean_pair_cost(rows, cols) / 32.0
    eps_start = max(float(eps_start), eps_final)
    cap = AUCTION_BIDS_PER_OBJECT * m if max_bids is None else int(max_bids)
    c4r, eps, bids, ok = _auction_phases(rows, cols, prices, eps_start, eps_final,
                                         AUCTION_SCALING, cap, cache_size)
    if not ok:
        raise SolverError(
            f"auction did not converge within {cap} bids "
            f"(reached eps={eps:.3g}, target {eps_final:.3g})",
            achieved_eps=float(eps),
        )
    return SolveResult(c4r, pair_cost(rows, cols, c4r), "auction", float(eps), int(bids))
