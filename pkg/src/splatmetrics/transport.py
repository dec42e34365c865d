"""Discrete optimal transport between weighted component sets.

``sinkhorn`` is a log-domain (stabilized) scaling solver for the
entropy-regularized problem; the cost it reports is the realized transport
cost sum(coupling * cost) WITHOUT the entropy term, so it approximates the
unregularized optimum from above as epsilon shrinks. ``exact_ot`` is a
transportation-simplex solver with Bland's rule, intended as a test oracle
at small sizes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ConvergenceError, NumericError

DEFAULT_MAX_ITER = 10_000
DEFAULT_TOLERANCE = 1e-6
ORACLE_CELL_LIMIT = 4096

# epsilon as a fraction of the median positive cost entry
ADAPTIVE_EPSILON_FRACTION = 0.05


@dataclass(frozen=True)
class TransportPlan:
    """A coupling between two discrete measures and its realized cost."""

    coupling: np.ndarray
    cost: float
    iterations: int
    marginal_error: float
    duals: tuple[np.ndarray, np.ndarray] | None = field(default=None, compare=False)


def check_measure(weights, name: str = "measure") -> np.ndarray:
    """Validate a probability vector: positive entries summing to 1 within 1e-9."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size == 0:
        raise ContractError(f"{name} must be a nonempty 1-D array")
    if np.any(weights <= 0.0):
        raise ContractError(f"{name} must have strictly positive weights")
    total = weights.sum()
    if abs(total - 1.0) > 1e-9:
        raise ContractError(f"{name} weights sum to {total!r}, expected 1 within 1e-9")
    return weights


def check_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError("cost matrix must be 2-D")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix entries must be finite")
    if np.any(cost < 0.0):
        raise ContractError("cost matrix entries must be nonnegative")
    return cost


def default_epsilon(cost) -> float:
    """0.05 x median of the positive cost entries (1.0 for an all-zero cost)."""
    cost = np.asarray(cost, dtype=np.float64)
    positive = cost[cost > 0.0]
    if positive.size == 0:
        return 1.0
    return ADAPTIVE_EPSILON_FRACTION * float(np.median(positive))


def sinkhorn(cost, source, target, epsilon: float,
             max_iter: int = DEFAULT_MAX_ITER,
             tolerance: float = DEFAULT_TOLERANCE) -> TransportPlan:
    """Entropy-regularized transport via log-domain scaling iterations.

    Terminates when the worst marginal violation drops below ``tolerance``
    or after ``max_iter`` rounds. Hitting the cap with a violation above
    100x tolerance raises ConvergenceError carrying the partial plan.
    """
    cost = check_cost(cost)
    a = check_measure(source, "source")
    b = check_measure(target, "target")
    if cost.shape != (a.size, b.size):
        raise ContractError(
            f"cost shape {cost.shape} does not match weights ({a.size}, {b.size})"
        )
    if epsilon <= 0.0:
        raise ContractError("epsilon must be positive")
    if tolerance <= 0.0:
        raise ContractError("tolerance must be positive")

    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    work = np.empty_like(cost)
    iterations = 0
    error = np.inf
    for iterations in range(1, max_iter + 1):
        # row potentials; the same pass yields the current row marginals
        np.subtract(g[None, :], cost, out=work)
        work /= epsilon
        row_max = work.max(axis=1)
        np.subtract(work, row_max[:, None], out=work)
        np.exp(work, out=work)
        log_row_sum = row_max + np.log(work.sum(axis=1))
        error = np.abs(np.exp(f / epsilon + log_row_sum) - a).max()
        if error < tolerance:
            break
        f = epsilon * (log_a - log_row_sum)

        # column potentials; columns are exact right after this update
        np.subtract(f[:, None], cost, out=work)
        work /= epsilon
        col_max = work.max(axis=0)
        np.subtract(work, col_max[None, :], out=work)
        np.exp(work, out=work)
        g = epsilon * (log_b - (col_max + np.log(work.sum(axis=0))))

    np.add(f[:, None], g[None, :], out=work)
    work -= cost
    work /= epsilon
    np.exp(work, out=work)
    coupling = work
    realized = float(np.sum(coupling * cost))
    marginal_error = max(
        float(np.abs(coupling.sum(axis=1) - a).max()),
        float(np.abs(coupling.sum(axis=0) - b).max()),
    )
    plan = TransportPlan(
        coupling=coupling,
        cost=realized,
        iterations=iterations,
        marginal_error=marginal_error,
    )
    if marginal_error > 100.0 * tolerance:
        raise ConvergenceError(
            f"sinkhorn stopped after {iterations} iterations with marginal "
            f"violation {marginal_error:.3e} (> 100x tolerance)",
            plan=plan,
        )
    return plan


# ---------------------------------------------------------------------------
# Exact solver (transportation simplex, Bland's rule)
# ---------------------------------------------------------------------------

def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = a.size, b.size
    allocation = np.zeros((m, n))
    basis: list[tuple[int, int]] = []
    remaining_a = a.copy()
    remaining_b = b.copy()
    i = j = 0
    while True:
        amount = min(remaining_a[i], remaining_b[j])
        allocation[i, j] = amount
        basis.append((i, j))
        remaining_a[i] -= amount
        remaining_b[j] -= amount
        if i == m - 1 and j == n - 1:
            break
        # on ties move down, leaving a zero-allocation basic cell behind;
        # one step per cell keeps the basis a spanning tree of size m+n-1
        if remaining_a[i] <= remaining_b[j] and i < m - 1:
            i += 1
        else:
            j += 1
    return allocation, basis


def _solve_duals(cost: np.ndarray, basis, m: int, n: int):
    """Potentials u, v with u_i + v_j = C_ij on the basis tree (u_0 = 0)."""
    rows_adj: list[list[int]] = [[] for _ in range(m)]
    cols_adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in basis:
        rows_adj[i].append(j)
        cols_adj[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [(True, 0)]
    while stack:
        is_row, index = stack.pop()
        if is_row:
            for j in rows_adj[index]:
                if np.isnan(v[j]):
                    v[j] = cost[index, j] - u[index]
                    stack.append((False, j))
        else:
            for i in cols_adj[index]:
                if np.isnan(u[i]):
                    u[i] = cost[i, index] - v[index]
                    stack.append((True, i))
    if np.isnan(u).any() or np.isnan(v).any():
        raise NumericError("transport basis lost its spanning-tree structure")
    return u, v


def _basis_cycle(basis, entering, m: int, n: int):
    """Cells of the unique cycle closed by the entering cell.

    Returned in walk order starting at the basic cell sharing the entering
    row, so even positions carry '-' and odd positions '+'.
    """
    rows_adj: dict[int, list[int]] = {}
    cols_adj: dict[int, list[int]] = {}
    for i, j in basis:
        rows_adj.setdefault(i, []).append(j)
        cols_adj.setdefault(j, []).append(i)
    enter_row, enter_col = entering
    start = ("row", enter_row)
    goal = ("col", enter_col)
    parents = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        kind, index = node
        if kind == "row":
            neighbors = (("col", j) for j in rows_adj.get(index, ()))
        else:
            neighbors = (("row", i) for i in cols_adj.get(index, ()))
        for nxt in neighbors:
            if nxt not in parents:
                parents[nxt] = node
                queue.append(nxt)
    if goal not in parents:
        raise NumericError("transport basis lost its spanning-tree structure")
    nodes = [goal]
    while nodes[-1] != start:
        nodes.append(parents[nodes[-1]])
    nodes.reverse()  # row(enter) ... col(enter)
    cells = []
    for left, right in zip(nodes, nodes[1:]):
        if left[0] == "row":
            cells.append((left[1], right[1]))
        else:
            cells.append((right[1], left[1]))
    return cells


def exact_ot(cost, source, target, max_pivots: int = 200_000) -> TransportPlan:
    """Exact minimizer of the transport cost at oracle scale (<= 4096 cells).

    Transportation simplex with Bland's anti-cycling rule: the entering
    cell is the lowest flat index with negative reduced cost, and ties for
    the leaving cell break to the lowest index.
    """
    cost = check_cost(cost)
    a = check_measure(source, "source")
    b = check_measure(target, "target")
    m, n = cost.shape
    if (a.size, b.size) != (m, n):
        raise ContractError("cost shape does not match the weight vectors")
    if m * n > ORACLE_CELL_LIMIT:
        raise ContractError(f"oracle accepts at most {ORACLE_CELL_LIMIT} cells, got {m * n}")

    allocation, basis = _northwest_corner(a, b)
    reduced_tol = 1e-11 * max(1.0, float(np.abs(cost).max()))
    pivots = 0
    u = v = None
    while True:
        u, v = _solve_duals(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        in_basis = np.zeros((m, n), dtype=bool)
        for cell in basis:
            in_basis[cell] = True
        candidates = np.flatnonzero((reduced < -reduced_tol) & ~in_basis)
        if candidates.size == 0:
            break
        entering = (int(candidates[0]) // n, int(candidates[0]) % n)

        cycle = _basis_cycle(basis, entering, m, n)
        minus_cells = cycle[0::2]
        theta = min(allocation[cell] for cell in minus_cells)
        leaving = min(cell for cell in minus_cells if allocation[cell] <= theta)
        allocation[entering] += theta
        sign = -1.0
        for cell in cycle:
            allocation[cell] += sign * theta
            sign = -sign
        allocation[leaving] = 0.0
        basis = [cell for cell in basis if cell != leaving]
        basis.append(entering)
        pivots += 1
        if pivots > max_pivots:
            raise NumericError(f"transportation simplex exceeded {max_pivots} pivots")

    np.clip(allocation, 0.0, None, out=allocation)
    realized = float(np.sum(allocation * cost))
    marginal_error = max(
        float(np.abs(allocation.sum(axis=1) - a).max()),
        float(np.abs(allocation.sum(axis=0) - b).max()),
    )
    return TransportPlan(
        coupling=allocation,
        cost=realized,
        iterations=pivots,
        marginal_error=marginal_error,
        duals=(u, v),
    )
