"""Matching distances between persistence diagrams and between point sets."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import cdist

from .diagram import PersistenceDiagram

_SQRT2 = math.sqrt(2.0)


def _split(d) -> tuple[np.ndarray, np.ndarray]:
    pairs = d.pairs if isinstance(d, PersistenceDiagram) else np.asarray(d, dtype=np.float64).reshape(-1, 2)
    fin = np.isfinite(pairs[:, 1])
    return pairs[fin], np.sort(pairs[~fin, 0])


def _essential_cost(a: np.ndarray, b: np.ndarray, reduce) -> float:
    """Infinite bars only match infinite bars; sorted order is optimal in 1-D."""
    if a.shape != b.shape:
        return math.inf
    if a.size == 0:
        return 0.0
    return float(reduce(np.abs(a - b)))


def _augmented_costs(f: np.ndarray, g: np.ndarray, metric: str, diag_scale: float) -> np.ndarray:
    """(n+m) x (m+n) cost matrix with diagonal copies for both diagrams."""
    n, m = len(f), len(g)
    big = np.zeros((n + m, m + n))
    if n and m:
        big[:n, :m] = cdist(f, g, metric=metric)
    pf = (f[:, 1] - f[:, 0]) / diag_scale if n else np.empty(0)
    pg = (g[:, 1] - g[:, 0]) / diag_scale if m else np.empty(0)
    # point i of f -> its own diagonal projection only
    upper = np.full((n, n), math.inf)
    np.fill_diagonal(upper, pf)
    lower = np.full((m, m), math.inf)
    np.fill_diagonal(lower, pg)
    big[:n, m:] = upper
    big[n:, :m] = lower
    return big


def wasserstein1(F, G) -> float:
    """(1, 2)-Wasserstein distance: summed Euclidean matching cost.

    Points may be matched to the diagonal at cost ``(death - birth) / sqrt(2)``.
    Returns ``inf`` when the numbers of essential bars differ.
    """
    f, fe = _split(F)
    g, ge = _split(G)
    ess = _essential_cost(fe, ge, np.sum)
    if math.isinf(ess):
        return math.inf
    if len(f) + len(g) == 0:
        return ess
    cost = _augmented_costs(f, g, "euclidean", _SQRT2)
    finite = np.where(np.isinf(cost), 1e300, cost)
    rows, cols = linear_sum_assignment(finite)
    return ess + float(cost[rows, cols].sum())


def bottleneck(F, G) -> float:
    """Bottleneck distance with l-infinity ground cost.

    Exact: binary search over the candidate costs, testing each threshold
    for a perfect matching in the augmented bipartite graph.
    """
    f, fe = _split(F)
    g, ge = _split(G)
    ess = _essential_cost(fe, ge, np.max)
    if math.isinf(ess):
        return math.inf
    if len(f) + len(g) == 0:
        return ess
    cost = _augmented_costs(f, g, "chebyshev", 2.0)
    # diagonal-to-diagonal entries are free
    cost[len(f):, len(g):] = 0.0
    candidates = np.unique(cost[np.isfinite(cost)])
    size = cost.shape[0]

    def feasible(eps: float) -> bool:
        graph = csr_matrix(cost <= eps)
        match = maximum_bipartite_matching(graph, perm_type="column")
        return bool(np.all(match >= 0)) and match.shape[0] == size

    lo, hi = 0, len(candidates) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(candidates[mid]):
            hi = mid
        else:
            lo = mid + 1
    return max(ess, float(candidates[lo]))


def pointset_wasserstein1(P, Q, normalize: bool = True) -> float:
    """Optimal-transport distance between equal-size point sets.

    ``min_pi (1/M) sum_i |p_i - q_pi(i)|``; with ``normalize=False`` the
    ``1/M`` factor is dropped.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape[0] != Q.shape[0]:
        raise ValueError(f"point sets must have equal cardinality, got {P.shape[0]} and {Q.shape[0]}")
    if P.shape[0] == 0:
        return 0.0
    cost = cdist(P, Q)
    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum())
    return total / P.shape[0] if normalize else total
