"""Explicit Vietoris-Rips filtrations and their persistent homology.

This is the reference path: every simplex is materialised, dimension 0 is
handled by union-find and higher dimensions by left-to-right column
reduction of the boundary matrix over Z/2 with a pivot cache. It is meant
for small clouds; :func:`swarmtopo.ph.fast.rips_persistence` computes the
same diagrams without enumerating the top-dimensional simplices.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .diagram import PersistenceDiagram

MAX_POINTS_DIM2 = 512


def pairwise_distances(cloud) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[0] < 2:
        return np.zeros((cloud.shape[0], cloud.shape[0]))
    return squareform(pdist(cloud))


def enclosing_radius(dist: np.ndarray) -> float:
    """``min_x max_y d(x, y)``; the Rips complex is a cone beyond it."""
    if dist.shape[0] < 2:
        return 0.0
    return float(dist.max(axis=1).min())


def resolve_threshold(dist: np.ndarray, threshold: float | None) -> float:
    if threshold is None:
        return enclosing_radius(dist)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return float(threshold)


def check_size(n_points: int, max_dim: int, cap: int = MAX_POINTS_DIM2) -> None:
    if max_dim not in (0, 1, 2):
        raise ValueError(f"max_dim must be 0, 1 or 2, got {max_dim}")
    if max_dim == 2 and n_points > cap:
        raise ValueError(
            f"{n_points} points exceed the cap of {cap} for dimension-2 homology; "
            "lower the threshold, subsample the cloud, or use max_dim=1")


@dataclass
class Filtration:
    """Simplices of a Rips complex sorted by (value, dimension, vertices)."""

    n_vertices: int
    max_dim: int
    threshold: float
    simplices: list[tuple[int, ...]]
    values: np.ndarray
    dims: np.ndarray

    def __len__(self) -> int:
        return len(self.simplices)

    def count(self, dim: int) -> int:
        return int(np.count_nonzero(self.dims == dim))


def build_rips(cloud, max_dim: int = 1, threshold: float | None = None, *,
               cap: int = MAX_POINTS_DIM2) -> Filtration:
    """All simplices of dimension <= ``max_dim + 1`` with value <= ``threshold``.

    The value of a simplex is the largest pairwise distance among its
    vertices; the default threshold is the enclosing radius.
    """
    dist = pairwise_distances(cloud)
    n = dist.shape[0]
    check_size(n, max_dim, cap)
    thr = resolve_threshold(dist, threshold) if n > 1 else (threshold or 0.0)

    simplices: list[tuple[int, ...]] = [(v,) for v in range(n)]
    values = [0.0] * n
    layer = simplices
    layer_vals = values
    for _ in range(max_dim + 1):
        nxt, nxt_vals = [], []
        for s, val in zip(layer, layer_vals):
            for v in range(s[-1] + 1, n):
                d = max(dist[u, v] for u in s)
                if d <= thr:
                    nxt.append(s + (v,))
                    nxt_vals.append(max(val, d))
        simplices = simplices + nxt
        values = values + nxt_vals
        layer, layer_vals = nxt, nxt_vals

    order = sorted(range(len(simplices)), key=lambda i: (values[i], len(simplices[i]), simplices[i]))
    simplices = [simplices[i] for i in order]
    vals = np.array([values[i] for i in order], dtype=np.float64)
    dims = np.array([len(s) - 1 for s in simplices], dtype=np.int64)
    return Filtration(n, max_dim, thr, simplices, vals, dims)


class UnionFind:
    """Disjoint sets with path halving; roots remember the oldest member."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> tuple[int, int] | None:
        """Merge the sets of ``a`` and ``b``; return ``(survivor, dying)`` roots."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return None
        # vertices enter in index order at value 0, so the larger root is younger
        old, young = (ra, rb) if ra < rb else (rb, ra)
        self.parent[young] = old
        return old, young


def persistence(filtration: Filtration) -> list[PersistenceDiagram]:
    """Diagrams in dimensions ``0..filtration.max_dim``.

    Zero-persistence pairs are dropped.
    """
    f = filtration
    index = {s: i for i, s in enumerate(f.simplices)}
    bars: list[list[tuple[float, float]]] = [[] for _ in range(f.max_dim + 1)]

    # dimension 0: elder rule over edges in filtration order
    uf = UnionFind(f.n_vertices)
    negative_edges = set()
    for i, s in enumerate(f.simplices):
        if len(s) == 2 and uf.union(*s) is not None:
            negative_edges.add(i)
            bars[0].append((0.0, f.values[i]))
    n_components = len({uf.find(v) for v in range(f.n_vertices)})
    bars[0].extend([(0.0, np.inf)] * n_components)

    # dimensions >= 1: reduce boundary columns of simplices of dim >= 2
    pivot_of: dict[int, int] = {}
    reduced: dict[int, set[int]] = {}
    paired = set(negative_edges)
    for j, s in enumerate(f.simplices):
        if len(s) < 3:
            continue
        col = {index[face] for face in combinations(s, len(s) - 1)}
        while col:
            low = max(col)
            k = pivot_of.get(low)
            if k is None:
                break
            col ^= reduced[k]
        if col:
            low = max(col)
            pivot_of[low] = j
            reduced[j] = col
            paired.add(low)
            paired.add(j)
            dim = len(s) - 2
            bars[dim].append((f.values[low], f.values[j]))

    for i, s in enumerate(f.simplices):
        dim = len(s) - 1
        if 1 <= dim <= f.max_dim and i not in paired:
            bars[dim].append((f.values[i], np.inf))

    diagrams = []
    for dim, pairs in enumerate(bars):
        arr = np.array(pairs, dtype=np.float64).reshape(-1, 2)
        arr = arr[arr[:, 1] > arr[:, 0]]
        diagrams.append(PersistenceDiagram(dim, arr))
    return diagrams
