"""Fixed-length vectors from persistence diagrams.

Each homology dimension gets ``k`` Gaussian structure elements placed in
(birth, persistence) coordinates by k-means++. A diagram point ``p``
contributes ``w(p) * exp(-|(b, pers) - c_i|^2 / sigma_i^2)`` to component
``i``, where ``w(p) = min(pers / nu, 1)`` tapers to zero at the diagonal.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .ph.diagram import PersistenceDiagram
from .ph.distances import wasserstein1

SIGMA_FLOOR = 1e-3
N_ELEMENTS = 20
SAMPLE_SIZE = 50_000


# ---------------------------------------------------------------- k-means

def kmeans_pp_seed(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` seeds: first uniform, then proportional to squared distance."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # fewer distinct points than centers
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return np.array(chosen)


def lloyd(X: np.ndarray, centers: np.ndarray, tol: float = 1e-6, max_iter: int = 200):
    """Lloyd iterations until no center moves more than ``tol``.

    Returns (centers, labels, cost) where cost is the summed squared distance.
    Empty clusters keep their previous center.
    """
    centers = np.array(centers, dtype=np.float64)
    for _ in range(max_iter):
        labels = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=len(centers))
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift <= tol:
            break
    d2 = cdist(X, centers, "sqeuclidean")
    labels = np.argmin(d2, axis=1)
    return centers, labels, float(d2[np.arange(len(X)), labels].sum())


def kmeans(X, k: int, rng: np.random.Generator, tol: float = 1e-6, max_iter: int = 200):
    X = np.asarray(X, dtype=np.float64)
    seeds = kmeans_pp_seed(X, k, rng)
    return lloyd(X, X[seeds], tol=tol, max_iter=max_iter)


def center_scales(centers: np.ndarray, floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Half the distance to the nearest other center, floored."""
    if len(centers) < 2:
        return np.full(len(centers), max(floor, 1.0))
    d = cdist(centers, centers)
    np.fill_diagonal(d, np.inf)
    return np.maximum(0.5 * d.min(axis=1), floor)


# ---------------------------------------------------------------- model

@dataclass
class DimensionElements:
    dim: int
    centers: np.ndarray
    sigmas: np.ndarray
    nu: float
    cap: float
    empty: bool = False

    def to_dict(self) -> dict:
        return {"dim": self.dim, "centers": self.centers.tolist(), "sigmas": self.sigmas.tolist(),
                "nu": self.nu, "cap": self.cap, "empty": self.empty}

    @classmethod
    def from_dict(cls, d: dict) -> "DimensionElements":
        return cls(int(d["dim"]), np.array(d["centers"], dtype=np.float64).reshape(-1, 2),
                   np.array(d["sigmas"], dtype=np.float64), float(d["nu"]), float(d["cap"]),
                   bool(d.get("empty", False)))


@dataclass
class VectorizerModel:
    elements: dict = field(default_factory=dict)  # dim -> DimensionElements

    @property
    def dims(self) -> tuple:
        return tuple(sorted(self.elements))

    @property
    def size(self) -> int:
        return sum(len(e.centers) for e in self.elements.values())

    def transform(self, diagram) -> np.ndarray:
        return transform(diagram, self)

    def vectorize(self, diagrams: Sequence[PersistenceDiagram]) -> np.ndarray:
        """Concatenate the vectors of one diagram per fitted dimension."""
        by_dim = {d.dim: d for d in diagrams}
        missing = [k for k in self.dims if k not in by_dim]
        if missing:
            raise ValueError(f"no diagram for fitted dimension(s) {missing}")
        return np.concatenate([transform(by_dim[k], self) for k in self.dims])

    def to_dict(self) -> dict:
        return {"elements": [self.elements[k].to_dict() for k in self.dims]}

    @classmethod
    def from_dict(cls, d: dict) -> "VectorizerModel":
        els = [DimensionElements.from_dict(e) for e in d["elements"]]
        return cls({e.dim: e for e in els})

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _pairs(d) -> np.ndarray:
    if isinstance(d, PersistenceDiagram):
        return d.pairs
    return np.asarray(d, dtype=np.float64).reshape(-1, 2)


def _coords(pairs: np.ndarray, cap: float) -> np.ndarray:
    """(birth, persistence) with infinite deaths replaced by ``cap``."""
    deaths = np.where(np.isfinite(pairs[:, 1]), pairs[:, 1], cap)
    return np.column_stack([pairs[:, 0], np.maximum(deaths - pairs[:, 0], 0.0)])


def fit_dimension(diagrams: Iterable, dim: int, rng: np.random.Generator, *,
                  n_elements: int = N_ELEMENTS, sample_size: int = SAMPLE_SIZE,
                  tol: float = 1e-6, max_iter: int = 200) -> DimensionElements:
    all_pairs = [_pairs(d) for d in diagrams]
    pairs = np.concatenate(all_pairs) if all_pairs else np.empty((0, 2))
    if len(pairs) == 0:
        return DimensionElements(dim, np.zeros((n_elements, 2)), np.full(n_elements, SIGMA_FLOOR),
                                 1.0, 0.0, empty=True)
    finite = pairs[np.isfinite(pairs[:, 1])]
    cap = float(finite[:, 1].max()) if len(finite) else float(pairs[:, 0].max())
    coords = _coords(pairs, cap)
    pers = finite[:, 1] - finite[:, 0]
    pers = pers[pers > 0]
    nu = float(np.percentile(pers, 1)) if len(pers) else 1.0
    if nu <= 0:
        nu = 1.0
    if len(coords) > sample_size:
        coords = coords[rng.choice(len(coords), sample_size, replace=False)]
    centers, _, _ = kmeans(coords, n_elements, rng, tol=tol, max_iter=max_iter)
    return DimensionElements(dim, centers, center_scales(centers), nu, cap)


def fit(diagrams_by_dim: Mapping[int, Iterable], rng: np.random.Generator, *,
        n_elements: int = N_ELEMENTS, sample_size: int = SAMPLE_SIZE) -> VectorizerModel:
    """Fit structure elements for every dimension in ``diagrams_by_dim``."""
    return VectorizerModel({int(k): fit_dimension(v, int(k), rng, n_elements=n_elements, sample_size=sample_size)
                            for k, v in sorted(diagrams_by_dim.items())})


def group_by_dim(sequences) -> dict:
    """Collect diagrams from nested lists (sequences -> time points -> dims)."""
    out: dict = {}
    for seq in sequences:
        for frame in seq:
            for d in frame:
                out.setdefault(d.dim, []).append(d)
    return out


def transform(diagram, model: VectorizerModel, dim: int | None = None) -> np.ndarray:
    if dim is None:
        if not isinstance(diagram, PersistenceDiagram):
            raise ValueError("dimension required for raw pair arrays")
        dim = diagram.dim
    el = model.elements.get(dim)
    if el is None:
        raise ValueError(f"vectorizer not fitted for dimension {dim}")
    pairs = _pairs(diagram)
    out = np.zeros(len(el.centers))
    if el.empty or len(pairs) == 0:
        return out
    pts = _coords(pairs, el.cap)
    w = np.minimum(pts[:, 1] / el.nu, 1.0)
    g = np.exp(-cdist(pts, el.centers, "sqeuclidean") / el.sigmas ** 2)
    return w @ g


def lipschitz_ratio(model: VectorizerModel, F: PersistenceDiagram, G: PersistenceDiagram) -> float:
    """``|vec(F) - vec(G)| / W1(F, G)`` for diagrams of the same dimension."""
    w = wasserstein1(F, G)
    if w == 0:
        raise ValueError("ratio undefined for diagrams at Wasserstein distance 0")
    if not np.isfinite(w):
        return 0.0
    return float(np.linalg.norm(transform(F, model) - transform(G, model)) / w)


def perturb_point(diagram: PersistenceDiagram, rng: np.random.Generator, eps: float) -> PersistenceDiagram:
    """Move one random point of ``diagram`` by ``eps`` in a random direction."""
    pairs = diagram.pairs.copy()
    i = int(rng.integers(len(pairs)))
    b, d = pairs[i]
    if np.isfinite(d):
        step = rng.normal(size=2)
        step *= eps / np.linalg.norm(step)
        nb, nd = b + step[0], d + step[1]
        if nd < nb:
            nb, nd = b - step[0], d - step[1]
        pairs[i] = (nb, nd)
    else:
        pairs[i, 0] = b + eps * rng.choice([-1.0, 1.0])
    return PersistenceDiagram(diagram.dim, pairs)


def estimate_lipschitz(model: VectorizerModel, diagrams: Sequence[PersistenceDiagram],
                       rng: np.random.Generator, trials: int = 10_000, eps: float = 1e-6) -> float:
    """Largest ratio over single-point perturbations of random corpus diagrams.

    Small moves of one point probe the local slope of the element map, which
    bounds the ratio for every pair (the vector difference telescopes along
    an optimal matching).
    """
    pool = [d for d in diagrams if len(d)]
    if not pool:
        return 0.0
    best = 0.0
    for _ in range(trials):
        F = pool[int(rng.integers(len(pool)))]
        G = perturb_point(F, rng, eps)
        if wasserstein1(F, G) > 0:
            best = max(best, lipschitz_ratio(model, F, G))
    return best
