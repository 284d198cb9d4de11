"""Crocker plots and stacks of Betti counts, with a ridge regression baseline."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.linear_model import Ridge
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .ph.diagram import PersistenceDiagram

EPS_STEPS = 25
ALPHA_STEPS = 18
RIDGE_ALPHAS = np.logspace(-3, 3, 7)


def _pairs(d) -> np.ndarray:
    if isinstance(d, PersistenceDiagram):
        return d.pairs
    return np.asarray(d, dtype=np.float64).reshape(-1, 2)


def betti_curve(diagram, eps_grid, min_persistence: float | None = None) -> np.ndarray:
    """``#{(b, d): b <= eps < d}`` at every grid value.

    With ``min_persistence`` set, bars with ``d - b <= min_persistence`` are
    dropped first.
    """
    eps = np.asarray(eps_grid, dtype=np.float64)
    if np.any(np.diff(eps) < 0):
        raise ValueError("eps grid must be ascending")
    pairs = _pairs(diagram)
    if min_persistence is not None:
        pairs = pairs[pairs[:, 1] - pairs[:, 0] > min_persistence]
    alive = (pairs[:, 0][None, :] <= eps[:, None]) & (eps[:, None] < pairs[:, 1][None, :])
    return alive.sum(axis=1).astype(np.int64)


def max_persistence(diagrams) -> float:
    """Largest finite persistence over a sequence of diagrams (0 if none)."""
    best = 0.0
    for d in diagrams:
        p = _pairs(d)
        fin = p[np.isfinite(p[:, 1])]
        if len(fin):
            best = max(best, float(np.max(fin[:, 1] - fin[:, 0])))
    return best


def grids(max_pers: float, eps_steps: int = EPS_STEPS, alpha_steps: int = ALPHA_STEPS):
    return np.linspace(0.0, max_pers / 3.0, eps_steps), np.linspace(0.0, 0.5 * max_pers, alpha_steps)


def crocker_plot(diagrams: Sequence, eps_grid) -> np.ndarray:
    """(eps, time) Betti counts of one dimension."""
    return np.stack([betti_curve(d, eps_grid) for d in diagrams], axis=1)


def build_stack(diagrams: Sequence, eps_steps: int = EPS_STEPS, alpha_steps: int = ALPHA_STEPS) -> np.ndarray:
    """(eps, time, alpha) Betti counts for one dimension of one sequence.

    Both grids scale with the sequence's maximum finite persistence: eps
    spans a third of it, the smoothing level alpha half of it.
    """
    eps, alphas = grids(max_persistence(diagrams), eps_steps, alpha_steps)
    out = np.zeros((eps_steps, len(diagrams), alpha_steps), dtype=np.int64)
    for t, d in enumerate(diagrams):
        for j, a in enumerate(alphas):
            # at alpha = 0 nothing is dropped, which is the plain crocker plot
            out[:, t, j] = betti_curve(d, eps, a if a > 0 else None)
    return out


def sequence_features(frames: Sequence[Sequence[PersistenceDiagram]], dims: Sequence[int],
                      eps_steps: int = EPS_STEPS, alpha_steps: int = ALPHA_STEPS) -> np.ndarray:
    """Flattened stacks of the requested dimensions, concatenated.

    ``frames[t]`` holds the diagrams of observation ``t``.
    """
    parts = []
    for k in dims:
        per_time = [next(d for d in frame if d.dim == k) for frame in frames]
        parts.append(build_stack(per_time, eps_steps, alpha_steps).ravel())
    return np.concatenate(parts).astype(np.float64)


def ridge_model(alphas=RIDGE_ALPHAS, folds: int = 5) -> GridSearchCV:
    pipe = make_pipeline(StandardScaler(), Ridge())
    return GridSearchCV(pipe, {"ridge__alpha": list(alphas)}, cv=KFold(folds), scoring="neg_mean_squared_error")


def fit_predict(X_train, Y_train, X_test, alphas=RIDGE_ALPHAS, folds: int = 5):
    """One cross-validated ridge model per target column.

    Returns (predictions, chosen alphas).
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    Y = np.asarray(Y_train, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    folds = min(folds, len(X_train))
    preds, chosen = [], []
    for j in range(Y.shape[1]):
        search = ridge_model(alphas, folds).fit(X_train, Y[:, j])
        preds.append(search.predict(X_test))
        chosen.append(search.best_params_["ridge__alpha"])
    return np.column_stack(preds), chosen
