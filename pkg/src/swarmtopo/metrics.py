"""Regression scores, split generation, time-point subsampling and reports."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


def _columns(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if y.ndim == 1:
        return y[:, None], y_hat[:, None]
    return y, y_hat


def variance_explained_per_target(y, y_hat) -> np.ndarray:
    """``1 - Var(y - y_hat) / Var(y)`` per column, population variances.

    A constant target column scores 0.
    """
    y, y_hat = _columns(y, y_hat)
    var = y.var(axis=0)
    resid = (y - y_hat).var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ve = 1.0 - resid / var
    return np.where((np.ptp(y, axis=0) > 0) & (var > 0), ve, 0.0)


def variance_explained(y, y_hat) -> float:
    return float(np.mean(variance_explained_per_target(y, y_hat)))


def smape_per_target(y, y_hat) -> np.ndarray:
    y, y_hat = _columns(y, y_hat)
    num = np.abs(y_hat - y)
    den = np.abs(y) + np.abs(y_hat)
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return ratio.mean(axis=0)


def smape(y, y_hat) -> float:
    """Mean of ``|y_hat - y| / (|y| + |y_hat|)`` over all entries; 0/0 counts as 0."""
    return float(np.mean(smape_per_target(y, y_hat)))


# ---------------------------------------------------------------- protocol

@dataclass
class EvalProtocol:
    n_splits: int = 5
    train_fraction: float = 0.8
    rates: tuple = (0.2, 0.5, 0.8)
    seed: int = 0

    def splits(self, n_sequences: int) -> list:
        return make_splits(n_sequences, self.n_splits, self.train_fraction, self.seed)

    def keep_mask(self, n_sequences: int, n_times: int, split: int, rate: float) -> np.ndarray:
        return subsample_mask(n_sequences, n_times, rate, self.seed, split)


def make_splits(n_sequences: int, n_splits: int = 5, train_fraction: float = 0.8, seed: int = 0) -> list:
    """``n_splits`` random (train, test) index partitions."""
    if n_sequences < 5:
        raise ValueError(f"need at least 5 sequences, got {n_sequences}")
    n_train = int(round(train_fraction * n_sequences))
    n_train = min(max(n_train, 1), n_sequences - 1)
    out = []
    for s in range(n_splits):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0, s]))
        perm = rng.permutation(n_sequences)
        out.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return out


def subsample_mask(n_sequences: int, n_times: int, rate: float, seed: int = 0, split: int = 0) -> np.ndarray:
    """Keep ``ceil(rate * n_times)`` uniformly drawn time points per sequence (at least one).

    The draw depends only on (seed, split, rate), so train and test
    sequences of one split see the same sampling procedure.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    keep = max(1, math.ceil(rate * n_times - 1e-9))
    mask = np.zeros((n_sequences, n_times), dtype=bool)
    if keep == n_times:
        mask[:] = True
        return mask
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, split, int(round(rate * 1e6))]))
    for i in range(n_sequences):
        mask[i, rng.choice(n_times, keep, replace=False)] = True
    return mask


# ---------------------------------------------------------------- reports

@dataclass
class Score:
    model: str
    split: int
    rate: float
    ve: float
    smape: float
    ve_per_target: list = field(default_factory=list)
    smape_per_target: list = field(default_factory=list)


def score(model: str, split: int, rate: float, y, y_hat) -> Score:
    return Score(model, split, rate, variance_explained(y, y_hat), smape(y, y_hat),
                 variance_explained_per_target(y, y_hat).tolist(), smape_per_target(y, y_hat).tolist())


def aggregate(scores) -> dict:
    """Per model: mean and (population) std of VE and SMAPE over its cells."""
    out = {}
    for name in dict.fromkeys(s.model for s in scores):
        cells = [s for s in scores if s.model == name]
        ve = np.array([s.ve for s in cells])
        sm = np.array([s.smape for s in cells])
        out[name] = {"cells": len(cells), "ve_mean": float(ve.mean()), "ve_std": float(ve.std()),
                     "smape_mean": float(sm.mean()), "smape_std": float(sm.std())}
    return out


def write_scores_csv(path, scores, target_names=()) -> None:
    names = list(target_names)
    if not names and scores:
        names = [f"p{i}" for i in range(len(scores[0].ve_per_target))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "split", "rate", "ve", "smape"] + [f"ve_{n}" for n in names]
                   + [f"smape_{n}" for n in names])
        for s in scores:
            w.writerow([s.model, s.split, s.rate, repr(s.ve), repr(s.smape)]
                       + [repr(v) for v in s.ve_per_target] + [repr(v) for v in s.smape_per_target])


def read_scores_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = (len(header) - 5) // 2
    for r in body:
        out.append(Score(r[0], int(r[1]), float(r[2]), float(r[3]), float(r[4]),
                         [float(v) for v in r[5:5 + n]], [float(v) for v in r[5 + n:]]))
    return out


def summary_table(scores) -> str:
    """Fixed-width text table; VE is clipped at 0 per cell for display only."""
    lines = [f"{'model':<16}{'cells':>6}{'VE':>18}{'SMAPE':>18}"]
    for name in dict.fromkeys(s.model for s in scores):
        cells = [s for s in scores if s.model == name]
        ve = np.maximum([s.ve for s in cells], 0.0)
        sm = np.array([s.smape for s in cells])
        lines.append(f"{name:<16}{len(cells):>6}{ve.mean():>11.3f} ± {ve.std():.3f}"
                     f"{sm.mean():>11.3f} ± {sm.std():.3f}")
    return "\n".join(lines)
