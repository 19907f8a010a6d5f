"""Seeded Gaussian-mixture datasets with exact per-cell counts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CELLS, Dataset
from .errors import ConfigError


@dataclass
class SyntheticSpec:
    """Class-conditional Gaussian per (label, group) cell.

    Parameters
    ----------
    n : int
        Total number of points.
    fractions : array (2, 2)
        Cell masses indexed ``[y, s]``; must sum to 1.
    means : array (2, 2, dim)
        Cell means indexed ``[y, s]``.
    scales : float or array (2, 2, dim)
        Per-coordinate standard deviations (diagonal covariance), or a full
        covariance per cell when shaped ``(2, 2, dim, dim)``.
    group_feature : bool
        Append the group as an extra feature column (the sensitive attribute
        is part of the feature vector).
    """

    n: int
    fractions: np.ndarray
    means: np.ndarray
    scales: np.ndarray | float = 1.0
    group_feature: bool = True
    name: str = "synthetic"

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=float).reshape(2, 2)
        self.means = np.asarray(self.means, dtype=float)
        if self.means.ndim != 3 or self.means.shape[:2] != (2, 2):
            raise ConfigError("means must have shape (2, 2, dim)")
        if np.any(self.fractions < 0) or abs(self.fractions.sum() - 1.0) > 1e-9:
            raise ConfigError("invalid fractions: must be nonnegative and sum to 1")
        if self.n < 1:
            raise ConfigError("n must be positive")
        dim = self.means.shape[2]
        sc = np.asarray(self.scales, dtype=float)
        if sc.ndim == 0:
            sc = np.full((2, 2, dim), float(sc))
        if sc.shape == (2, 2, dim):
            if np.any(sc <= 0):
                raise ConfigError("scales must be positive")
        elif sc.shape == (2, 2, dim, dim):
            for y, s in CELLS:
                try:
                    np.linalg.cholesky(sc[y, s])
                except np.linalg.LinAlgError:
                    raise ConfigError(f"covariance of cell y={y}, s={s} is not positive-definite") from None
        else:
            raise ConfigError(f"scales have incompatible shape {sc.shape}")
        self.scales = sc

    @property
    def dim(self) -> int:
        return self.means.shape[2] + int(self.group_feature)


def stratified_counts(n: int, fractions) -> np.ndarray:
    """Largest-remainder rounding of ``n * fractions`` (ties to the lower flat index)."""
    f = np.asarray(fractions, dtype=float).ravel()
    raw = f * n
    counts = np.floor(raw + 1e-9).astype(int)
    short = n - counts.sum()
    order = np.argsort(-np.round(raw - counts, 9), kind="stable")
    counts[order[:short]] += 1
    return counts.reshape(np.shape(fractions))


def generate_synthetic(spec: SyntheticSpec, seed=0) -> Dataset:
    """Draw ``spec.n`` points, exactly ``round(n * fraction)`` per cell, shuffled."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = stratified_counts(spec.n, spec.fractions)
    Xs, ys, ss = [], [], []
    for y, s in CELLS:
        k = counts[y, s]
        mu = spec.means[y, s]
        sc = spec.scales[y, s]
        if sc.ndim == 1:
            x = mu + rng.standard_normal((k, mu.shape[0])) * sc
        else:
            x = rng.multivariate_normal(mu, sc, size=k, method="cholesky")
        Xs.append(x)
        ys.append(np.full(k, y))
        ss.append(np.full(k, s))
    X = np.vstack(Xs)
    y = np.concatenate(ys)
    s = np.concatenate(ss)
    if spec.group_feature:
        X = np.hstack([X, s[:, None].astype(float)])
    perm = rng.permutation(spec.n)
    return Dataset(X[perm], y[perm], s[perm], spec.name)


# ------------------------------------------------------------------ presets

def _means(dim, cells: dict) -> np.ndarray:
    m = np.zeros((2, 2, dim))
    for (y, s), v in cells.items():
        m[y, s, :len(v)] = v
    return m


def compas_like(n: int = 5278) -> SyntheticSpec:
    """Raw pool shaped like the two-race recidivism data.

    Group 1 is 39.8% of the pool with a 41.9% positive rate; group 0 has a
    52.3% positive rate. Positives of group 1 sit between the two label
    clusters with a wide spread along the first axis, so an RBF hard-example
    filter strips most of them and leaves (y=1, s=1) as the smallest cell of
    the clean pool (about 7%).
    """
    f = np.array([[0.602 * 0.477, 0.398 * 0.581],
                  [0.602 * 0.523, 0.398 * 0.419]])
    means = _means(4, {(0, 0): [-1.2, 0.0], (1, 0): [1.2, 0.0],
                       (0, 1): [-1.2, 0.0], (1, 1): [-0.3, 0.0]})
    scales = np.ones((2, 2, 4))
    scales[1, 1, :2] = [1.0, 2.5]
    return SyntheticSpec(n, f, means, scales, True, "compas-like")


def compas_clean_like(n: int = 2111) -> SyntheticSpec:
    """Already-filtered pool with the clean-split cell masses 28.5/31.8/32.5/7.2%."""
    f = np.array([[0.285, 0.325],
                  [0.318, 0.072]])
    means = _means(4, {(0, 0): [-1.5, 0.0], (1, 0): [1.5, 0.0],
                       (0, 1): [-1.5, 0.3], (1, 1): [1.5, 0.3]})
    return SyntheticSpec(n, f, means, 1.0, True, "compas-clean-like")


def adult_like(n: int = 24421) -> SyntheticSpec:
    """Raw pool shaped like the census-income data (66.8% group 0, 23.9% positive)."""
    f = np.array([[0.668 * 0.696, 0.332 * 0.891],
                  [0.668 * 0.304, 0.332 * 0.109]])
    means = _means(4, {(0, 0): [-1.0, 0.0], (1, 0): [1.5, 0.2],
                       (0, 1): [-1.2, -0.2], (1, 1): [0.8, 0.4]})
    return SyntheticSpec(n, f, means, 1.1, True, "adult-like")


def small_like(n: int = 600) -> SyntheticSpec:
    """Small imbalanced pool for quick runs and tests."""
    f = np.array([[0.30, 0.30],
                  [0.30, 0.10]])
    means = _means(3, {(0, 0): [-1.2, 0.0], (1, 0): [1.2, 0.0],
                       (0, 1): [-1.2, 0.5], (1, 1): [0.2, 0.5]})
    return SyntheticSpec(n, f, means, 1.0, True, "small-like")


PRESETS = {"compas": compas_like, "compas-clean": compas_clean_like,
           "adult": adult_like, "synthetic-small": small_like}
