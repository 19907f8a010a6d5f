"""Equalized-odds training: LP post-processing and the exponentiated-gradient reduction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, InfeasibleLP, NumericalError
from .linmodel import (LinearModel, LossSpec, MixtureClassifier, PostprocessedClassifier,
                       TrainHyper, predict, train_unconstrained)
from .lp import MAX_VARS, LPProblem, solve_small_lp

logger = logging.getLogger(__name__)

METHODS = ("reductions", "postprocess")


@dataclass(frozen=True)
class FairnessSpec:
    """Target gap ``delta`` and the method that enforces it.

    Post-processing enforces exact fairness (``delta == 0``); the reduction
    needs a strictly positive ``delta``.
    """

    delta: float
    method: str = "reductions"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown fairness method {self.method!r}")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.method == "postprocess" and self.delta != 0:
            raise ConfigError("post-processing enforces exact fairness (delta = 0)")
        if self.method == "reductions" and self.delta <= 0:
            raise ConfigError("the reductions method needs delta > 0")


def _require_cells(data: Dataset):
    counts = data.cell_counts()
    if np.any(counts == 0):
        raise DataError(f"degenerate cell: some (label, group) cell is empty, counts={counts.tolist()}")
    return counts


# ---------------------------------------------------------- post-processing

def _joint_counts(base: LinearModel, data: Dataset) -> np.ndarray:
    """``N[y, s, yhat]``: cell counts split by the base prediction."""
    N = np.zeros((2, 2, 2))
    np.add.at(N, (data.y, data.s, predict(base, data.X)), 1)
    return N


def postprocess_lp(base: LinearModel, data: Dataset) -> LPProblem:
    """LP over ``p[s, yhat]`` (flattened as ``2*s + yhat``) minimizing expected error.

    The constant part of the objective, ``sum N[1, s, yhat] / n``, is omitted.
    """
    counts = _require_cells(data)
    N = _joint_counts(base, data)
    n = len(data)
    c = np.zeros(4)
    A_eq = np.zeros((2, 4))
    for s in (0, 1):
        for yh in (0, 1):
            j = 2 * s + yh
            c[j] = (N[0, s, yh] - N[1, s, yh]) / n
            for y in (0, 1):
                A_eq[y, j] = (1 if s == 0 else -1) * N[y, s, yh] / counts[y, s]
    return LPProblem(c, A_eq=A_eq, b_eq=np.zeros(2), bounds=[(0.0, 1.0)] * 4)


def postprocess_equalized_odds(base: LinearModel, data: Dataset) -> PostprocessedClassifier:
    """Randomize ``base`` per (group, prediction) so that both rates match across groups.

    The flip table is the optimum of a 4-variable LP computed from exact cell
    counts on ``data``; the result has zero expected gap on ``data``.
    """
    problem = postprocess_lp(base, data)
    try:
        res = solve_small_lp(problem)
    except InfeasibleLP:
        logger.error("post-processing LP infeasible; falling back to the base model")
        return PostprocessedClassifier(base, [[0.0, 1.0], [0.0, 1.0]])
    return PostprocessedClassifier(base, np.clip(res.x, 0.0, 1.0).reshape(2, 2))


# --------------------------------------------------------------- reductions

@dataclass(frozen=True)
class ReductionsHyper:
    """Settings of the exponentiated-gradient game.

    ``iterations`` best responses are computed; multipliers live in the
    scaled simplex of radius ``bound``; ``step`` is the exponentiated-gradient
    learning rate. Best responses are weighted logistic regressions trained
    with ``train``, warm-started from the previous iterate.
    """

    iterations: int = 50
    bound: float = 100.0
    step: float = 0.5
    weighting: str = "lp"
    loss: LossSpec = field(default_factory=lambda: LossSpec("logistic", 1e-4))
    train: TrainHyper = field(default_factory=lambda: TrainHyper(step_size=1.0, iterations=300))


def rate_differences(pred, data: Dataset, counts=None) -> np.ndarray:
    """Per-label ``E[h | y, s=0] - E[h | y, s=1]`` for predictions ``pred``."""
    counts = data.cell_counts() if counts is None else counts
    sums = np.zeros((2, 2))
    np.add.at(sums, (data.y, data.s), np.asarray(pred, dtype=float))
    rates = sums / counts
    return rates[:, 0] - rates[:, 1]


def reductions_equalized_odds(data: Dataset, delta: float, hyper: ReductionsHyper | None = None,
                              trace: list | None = None) -> MixtureClassifier:
    """Fit a randomized classifier with both rate differences within ``delta``.

    Runs the exponentiated-gradient game over four signed constraints
    ``+-(E[h|y,s=0] - E[h|y,s=1]) <= delta``. With ``weighting="lp"`` the
    mixture weights over the best responses minimize training error plus
    ``bound`` times the largest constraint violation (see ``hull_weights``);
    ``weighting="uniform"`` averages them instead. When ``trace`` is a list, one dict per iteration is
    appended (multipliers, constraint values, training error).
    """
    hyper = hyper or ReductionsHyper()
    if not delta > 0:
        raise ConfigError("the reductions method needs delta > 0")
    counts = _require_cells(data)
    n = len(data)
    y, s = data.y, data.s
    # d gamma_y / d h(x_i) for the "+" sign of each label's constraint
    dgamma = np.where(s == 0, 1.0 / counts[y, 0], -1.0 / counts[y, 1])
    base_cost = (1.0 - 2.0 * y) / n

    theta = np.zeros(4)  # order: (y=0,+), (y=0,-), (y=1,+), (y=1,-)
    components, errs, gammas = [], [], []
    model = None
    for t in range(hyper.iterations):
        e = np.exp(theta - theta.max())
        lam = hyper.bound * e / (np.exp(-theta.max()) + e.sum())
        net = np.array([lam[0] - lam[1], lam[2] - lam[3]])
        cost = base_cost + net[y] * dgamma
        labels = (cost < 0).astype(np.int64)
        weights = np.abs(cost)
        if weights.sum() <= 0:
            weights = np.full(n, 1.0 / n)
        reduced = Dataset(data.X, labels, s, data.name, data.ids)
        try:
            model = train_unconstrained(reduced, hyper.loss, hyper.train, sample_weight=weights, start=model)
        except NumericalError as exc:
            raise NumericalError(f"best response diverged at iteration {t}: {exc}") from None
        components.append(model)
        diff = rate_differences(predict(model, data.X), data, counts)
        gamma = np.array([diff[0], -diff[0], diff[1], -diff[1]])
        if trace is not None:
            trace.append({"iteration": t, "multipliers": lam.copy(), "net": net.copy(),
                          "gamma": gamma.copy(),
                          "error": float(np.mean(predict(model, data.X) != y))})
        theta = theta + hyper.step / hyper.bound * (gamma - delta)
        errs.append(float(np.mean(predict(model, data.X) != y)))
        gammas.append(gamma)
    if hyper.weighting == "lp":
        w = hull_weights(np.array(errs), np.array(gammas), delta, hyper.bound)
        keep = w > 0
        return MixtureClassifier(tuple(c for c, k in zip(components, keep) if k), w[keep] / w[keep].sum())
    return MixtureClassifier(tuple(components), np.full(len(components), 1.0 / len(components)))


def hull_weights(errors, gammas, delta, bound):
    """Mixture weights minimizing ``error + bound * violation`` over the iterates."""
    uniq, inv = np.unique(np.round(np.column_stack([errors, gammas]), 12), axis=0, return_index=True)
    idx = np.sort(inv)[:MAX_VARS - 1]
    m = len(idx)
    c = np.append(errors[idx], bound)
    A_ub = np.hstack([gammas[idx].T, -np.ones((4, 1))])
    b_ub = np.full(4, delta)
    A_eq = np.append(np.ones(m), 0.0)[None, :]
    res = solve_small_lp(LPProblem(c, A_ub, b_ub, A_eq, [1.0]))
    w = np.zeros(len(errors))
    w[idx] = np.clip(res.x[:m], 0, None)
    return w / w.sum()


def train_fair(data: Dataset, fairness: FairnessSpec, base_loss: LossSpec | None = None,
               base_hyper: TrainHyper | None = None, reductions: ReductionsHyper | None = None):
    """Dispatch on ``fairness.method``; post-processing wraps a fresh unconstrained model."""
    if fairness.method == "postprocess":
        base = train_unconstrained(data, base_loss, base_hyper)
        return postprocess_equalized_odds(base, data)
    return reductions_equalized_odds(data, fairness.delta, reductions)
