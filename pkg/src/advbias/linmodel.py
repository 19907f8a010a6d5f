"""Linear classifiers, their losses, unconstrained training and fairness metrics.

A :class:`LinearModel` stores ``dim + 1`` weights, the last one being the
bias. Labels are ``{0, 1}`` everywhere except inside the margin-based losses,
where they are remapped to ``{-1, +1}``. A model predicts positive when its
decision value is ``>= 0``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .data import Dataset, Example, SubgroupStats
from .errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("logistic", "hinge", "linear", "zero-one")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "logistic"
    regularization: float = 1e-4

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if not self.regularization >= 0:
            raise ConfigError("regularization must be nonnegative")


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.shape[0] < 2:
            raise ConfigError("a linear model needs at least one feature weight and a bias")
        if not np.all(np.isfinite(w)):
            raise NumericalError("non-finite model weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int) -> "LinearModel":
        return cls(np.zeros(dim + 1))

    @property
    def dim(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def coef(self) -> np.ndarray:
        return self.weights[:-1]

    @property
    def bias(self) -> float:
        return float(self.weights[-1])


@dataclass(frozen=True)
class TrainHyper:
    """Full-batch gradient descent settings.

    ``init`` is ``"zero"`` or ``"gaussian"`` (sigma 0.01, drawn from ``seed``).
    Training stops early once the max-abs gradient entry drops below ``tol``.
    """

    step_size: float = 1.0
    iterations: int = 500
    seed: int = 0
    init: str = "zero"
    tol: float = 1e-7


@dataclass(frozen=True)
class FilterSpec:
    """Model used to score points for hard-example filtering.

    ``kernel="rbf"`` trains the linear model on random Fourier features
    approximating ``exp(-gamma * ||x - x'||^2)`` (``n_components`` features
    drawn from ``seed``).
    """

    loss: LossSpec = field(default_factory=lambda: LossSpec("hinge", 1e-4))
    hyper: TrainHyper = field(default_factory=lambda: TrainHyper(step_size=0.5, iterations=1000))
    kernel: str = "linear"
    gamma: float = 0.5
    n_components: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in ("linear", "rbf"):
            raise ConfigError(f"unknown filter kernel {self.kernel!r}")
        if self.kernel == "rbf" and not (self.gamma > 0 and self.n_components > 0):
            raise ConfigError("the rbf filter needs gamma > 0 and n_components > 0")

    def featurize(self, X: np.ndarray) -> np.ndarray:
        if self.kernel == "linear":
            return X
        rng = np.random.default_rng(self.seed)
        W = rng.normal(0.0, np.sqrt(2.0 * self.gamma), (X.shape[1], self.n_components))
        b = rng.uniform(0.0, 2 * np.pi, self.n_components)
        return np.sqrt(2.0 / self.n_components) * np.cos(X @ W + b)


# ------------------------------------------------------------ decision/loss

def _check_dim(model: LinearModel, X: np.ndarray):
    if X.shape[-1] != model.dim:
        raise DataError(f"dimension mismatch: model has {model.dim}, features have {X.shape[-1]}")


def decision_value(model: LinearModel, x) -> np.ndarray | float:
    """``<coef, x> + bias`` for a single vector or each row of a matrix."""
    x = np.asarray(x, dtype=float)
    _check_dim(model, x)
    v = x @ model.coef + model.bias
    return float(v) if x.ndim == 1 else v


def predict(model: LinearModel, X) -> np.ndarray:
    return (decision_value(model, np.atleast_2d(X)) >= 0).astype(np.int64)


def signed(y) -> np.ndarray:
    return 2 * np.asarray(y) - 1


def losses(spec: LossSpec, model: LinearModel, X, y) -> np.ndarray:
    """Unregularized per-example losses of ``model`` on rows ``X`` with labels ``y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v = decision_value(model, X)
    return _loss_from_values(spec.kind, v, y)


def _loss_from_values(kind: str, v, y) -> np.ndarray:
    m = signed(y) * v
    if kind == "logistic":
        return np.logaddexp(0.0, -m)
    if kind == "hinge":
        return np.maximum(0.0, 1.0 - m)
    if kind == "linear":
        return (1.0 - m) / 2.0
    pred = (np.asarray(v) >= 0).astype(np.int64)
    return (pred != np.asarray(y)).astype(float)


def loss(spec: LossSpec, model: LinearModel, example: Example) -> float:
    return float(losses(spec, model, example.features, [example.label])[0])


def _dloss_dv(kind: str, v, y) -> np.ndarray:
    """Derivative of the loss with respect to the decision value."""
    ys = signed(y)
    m = ys * v
    if kind == "logistic":
        # -ys * sigmoid(-m), written to avoid overflow
        return -ys * np.exp(-np.logaddexp(0.0, m))
    if kind == "hinge":
        # subgradient 0 at the kink m == 1
        return np.where(m < 1.0, -ys, 0).astype(float)
    if kind == "linear":
        return -ys / 2.0
    raise ConfigError("the zero-one loss has no gradient")


def _reg_grad(spec: LossSpec, model: LinearModel) -> np.ndarray:
    g = spec.regularization * model.weights
    g[-1] = 0.0
    return g


def loss_gradient(spec: LossSpec, model: LinearModel, example: Example) -> np.ndarray:
    """Gradient of ``loss + regularization/2 * ||coef||^2`` for one example.

    The bias is not regularized. The result has length ``dim + 1``.
    """
    x = np.asarray(example.features, dtype=float)
    _check_dim(model, x)
    d = float(_dloss_dv(spec.kind, decision_value(model, x), example.label))
    return d * np.append(x, 1.0) + _reg_grad(spec, model)


def mean_gradient(spec: LossSpec, model: LinearModel, X, y, sample_weight=None) -> np.ndarray:
    """Gradient of the (weighted) average regularized loss over rows ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v = decision_value(model, X)
    d = _dloss_dv(spec.kind, v, y)
    if sample_weight is None:
        d = d / X.shape[0]
    else:
        w = np.asarray(sample_weight, dtype=float)
        d = d * (w / w.sum())
    return np.append(d @ X, d.sum()) + _reg_grad(spec, model)


def objective(spec: LossSpec, model: LinearModel, X, y, sample_weight=None) -> float:
    ell = losses(spec, model, X, y)
    if sample_weight is None:
        avg = ell.mean()
    else:
        w = np.asarray(sample_weight, dtype=float)
        avg = ell @ (w / w.sum())
    return float(avg + 0.5 * spec.regularization * model.coef @ model.coef)


def init_model(dim: int, hyper: TrainHyper) -> LinearModel:
    if hyper.init == "zero":
        return LinearModel.zeros(dim)
    if hyper.init == "gaussian":
        return LinearModel(np.random.default_rng(hyper.seed).normal(0.0, 0.01, dim + 1))
    raise ConfigError(f"unknown init {hyper.init!r}")


def train_unconstrained(data: Dataset, spec: LossSpec | None = None, hyper: TrainHyper | None = None,
                        sample_weight=None, start: LinearModel | None = None) -> LinearModel:
    """Minimize the average regularized loss on ``data`` by full-batch gradient descent.

    Parameters
    ----------
    sample_weight : array (n,), optional
        Nonnegative per-example weights; the objective becomes their
        normalized weighted average.
    start : LinearModel, optional
        Warm start; overrides ``hyper.init``.

    Returns
    -------
    LinearModel
        The final iterate.
    """
    spec = spec or LossSpec()
    hyper = hyper or TrainHyper()
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    if spec.kind == "zero-one":
        raise ConfigError("cannot train with the zero-one loss")
    if sample_weight is not None:
        sample_weight = np.asarray(sample_weight, dtype=float)
        if sample_weight.shape != (len(data),) or np.any(sample_weight < 0) or sample_weight.sum() <= 0:
            raise ConfigError("sample weights must be nonnegative with positive sum")
    w = (start if start is not None else init_model(data.dim, hyper)).weights.copy()
    X, y = data.X, data.y
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    scale = (np.full(len(data), 1.0 / len(data)) if sample_weight is None
             else sample_weight / sample_weight.sum())
    reg = np.full(w.shape, spec.regularization)
    reg[-1] = 0.0
    # divergence is detected below, so silence numpy's overflow warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(hyper.iterations):
            d = _dloss_dv(spec.kind, Xb @ w, y) * scale
            g = d @ Xb + reg * w
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient during training")
            if np.max(np.abs(g)) < hyper.tol:
                break
            w -= hyper.step_size * g
    if not np.all(np.isfinite(w)):
        raise NumericalError("training diverged")
    return LinearModel(w)


# ----------------------------------------------------- randomized classifiers

@dataclass(frozen=True, eq=False)
class MixtureClassifier:
    """Randomized classifier that draws one linear model per query."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.array(self.weights, dtype=float).ravel()
        if len(comps) == 0 or w.shape[0] != len(comps):
            raise ConfigError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class PostprocessedClassifier:
    """Base model whose output is re-randomized per (group, base prediction).

    ``flip[s, yhat]`` is the probability of outputting positive for a member
    of group ``s`` whose base prediction is ``yhat``.
    """

    base: LinearModel
    flip: np.ndarray

    def __post_init__(self):
        p = np.array(self.flip, dtype=float).reshape(2, 2)
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ConfigError("flip probabilities must lie in [0, 1]")
        object.__setattr__(self, "flip", np.clip(p, 0.0, 1.0))


FairClassifier = Union[MixtureClassifier, PostprocessedClassifier]
Classifier = Union[LinearModel, MixtureClassifier, PostprocessedClassifier]


def expected_prediction(clf: Classifier, X, s) -> np.ndarray:
    """Probability of a positive output for each row, computed exactly."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(clf, LinearModel):
        return predict(clf, X).astype(float)
    if isinstance(clf, MixtureClassifier):
        out = np.zeros(X.shape[0])
        for m, w in zip(clf.components, clf.weights):
            out += w * predict(m, X)
        return out
    if isinstance(clf, PostprocessedClassifier):
        return clf.flip[np.asarray(s, dtype=np.int64), predict(clf.base, X)]
    raise TypeError(f"not a classifier: {type(clf).__name__}")


def _predictions(clf: Classifier, data: Dataset) -> np.ndarray:
    if isinstance(clf, LinearModel):
        return predict(clf, data.X)
    return expected_prediction(clf, data.X, data.s)


def expected_accuracy(clf: Classifier, data: Dataset) -> float:
    """``1 - mean |f(x) - y|`` with ``f`` the expected prediction."""
    if len(data) == 0:
        raise DataError("accuracy on an empty dataset")
    return float(1.0 - np.mean(np.abs(_predictions(clf, data) - data.y)))


def subgroup_stats(clf: Classifier, data: Dataset, with_linear: bool = False) -> SubgroupStats:
    lin = None
    if with_linear:
        if not isinstance(clf, LinearModel):
            raise ConfigError("linear losses need a deterministic linear model")
        lin = losses(LossSpec("linear", 0.0), clf, data.X, data.y)
    return SubgroupStats.from_predictions(data, _predictions(clf, data), lin)


def fairness_gap(clf: Classifier, data: Dataset) -> float:
    """Equalized-odds gap: max over labels of the between-group error-rate difference.

    Empty cells contribute an error rate of 0 (and log a warning).
    """
    if len(data) == 0:
        raise DataError("fairness gap of an empty dataset")
    return subgroup_stats(clf, data).gap()


def relaxed_gap(model: LinearModel, data: Dataset) -> float:
    """Convex relaxation of the gap built from per-cell average linear losses."""
    if len(data) == 0:
        raise DataError("relaxed gap of an empty dataset")
    return subgroup_stats(model, data, with_linear=True).relaxed_gap()


def relaxed_gap_gradient(model: LinearModel, data: Dataset, extra: Example | None = None,
                         copies: int = 0) -> np.ndarray:
    """Subgradient of the relaxed gap on ``data`` plus ``copies`` of ``extra``.

    The per-cell linear-loss gradients do not depend on the model, so only
    the signs of the within-label risk differences do; a zero difference
    contributes zero.
    """
    dim = model.dim
    count = data.cell_counts().astype(float)
    mass = np.zeros((2, 2))
    lin = losses(LossSpec("linear", 0.0), model, data.X, data.y)
    np.add.at(mass, (data.y, data.s), lin)
    # sum over a cell of d(linear loss)/dw = -ys/2 * (x, 1)
    gsum = np.zeros((2, 2, dim + 1))
    Xb = np.hstack([data.X, np.ones((len(data), 1))])
    np.add.at(gsum, (data.y, data.s), -signed(data.y)[:, None] / 2.0 * Xb)
    if extra is not None and copies > 0:
        yx, sx = extra.label, extra.group
        xb = np.append(np.asarray(extra.features, dtype=float), 1.0)
        count[yx, sx] += copies
        mass[yx, sx] += copies * float((1.0 - signed(yx) * decision_value(model, extra.features)) / 2.0)
        gsum[yx, sx] += copies * (-signed(yx) / 2.0) * xb
    grad = np.zeros(dim + 1)
    for y in (0, 1):
        r = [mass[y, s] / count[y, s] if count[y, s] else 0.0 for s in (0, 1)]
        g = [gsum[y, s] / count[y, s] if count[y, s] else np.zeros(dim + 1) for s in (0, 1)]
        diff = r[0] - r[1]
        if diff != 0:
            grad += np.sign(diff) * (g[0] - g[1]) / 2.0
    return grad


# ------------------------------------------------------------- serialization

def model_to_dict(clf: Classifier) -> dict:
    if isinstance(clf, LinearModel):
        return {"kind": "linear", "weights": clf.weights.tolist()}
    if isinstance(clf, MixtureClassifier):
        return {"kind": "mixture",
                "mixture": [{"weight": float(w), "weights": m.weights.tolist()}
                            for m, w in zip(clf.components, clf.weights)]}
    if isinstance(clf, PostprocessedClassifier):
        return {"kind": "postprocessed", "weights": clf.base.weights.tolist(),
                "flip": clf.flip.tolist()}
    raise TypeError(f"not a classifier: {type(clf).__name__}")


def model_from_dict(d: dict) -> Classifier:
    kind = d.get("kind")
    if kind == "linear":
        return LinearModel(d["weights"])
    if kind == "mixture":
        return MixtureClassifier(tuple(LinearModel(c["weights"]) for c in d["mixture"]),
                                 [c["weight"] for c in d["mixture"]])
    if kind == "postprocessed":
        return PostprocessedClassifier(LinearModel(d["weights"]), d["flip"])
    raise ConfigError(f"unknown model kind {kind!r}")


def save_model(clf: Classifier, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(clf), fh, indent=2)
        fh.write("\n")


def load_model(path) -> Classifier:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def as_example(x: Sequence[float], label: int, group: int) -> Example:
    return Example(np.asarray(x, dtype=float), int(label), int(group))
