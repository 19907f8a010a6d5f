"""Poisoning-set generation for fair linear classifiers.

Two online attacks pick ``floor(eps * n)`` points one at a time from a
feasible set, each time maximizing ``eps * loss + lam * proxy`` where the
proxy is the gap of the current model on the clean data plus ``k`` copies of
the candidate:

* ``ogd_attack`` scores with the hinge loss and the relaxed (linear-loss)
  gap and steps along the gradient of the whole penalized objective;
* ``surrogate_attack`` scores with the logistic loss and the exact gap, and
  steps along the unconstrained loss only.

Three baselines (random sampling, label flipping, hard examples) sample
uniformly without replacement.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Example, SubgroupStats, save_dataset
from .errors import ConfigError, DataError, FeasibleSetExhausted, NumericalError
from .linmodel import (LinearModel, LossSpec, _dloss_dv, decision_value, losses, mean_gradient,
                       predict, relaxed_gap_gradient)

MODES = ("sampling", "labeling")
ALGORITHMS = ("ogd", "surrogate", "random", "flip", "hard")

# name -> (algorithm, lambda / epsilon)
LAMBDA_PRESETS = {
    "alg1-compas": ("ogd", 1.0),
    "alg1-adult": ("ogd", 0.1),
    "alg2": ("surrogate", 100.0),
    "alg2-lambda0": ("surrogate", 0.0),
}


@dataclass
class AttackConfig:
    """Knobs of one poisoning run.

    ``schedule`` is ``"fixed"`` (step ``eta``) or ``"corollary1"`` with
    ``eta_t = sched_d / (sched_G * sqrt(t))``. ``init`` optionally sets the
    attacker's starting model (zero by default).
    """

    epsilon: float
    lam: float = 0.0
    eta: float = 0.001
    mode: str = "sampling"
    algorithm: str = "surrogate"
    seed: int = 0
    schedule: str = "fixed"
    sched_d: float = 1.0
    sched_G: float = 1.0
    regularization: float = 1e-4
    init: LinearModel | None = None

    def __post_init__(self):
        if not 0 <= self.epsilon <= 0.5:
            raise ConfigError(f"epsilon must lie in [0, 0.5], got {self.epsilon}")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.schedule not in ("fixed", "corollary1"):
            raise ConfigError(f"unknown step schedule {self.schedule!r}")
        if self.schedule == "corollary1" and not (self.sched_d > 0 and self.sched_G > 0):
            raise ConfigError("the corollary1 schedule needs d > 0 and G > 0")

    @classmethod
    def from_preset(cls, preset: str, epsilon: float, **kw) -> "AttackConfig":
        if preset not in LAMBDA_PRESETS:
            raise ConfigError(f"unknown lambda preset {preset!r}")
        algorithm, factor = LAMBDA_PRESETS[preset]
        return cls(epsilon=epsilon, lam=factor * epsilon, algorithm=algorithm, **kw)

    def step_size(self, t: int) -> float:
        if self.schedule == "fixed":
            return self.eta
        return self.sched_d / (self.sched_G * math.sqrt(t))

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "lambda": self.lam, "eta": self.eta, "mode": self.mode,
                "algorithm": self.algorithm, "seed": self.seed, "schedule": self.schedule,
                "sched_d": self.sched_d, "sched_G": self.sched_G,
                "regularization": self.regularization}


def poison_count(epsilon: float, n: int) -> int:
    return int(math.floor(epsilon * n + 1e-9))


# ------------------------------------------------------------ feasible sets

@dataclass
class FeasibleSet:
    """Candidate pool; ``origin[i]`` is the attack-set row behind candidate ``i``.

    In labeling mode the label-flipped variants follow the originals, so
    candidate ``i + m`` is the sibling of candidate ``i``.
    """

    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    flipped: np.ndarray
    origin: np.ndarray
    mode: str
    available: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.available is None:
            self.available = np.ones(len(self.y), dtype=bool)

    def __len__(self) -> int:
        return len(self.y)

    def candidate(self, i: int) -> Example:
        return Example(self.X[i], int(self.y[i]), int(self.s[i]))

    def siblings(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.origin == self.origin[i])

    def take(self, i: int) -> None:
        if not self.available[i]:
            raise ConfigError(f"candidate {i} was already taken")
        # both label variants of a point leave the pool together
        self.available[self.siblings(i)] = False

    def fresh(self) -> "FeasibleSet":
        return FeasibleSet(self.X, self.y, self.s, self.flipped, self.origin, self.mode)

    def capacity(self) -> int:
        return len(np.unique(self.origin[self.available]))


def build_feasible_set(attack_data: Dataset, mode: str) -> FeasibleSet:
    if len(attack_data) == 0:
        raise DataError("empty attack data")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    m = len(attack_data)
    if mode == "sampling":
        return FeasibleSet(attack_data.X, attack_data.y, attack_data.s,
                           np.zeros(m, dtype=bool), np.arange(m), mode)
    return FeasibleSet(np.vstack([attack_data.X, attack_data.X]),
                       np.concatenate([attack_data.y, 1 - attack_data.y]),
                       np.concatenate([attack_data.s, attack_data.s]),
                       np.repeat([False, True], m), np.tile(np.arange(m), 2), mode)


# ---------------------------------------------------------- proxy and score

def clean_stats(theta: LinearModel, clean: Dataset) -> SubgroupStats:
    """Stats of ``clean`` under ``theta``: error counts and linear-loss masses."""
    v = decision_value(theta, clean.X)
    lin = (1.0 - (2 * clean.y - 1) * v) / 2.0
    return SubgroupStats.from_predictions(clean, (v >= 0).astype(np.int64), lin)


def _per_copy(theta: LinearModel, X, y, gap_kind: str) -> np.ndarray:
    v = decision_value(theta, np.atleast_2d(X))
    if gap_kind == "exact":
        return ((v >= 0).astype(np.int64) != y).astype(np.int64)
    if gap_kind == "relaxed":
        return (1.0 - (2 * np.asarray(y) - 1) * v) / 2.0
    raise ConfigError(f"unknown gap kind {gap_kind!r}")


def contribution_proxies(theta: LinearModel, stats: SubgroupStats, X, y, s, k: int,
                         gap_kind: str = "exact") -> np.ndarray:
    """Gap of ``theta`` on the clean data plus ``k`` copies of each candidate row.

    Only the candidate's own cell changes: it gains ``k`` members and ``k``
    times the candidate's per-copy error (or linear loss).
    """
    if k < 0 or int(k) != k:
        raise ConfigError("k must be a nonnegative integer")
    if np.any(stats.count < 0) or np.any(stats.errors > stats.count + 1e-9):
        raise DataError("inconsistent subgroup stats")
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    per = _per_copy(theta, X, y, gap_kind)
    num = stats.errors if gap_kind == "exact" else stats.loss_mass
    count = stats.count
    rates = np.zeros((2, 2))
    nz = count > 0
    rates[nz] = num[nz] / count[nz]
    m = len(y)
    R = np.broadcast_to(rates, (m, 2, 2)).copy()
    new_count = count[y, s] + k
    new_num = num[y, s] + k * per
    R[np.arange(m), y, s] = np.where(new_count > 0, new_num / np.maximum(new_count, 1), 0.0)
    d0 = np.abs(R[:, 0, 0] - R[:, 0, 1])
    d1 = np.abs(R[:, 1, 0] - R[:, 1, 1])
    if gap_kind == "exact":
        return np.maximum(d0, d1)
    return (d0 + d1) / 2.0


def contribution_proxy(theta: LinearModel, stats: SubgroupStats, candidate: Example, k: int,
                       gap_kind: str = "exact") -> float:
    return float(contribution_proxies(theta, stats, np.atleast_2d(candidate.features),
                                      [candidate.label], [candidate.group], k, gap_kind)[0])


def candidate_scores(theta: LinearModel, fs: FeasibleSet, stats: SubgroupStats, epsilon: float,
                     lam: float, k: int, loss_spec: LossSpec, gap_kind: str):
    """``(score, loss_term, gap_term)`` arrays over every candidate (available or not)."""
    loss_term = epsilon * losses(loss_spec, theta, fs.X, fs.y)
    gap_term = lam * contribution_proxies(theta, stats, fs.X, fs.y, fs.s, k, gap_kind)
    return loss_term + gap_term, loss_term, gap_term


def select_point(theta: LinearModel, fs: FeasibleSet, stats: SubgroupStats, epsilon: float,
                 lam: float, k: int, loss_spec: LossSpec, gap_kind: str = "exact",
                 take: bool = True) -> int:
    """Index of the highest-scoring available candidate (lowest index on ties).

    With ``take`` the chosen candidate, and its label sibling, are removed.
    """
    avail = np.flatnonzero(fs.available)
    if avail.size == 0:
        raise FeasibleSetExhausted("feasible set exhausted")
    score, _, _ = candidate_scores(theta, fs, stats, epsilon, lam, k, loss_spec, gap_kind)
    i = int(avail[np.argmax(score[avail])])
    if take:
        fs.take(i)
    return i


# ------------------------------------------------------------------- runs

@dataclass
class PoisonRun:
    poison: Dataset
    indices: np.ndarray          # candidate indices in selection order
    flipped: np.ndarray
    origin: np.ndarray           # attack-set rows behind the candidates
    trace: list = field(default_factory=list)
    thetas: np.ndarray | None = None  # attacker parameters, (T + 1, dim + 1)

    def __len__(self) -> int:
        return len(self.poison)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.poison.X, self.poison.y, self.poison.s):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def save(self, csv_path, trace_path=None) -> None:
        save_dataset(self.poison, csv_path, {"flipped": self.flipped.astype(int).tolist()})
        if trace_path is not None:
            with open(trace_path, "w") as fh:
                json.dump(self.trace, fh, indent=1)
                fh.write("\n")


def _empty_run(dim: int, name: str) -> PoisonRun:
    z = np.zeros(0, dtype=np.int64)
    return PoisonRun(Dataset.empty(dim, name), z, z.astype(bool), z)


def _online_attack(clean: Dataset, fs: FeasibleSet, config: AttackConfig, loss_spec: LossSpec,
                   gap_kind: str, penalized_update: bool) -> PoisonRun:
    n = len(clean)
    if n == 0:
        raise DataError("empty clean dataset")
    if clean.dim != fs.X.shape[1]:
        raise DataError("clean and attack data differ in dimension")
    T = poison_count(config.epsilon, n)
    k = T
    theta = config.init if config.init is not None else LinearModel.zeros(clean.dim)
    thetas = [theta.weights.copy()]
    if T > fs.capacity():
        raise FeasibleSetExhausted(f"{T} poisoning points requested but only {fs.capacity()} available")
    eps, lam = config.epsilon, config.lam
    chosen, trace = [], []
    for t in range(1, T + 1):
        stats = clean_stats(theta, clean)
        avail = np.flatnonzero(fs.available)
        if avail.size == 0:
            raise FeasibleSetExhausted(f"feasible set exhausted at step {t}")
        score, lt, gt = candidate_scores(theta, fs, stats, eps, lam, k, loss_spec, gap_kind)
        i = int(avail[np.argmax(score[avail])])
        fs.take(i)
        chosen.append(i)
        trace.append({"step": t, "candidate": i, "origin": int(fs.origin[i]),
                      "flipped": bool(fs.flipped[i]), "score": float(score[i]),
                      "loss_term": float(lt[i]), "gap_term": float(gt[i]),
                      "theta_norm": float(np.linalg.norm(theta.weights)),
                      "siblings_removed": fs.mode == "labeling"})

        x, y = fs.X[i], fs.y[i]
        g = mean_gradient(loss_spec, theta, clean.X, clean.y)
        d = float(_dloss_dv(loss_spec.kind, decision_value(theta, x), y))
        g = g + eps * (d * np.append(x, 1.0))
        if penalized_update and lam != 0:
            g = g + lam * relaxed_gap_gradient(theta, clean, fs.candidate(i), k)
        w = theta.weights - config.step_size(t) * g
        if not np.all(np.isfinite(w)):
            raise NumericalError(f"attacker parameters diverged at step {t}")
        theta = LinearModel(w)
        thetas.append(w.copy())

    idx = np.asarray(chosen, dtype=np.int64)
    poison = Dataset(fs.X[idx].reshape(len(idx), clean.dim), fs.y[idx], fs.s[idx],
                     f"poison:{config.algorithm}", fs.origin[idx])
    return PoisonRun(poison, idx, fs.flipped[idx], fs.origin[idx], trace, np.array(thetas))


def ogd_attack(clean: Dataset, fs: FeasibleSet, config: AttackConfig) -> PoisonRun:
    """Online gradient descent on the fairness-penalized objective.

    Scores with hinge loss plus the relaxed gap of ``k = floor(eps n)``
    copies; updates with the clean-data mean gradient, ``eps`` times the
    chosen point's loss gradient, and ``lam`` times the relaxed-gap gradient.
    """
    spec = LossSpec("hinge", config.regularization)
    return _online_attack(clean, fs, config, spec, "relaxed", penalized_update=True)


def surrogate_attack(clean: Dataset, fs: FeasibleSet, config: AttackConfig) -> PoisonRun:
    """Same selection rule, scored with logistic loss and the exact gap.

    The update tracks the unconstrained model: the fairness term is left out.
    """
    spec = LossSpec("logistic", config.regularization)
    return _online_attack(clean, fs, config, spec, "exact", penalized_update=False)


# -------------------------------------------------------------- baselines

def _sample(pool: Dataset, count: int, seed, flip: bool, name: str) -> PoisonRun:
    if count < 0:
        raise ConfigError("count must be nonnegative")
    if count > len(pool):
        raise FeasibleSetExhausted(f"pool of {len(pool)} is too small for {count} points")
    if count == 0:
        return _empty_run(pool.dim, name)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=count, replace=False)
    y = 1 - pool.y[idx] if flip else pool.y[idx]
    poison = Dataset(pool.X[idx], y, pool.s[idx], name, pool.ids[idx])
    return PoisonRun(poison, idx, np.full(count, flip), idx)


def baseline_random(attack_data: Dataset, count: int, seed=0) -> PoisonRun:
    return _sample(attack_data, count, seed, False, "poison:random")


def baseline_flip(attack_data: Dataset, count: int, seed=0) -> PoisonRun:
    return _sample(attack_data, count, seed, True, "poison:flip")


def baseline_hard(hard_pool: Dataset, count: int, seed=0) -> PoisonRun:
    return _sample(hard_pool, count, seed, False, "poison:hard")


def run_attack(config: AttackConfig, clean: Dataset, attack_data: Dataset,
               hard: Dataset | None = None) -> PoisonRun:
    """Dispatch on ``config.algorithm``."""
    count = poison_count(config.epsilon, len(clean))
    if config.algorithm == "random":
        return baseline_random(attack_data, count, config.seed)
    if config.algorithm == "flip":
        return baseline_flip(attack_data, count, config.seed)
    if config.algorithm == "hard":
        if hard is None:
            raise DataError("the hard-example baseline needs the hard pool")
        return baseline_hard(hard, count, config.seed)
    if count == 0:
        return _empty_run(clean.dim, f"poison:{config.algorithm}")
    fs = build_feasible_set(attack_data, config.mode)
    if config.algorithm == "ogd":
        return ogd_attack(clean, fs, config)
    return surrogate_attack(clean, fs, config)
