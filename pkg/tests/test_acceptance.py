"""Acceptance suite: ten end-to-end criteria, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or ``python3
tests/test_acceptance.py``). Criteria 5-9 share one grid of 10 repetitions
on the recidivism-shaped synthetic pool; it takes a few minutes on one core.
"""
from __future__ import annotations

import time
from functools import lru_cache

import numpy as np
import pytest

from advbias.attack import AttackConfig, build_feasible_set, candidate_scores, clean_stats, run_attack
from advbias.fairtrain import postprocess_equalized_odds, reductions_equalized_odds
from advbias.harness import ExperimentConfig, emit_results, prepare_splits, preset_config, run_grid
from advbias.linmodel import (LinearModel, LossSpec, MixtureClassifier, PostprocessedClassifier,
                              as_example, expected_accuracy, expected_prediction, fairness_gap,
                              loss_gradient, relaxed_gap, relaxed_gap_gradient, train_unconstrained)
from advbias.attack import contribution_proxy

import oracles
from conftest import random_dataset

REPS = 10


@pytest.fixture
def announce(capsys):
    def _announce(num: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} | {detail}")
    return _announce


def compas_config(**kw) -> ExperimentConfig:
    base = preset_config("compas").to_dict()
    base.update(repetitions=REPS, seed=0, postprocess=False, deltas=[0.1, 0.01],
                epsilons=[0.0, 0.1, 0.2],
                attacks=[{"id": "alg2", "preset": "alg2"},
                         {"id": "alg2-lambda0", "preset": "alg2-lambda0"},
                         {"id": "random", "algorithm": "random"}])
    base.update(kw)
    return ExperimentConfig.from_dict(base)


@lru_cache(maxsize=None)
def compas_splits(rep: int):
    return prepare_splits(compas_config(), rep)


@pytest.fixture(scope="module")
def compas_grid():
    t0 = time.perf_counter()
    rows = run_grid(compas_config())
    return rows, time.perf_counter() - t0


def select(rows, **kw):
    out = [r for r in rows if all(getattr(r, k) == v for k, v in kw.items())]
    assert out and all(r.status == "ok" for r in out), f"missing or failed rows for {kw}"
    return sorted(out, key=lambda r: r.repetition)


def values(rows, metric, **kw):
    return np.array([getattr(r, metric) for r in select(rows, **kw)], dtype=float)


# ---------------------------------------------------------------------- 1

def rel_err(g, num) -> float:
    """Norm-wise relative error of an analytic gradient against a numeric one."""
    denom = np.linalg.norm(g) + np.linalg.norm(num)
    return float(np.linalg.norm(g - num) / denom) if denom > 0 else 0.0


def random_classifier(rng, dim):
    kind = rng.integers(0, 3)
    if kind == 0:
        return LinearModel(rng.normal(size=dim + 1))
    if kind == 1:
        k = int(rng.integers(1, 6))
        return MixtureClassifier(tuple(LinearModel(rng.normal(size=dim + 1)) for _ in range(k)),
                                 rng.dirichlet(np.ones(k)))
    return PostprocessedClassifier(LinearModel(rng.normal(size=dim + 1)), rng.uniform(size=(2, 2)))


def test_1_metric_correctness(announce):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"fairness_gap": 0.0, "relaxed_gap": 0.0, "expected_accuracy": 0.0, "contribution_proxy": 0.0}
    for _ in range(200):
        n = int(rng.integers(1, 201))
        data = random_dataset(rng, n, int(rng.integers(1, 5)))
        clf = random_classifier(rng, data.dim)
        w = rng.normal(size=data.dim + 1)
        theta = LinearModel(w)
        worst["fairness_gap"] = max(worst["fairness_gap"], abs(
            fairness_gap(clf, data) - oracles.brute_gap(clf, data.X, data.y, data.s)))
        worst["expected_accuracy"] = max(worst["expected_accuracy"], abs(
            expected_accuracy(clf, data) - oracles.brute_accuracy(clf, data.X, data.y, data.s)))
        worst["relaxed_gap"] = max(worst["relaxed_gap"], abs(
            relaxed_gap(theta, data) - oracles.brute_relaxed_gap(w, data.X, data.y, data.s)))
        x = rng.normal(size=data.dim)
        yc, sc, k = int(rng.integers(0, 2)), int(rng.integers(0, 2)), int(rng.integers(0, 30))
        stats = clean_stats(theta, data)
        for kind in ("exact", "relaxed"):
            got = contribution_proxy(theta, stats, as_example(x, yc, sc), k, kind)
            want = oracles.brute_proxy(w, data.X, data.y, data.s, x, yc, sc, k, kind)
            worst["contribution_proxy"] = max(worst["contribution_proxy"], abs(got - want))

    # gradients: per-example losses and the relaxed gap (away from kinks)
    grad_err, checked = 0.0, 0
    for _ in range(100):
        w = rng.normal(size=4)
        x = rng.normal(size=3)
        y = int(rng.integers(0, 2))
        for kind in ("logistic", "hinge", "linear"):
            m = (2 * y - 1) * oracles.dot_bias(w, x)
            if kind == "hinge" and abs(1 - m) < 1e-3:
                continue
            num = oracles.numeric_grad(lambda v: oracles.brute_loss(kind, v, x, y), w)
            g = loss_gradient(LossSpec(kind, 0.0), LinearModel(w), as_example(x, y, 0))
            grad_err = max(grad_err, rel_err(g, num))
    for _ in range(50):
        data = random_dataset(rng, 40, 2)
        w = rng.normal(size=data.dim + 1)
        ex = as_example(rng.normal(size=data.dim), int(rng.integers(0, 2)), int(rng.integers(0, 2)))
        k = int(rng.integers(0, 6))
        Xk, yk, sk = oracles.materialize(data.X, data.y, data.s, ex.features, ex.label, ex.group, k)
        f = lambda v: oracles.brute_relaxed_gap(v, Xk, yk, sk)  # noqa: E731
        # piecewise linear, so central differences are exact between kinks
        num = oracles.numeric_grad(f, w, h=1e-5)
        num_wide = oracles.numeric_grad(f, w, h=1e-4)
        if not np.allclose(num, num_wide, rtol=1e-6, atol=1e-9):
            continue  # a sign change of a risk difference lies within the stencil
        g = relaxed_gap_gradient(LinearModel(w), data, ex, k)
        grad_err = max(grad_err, rel_err(g, num))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = (max(worst.values()) <= 1e-12 and grad_err <= 1e-5 and checked >= 30 and elapsed < 30)
    detail = ", ".join(f"{k} max err {v:.1e}" for k, v in worst.items())
    announce(1, "metric correctness", ok,
             f"{detail}; gradient max rel err {grad_err:.1e} ({checked} gap checks); {elapsed:.1f}s")
    assert max(worst.values()) <= 1e-12
    assert grad_err <= 1e-5 and checked >= 30
    assert elapsed < 30


# ---------------------------------------------------------------------- 2

def recorded_runs():
    rng = np.random.default_rng(77)
    runs = []
    for i in range(20):
        clean = random_dataset(rng, int(rng.integers(20, 60)), 2)
        pool = random_dataset(rng, int(rng.integers(10, 25)), 2)
        algorithm = ("ogd", "surrogate")[i % 2]
        mode = ("sampling", "labeling")[(i // 2) % 2]
        eps = float(rng.choice([0.1, 0.2, 0.3]))
        lam = float(rng.choice([0.0, 0.1, 1.0, 10.0])) * eps
        eta = float(rng.choice([0.001, 0.05, 0.3]))
        cfg = AttackConfig(eps, lam=lam, eta=eta, algorithm=algorithm, mode=mode, seed=i)
        runs.append((clean, pool, cfg, run_attack(cfg, clean, pool)))
    return runs


def test_2_selection_optimality(announce):
    t0 = time.perf_counter()
    steps = 0
    violations = []
    for r, (clean, pool, cfg, run) in enumerate(recorded_runs()):
        fs = build_feasible_set(pool, cfg.mode)
        spec = LossSpec("hinge" if cfg.algorithm == "ogd" else "logistic", cfg.regularization)
        gap_kind = "relaxed" if cfg.algorithm == "ogd" else "exact"
        k = len(run)
        for t, chosen in enumerate(run.indices):
            theta = LinearModel(run.thetas[t])
            avail = np.flatnonzero(fs.available)
            score, _, _ = candidate_scores(theta, fs, clean_stats(theta, clean), cfg.epsilon, cfg.lam,
                                           k, spec, gap_kind)
            first_max = int(avail[np.argmax(score[avail])])
            # independent scores from the materialized multiset
            brute = np.array([cfg.epsilon * oracles.brute_loss(spec.kind, theta.weights, fs.X[i], fs.y[i])
                              + cfg.lam * oracles.brute_proxy(theta.weights, clean.X, clean.y, clean.s,
                                                              fs.X[i], int(fs.y[i]), int(fs.s[i]), k,
                                                              gap_kind)
                              for i in avail])
            best = brute.max()
            lower_better = [i for i, b in zip(avail, brute) if i < chosen and b > brute[avail == chosen][0] + 1e-12]
            if (first_max != chosen or run.trace[t]["score"] != score[chosen]
                    or np.max(np.abs(brute - score[avail])) > 1e-12
                    or brute[avail == chosen][0] < best - 1e-12 or lower_better):
                violations.append((r, t))
            fs.take(int(chosen))
            steps += 1
    elapsed = time.perf_counter() - t0
    ok = not violations and elapsed < 60
    announce(2, "selection optimality", ok,
             f"20 runs, {steps} steps replayed, {len(violations)} violations; {elapsed:.1f}s")
    assert not violations
    assert elapsed < 60


# ---------------------------------------------------------------------- 3

def test_3_lambda_zero_reduces_to_loss_only_attack(announce):
    mismatches = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        clean = random_dataset(rng, int(rng.integers(30, 80)), 3)
        pool = random_dataset(rng, int(rng.integers(20, 40)), 3)
        eps = float(rng.choice([0.1, 0.2, 0.3]))
        eta = float(rng.choice([0.001, 0.05, 0.5]))
        run = run_attack(AttackConfig.from_preset("alg2-lambda0", eps, eta=eta, seed=seed), clean, pool)
        sel, thetas = oracles.loss_only_attack(clean.X, clean.y, pool.X, pool.y, eps, eta)
        if run.indices.tolist() != sel or not np.array_equal(run.thetas, thetas):
            mismatches.append(seed)
    ok = not mismatches
    announce(3, "lambda = 0 equals the loss-only attack", ok,
             f"10 toy runs, selections and parameter traces bitwise equal; mismatching seeds {mismatches}")
    assert not mismatches


# ---------------------------------------------------------------------- 4

def test_4_fair_trainer_contracts(announce):
    t0 = time.perf_counter()
    pp_worst = 0.0
    red = {0.1: [], 0.01: []}
    for rep in range(10):
        clean = compas_splits(rep).clean
        clf = postprocess_equalized_odds(train_unconstrained(clean), clean)
        p = expected_prediction(clf, clean.X, clean.s)
        for y in (0, 1):
            r = [p[(clean.y == y) & (clean.s == s)].mean() for s in (0, 1)]
            pp_worst = max(pp_worst, abs(r[0] - r[1]))
        for delta in red:
            red[delta].append(fairness_gap(reductions_equalized_odds(clean, delta), clean))
    elapsed = time.perf_counter() - t0
    red_ok = all(max(v) <= d + 0.05 for d, v in red.items())
    ok = pp_worst <= 1e-6 and red_ok and elapsed < 300
    announce(4, "fair-trainer contracts", ok,
             f"post-processing max rate diff {pp_worst:.1e}; reductions max train gap "
             f"{max(red[0.1]):.4f} (delta 0.1), {max(red[0.01]):.4f} (delta 0.01); {elapsed:.0f}s")
    assert pp_worst <= 1e-6
    assert red_ok
    assert elapsed < 300


# ---------------------------------------------------------------------- 5

def test_5_robustness_fairness_conflict(announce, compas_grid):
    rows, elapsed = compas_grid
    fair_benign = values(rows, "test_acc", model="reductions-0.01", attack="alg2", epsilon=0.0)
    fair_attacked = values(rows, "test_acc", model="reductions-0.01", attack="alg2", epsilon=0.1)
    unc_benign = values(rows, "test_acc", model="unconstrained", attack="alg2-lambda0", epsilon=0.0)
    unc_attacked = values(rows, "test_acc", model="unconstrained", attack="alg2-lambda0", epsilon=0.1)
    fair_drop = 100 * float(np.mean(fair_benign - fair_attacked))
    unc_drop = 100 * float(np.mean(unc_benign - unc_attacked))
    ok = fair_drop >= 12 and fair_drop - unc_drop >= 5 and elapsed < 1200 and len(fair_benign) >= 10
    announce(5, "robustness-fairness conflict", ok,
             f"delta=0.01 drop {fair_drop:.1f} pts (acc {100 * fair_benign.mean():.1f} -> "
             f"{100 * fair_attacked.mean():.1f}) vs unconstrained drop {unc_drop:.1f} pts under lambda=0 "
             f"({100 * unc_benign.mean():.1f} -> {100 * unc_attacked.mean():.1f}); {len(fair_benign)} reps; "
             f"grid {elapsed:.0f}s")
    assert len(fair_benign) >= 10
    assert fair_drop >= 12
    assert fair_drop - unc_drop >= 5
    assert elapsed < 1200


# ---------------------------------------------------------------------- 6

def test_6_monotone_in_fairness_level(announce, compas_grid):
    rows, _ = compas_grid
    acc = {m: values(rows, "test_acc", model=m, attack="alg2", epsilon=0.2)
           for m in ("unconstrained", "reductions-0.1", "reductions-0.01")}
    pairs = [("unconstrained", "reductions-0.1"), ("reductions-0.1", "reductions-0.01")]
    checks = []
    for a, b in pairs:
        pooled = float(np.sqrt((acc[a].var(ddof=1) + acc[b].var(ddof=1)) / 2))
        checks.append(acc[a].mean() >= acc[b].mean() - pooled)
    ok = all(checks) and all(len(v) >= 10 for v in acc.values())
    announce(6, "monotone in fairness level", ok,
             "attacked test acc at eps=0.2: " + ", ".join(f"{m} {100 * v.mean():.1f}" for m, v in acc.items()))
    assert all(len(v) >= 10 for v in acc.values())
    assert all(checks)


# ---------------------------------------------------------------------- 7

def test_7_poison_placement(announce, compas_grid):
    rows, _ = compas_grid
    fair = values(rows, "poison_smallest", model="unconstrained", attack="alg2", epsilon=0.1)
    base = values(rows, "poison_smallest", model="unconstrained", attack="alg2-lambda0", epsilon=0.1)
    cells = {r.smallest_cell for r in select(rows, attack="alg2", epsilon=0.1)}
    ok = fair.mean() >= 0.6 and bool(np.all(fair > base))
    announce(7, "poison placement", ok,
             f"share of D_p in the smallest cell {sorted(cells)}: lambda=100eps {100 * fair.mean():.1f}% "
             f"(min {100 * fair.min():.1f}%) vs lambda=0 {100 * base.mean():.1f}%; "
             f"strictly larger on {int(np.sum(fair > base))}/{len(fair)} paired seeds")
    assert fair.mean() >= 0.6
    assert np.all(fair > base)


# ---------------------------------------------------------------------- 8

def test_8_fairness_does_not_generalize(announce, compas_grid):
    rows, _ = compas_grid
    benign = values(rows, "test_gap", model="reductions-0.01", attack="alg2", epsilon=0.0).mean()
    attacked = values(rows, "test_gap", model="reductions-0.01", attack="alg2", epsilon=0.1).mean()
    unc = values(rows, "test_gap", model="unconstrained", attack="alg2", epsilon=0.0).mean()
    ok = attacked >= 2 * benign and attacked > unc
    announce(8, "fairness-generalization failure", ok,
             f"delta=0.01 test gap benign {benign:.3f} -> attacked {attacked:.3f}; "
             f"benign unconstrained test gap {unc:.3f}")
    assert attacked >= 2 * benign
    assert attacked > unc


# ---------------------------------------------------------------------- 9

def test_9_reference_gap_amplification(announce, compas_grid):
    rows, _ = compas_grid
    adv = values(rows, "ref_gap", model="unconstrained", attack="alg2", epsilon=0.1).mean()
    rnd = values(rows, "ref_gap", model="unconstrained", attack="random", epsilon=0.1).mean()
    ok = adv - rnd >= 0.1
    announce(9, "reference-gap amplification", ok,
             f"unconstrained gap on poisoned training data: alg2 {adv:.3f} vs random sampling {rnd:.3f}")
    assert adv - rnd >= 0.1


# --------------------------------------------------------------------- 10

def test_10_determinism_and_schema(announce, tmp_path):
    config = preset_config("synthetic-small")
    config.attacks = config.attacks + (type(config.attacks[0])("alg2-labeling", preset="alg2",
                                                                mode="labeling"),)
    outputs = []
    for i in range(2):
        raw, summary = emit_results(run_grid(config), "csv", tmp_path / f"run{i}" / "results.csv")
        outputs.append((raw.read_bytes(), summary.read_bytes()))
    same = outputs[0] == outputs[1]
    header = outputs[0][0].split(b"\n", 1)[0].decode()
    ok = same and header.startswith("run_id,repetition,seed,model")
    announce(10, "determinism and schema", ok,
             f"two full grid runs ({len(outputs[0][0].splitlines()) - 1} rows) byte-identical: {same}")
    assert same
    assert header.startswith("run_id,repetition,seed,model")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
