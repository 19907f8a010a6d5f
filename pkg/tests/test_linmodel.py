import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advbias.data import Dataset
from advbias.errors import ConfigError, DataError, NumericalError
from advbias.linmodel import (LinearModel, LossSpec, MixtureClassifier, PostprocessedClassifier,
                              TrainHyper, as_example, decision_value, expected_accuracy,
                              expected_prediction, fairness_gap, load_model, loss, loss_gradient,
                              mean_gradient, model_from_dict, model_to_dict, objective, predict,
                              relaxed_gap, relaxed_gap_gradient, save_model, train_unconstrained)

import oracles
from conftest import random_dataset


def rel_close(a, b, rtol=1e-5, atol=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return np.all(np.abs(a - b) <= atol + rtol * np.maximum(np.abs(a), np.abs(b)))


def test_prediction_threshold_at_zero():
    m = LinearModel([1.0, 0.0])
    np.testing.assert_array_equal(predict(m, [[-1e-300], [0.0], [1.0]]), [0, 1, 1])


def test_dimension_mismatch():
    with pytest.raises(DataError):
        decision_value(LinearModel.zeros(2), [1.0, 2.0, 3.0])


def test_loss_values_by_hand():
    m = LinearModel([2.0, -1.0])
    ex = as_example([1.0], 1, 0)  # v = 1, margin 1
    assert loss(LossSpec("hinge"), m, ex) == 0.0
    assert loss(LossSpec("linear"), m, ex) == 0.0
    assert loss(LossSpec("logistic"), m, ex) == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-15)
    assert loss(LossSpec("zero-one"), m, as_example([0.0], 1, 0)) == 1.0


def test_logistic_loss_is_stable_for_large_margins():
    m = LinearModel([1000.0, 0.0])
    assert loss(LossSpec("logistic"), m, as_example([1.0], 0, 0)) == pytest.approx(1000.0)
    assert np.isfinite(loss_gradient(LossSpec("logistic"), m, as_example([1.0], 0, 0))).all()


@pytest.mark.parametrize("kind", ["logistic", "hinge", "linear"])
def test_loss_gradient_finite_difference(kind, rng):
    spec = LossSpec(kind, 0.01)
    for _ in range(30):
        w = rng.normal(size=4)
        x = rng.normal(size=3)
        y = int(rng.integers(0, 2))
        m = (2 * y - 1) * oracles.dot_bias(w, x)
        if kind == "hinge" and abs(1 - m) < 1e-3:
            continue

        def f(wv):
            return oracles.brute_loss(kind, wv, x, y) + 0.005 * wv[:-1] @ wv[:-1]

        g = loss_gradient(spec, LinearModel(w), as_example(x, y, 0))
        assert rel_close(g, oracles.numeric_grad(f, w))


def test_mean_gradient_finite_difference(rng):
    d = random_dataset(rng, 40, 2)
    spec = LossSpec("logistic", 0.1)
    w = rng.normal(size=d.dim + 1)
    wts = rng.uniform(0.1, 2, len(d))
    for sw in (None, wts):
        g = mean_gradient(spec, LinearModel(w), d.X, d.y, sw)
        num = oracles.numeric_grad(lambda v: objective(spec, LinearModel(v), d.X, d.y, sw), w)
        assert rel_close(g, num)


def test_training_reaches_stationarity(rng):
    d = random_dataset(rng, 100, 2)
    spec = LossSpec("logistic", 1e-2)
    m = train_unconstrained(d, spec, TrainHyper(step_size=1.0, iterations=5000, tol=1e-9))
    assert np.max(np.abs(mean_gradient(spec, m, d.X, d.y))) < 1e-8


def test_training_errors(rng):
    d = random_dataset(rng, 10, 1)
    with pytest.raises(DataError):
        train_unconstrained(Dataset.empty(2))
    with pytest.raises(ConfigError):
        train_unconstrained(d, LossSpec("zero-one"))
    with pytest.raises(ConfigError):
        train_unconstrained(d, sample_weight=-np.ones(10))
    with pytest.raises(NumericalError):
        train_unconstrained(d, LossSpec("logistic", 1.0), TrainHyper(step_size=1e3, iterations=2000))


def test_bias_is_not_regularized():
    g = loss_gradient(LossSpec("linear", 1.0), LinearModel([3.0, 5.0]), as_example([0.0], 1, 0))
    assert g[0] == 3.0 and g[1] == -0.5


def test_separable_data_is_learned():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 400)
    X = (2 * y - 1)[:, None] * 2.0 + rng.normal(0, 0.5, (400, 2))
    d = Dataset(X, y, rng.integers(0, 2, 400))
    assert expected_accuracy(train_unconstrained(d), d) >= 0.95


# --------------------------------------------------------- randomized

def test_mixture_validation():
    with pytest.raises(ConfigError):
        MixtureClassifier((LinearModel.zeros(1),), [0.5])
    with pytest.raises(ConfigError):
        PostprocessedClassifier(LinearModel.zeros(1), [[0, 2], [0, 1]])


def test_expected_prediction_of_mixture():
    a, b = LinearModel([1.0, 0.0]), LinearModel([-1.0, 0.0])
    mix = MixtureClassifier((a, b), [0.25, 0.75])
    np.testing.assert_allclose(expected_prediction(mix, [[1.0], [-1.0]], [0, 0]), [0.25, 0.75])


def test_postprocessed_prediction():
    pp = PostprocessedClassifier(LinearModel([1.0, 0.0]), [[0.1, 0.9], [0.3, 0.6]])
    np.testing.assert_allclose(expected_prediction(pp, [[1.0], [-1.0], [1.0]], [0, 0, 1]),
                               [0.9, 0.1, 0.6])


def test_gap_of_constant_classifier_is_zero(rng):
    d = random_dataset(rng, 50, 2)
    assert fairness_gap(LinearModel.zeros(d.dim), d) == 0.0


def test_gap_with_empty_cell_uses_zero_rate(caplog):
    d = Dataset(np.array([[1.0], [-1.0], [1.0]]), [1, 1, 0], [0, 1, 0])
    m = LinearModel([1.0, 0.0])
    # (y=1,s=0) err 0, (y=1,s=1) err 1; (y=0,s=0) err 1, (y=0,s=1) empty -> 0
    assert fairness_gap(m, d) == 1.0
    assert any("empty" in r.message for r in caplog.records)


def random_classifier(rng, dim):
    kind = rng.integers(0, 3)
    if kind == 0:
        return LinearModel(rng.normal(size=dim + 1))
    if kind == 1:
        k = int(rng.integers(1, 5))
        w = rng.dirichlet(np.ones(k))
        return MixtureClassifier(tuple(LinearModel(rng.normal(size=dim + 1)) for _ in range(k)), w)
    return PostprocessedClassifier(LinearModel(rng.normal(size=dim + 1)), rng.uniform(size=(2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 120), st.integers(1, 4), st.integers(0, 10_000))
def test_metrics_match_brute_force(n, d, seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n, d)
    clf = random_classifier(rng, data.dim)
    assert abs(fairness_gap(clf, data) - oracles.brute_gap(clf, data.X, data.y, data.s)) <= 1e-12
    assert abs(expected_accuracy(clf, data) - oracles.brute_accuracy(clf, data.X, data.y, data.s)) <= 1e-12
    w = rng.normal(size=data.dim + 1)
    assert abs(relaxed_gap(LinearModel(w), data)
               - oracles.brute_relaxed_gap(w, data.X, data.y, data.s)) <= 1e-12


def test_relaxed_gap_gradient_finite_difference(rng):
    checked = 0
    for _ in range(40):
        d = random_dataset(rng, 30, 2)
        w = rng.normal(size=d.dim + 1)
        ex = as_example(rng.normal(size=d.dim), int(rng.integers(0, 2)), int(rng.integers(0, 2)))
        k = int(rng.integers(0, 6))
        Xk, yk, sk = oracles.materialize(d.X, d.y, d.s, ex.features, ex.label, ex.group, k)

        def f(v):
            return oracles.brute_relaxed_gap(v, Xk, yk, sk)

        num = oracles.numeric_grad(f, w, h=1e-7)
        g = relaxed_gap_gradient(LinearModel(w), d, ex, k)
        # piecewise linear: only compare away from a sign change
        if abs(f(w + 1e-5) - f(w)) > 0 and np.all(np.isfinite(num)):
            assert rel_close(g, num, rtol=1e-5, atol=1e-7)
            checked += 1
    assert checked > 30


def test_serialization_roundtrip(tmp_path, rng):
    for _ in range(6):
        clf = random_classifier(rng, 3)
        save_model(clf, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        X = rng.normal(size=(20, 3))
        s = rng.integers(0, 2, 20)
        np.testing.assert_array_equal(expected_prediction(back, X, s), expected_prediction(clf, X, s))
    with pytest.raises(ConfigError):
        model_from_dict({"kind": "tree"})
    assert model_to_dict(LinearModel([1.0, 2.0]))["weights"] == [1.0, 2.0]
