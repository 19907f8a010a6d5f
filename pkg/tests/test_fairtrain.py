import numpy as np
import pytest

from advbias.data import Dataset
from advbias.errors import ConfigError, DataError
from advbias.fairtrain import (FairnessSpec, ReductionsHyper, hull_weights, postprocess_equalized_odds,
                               postprocess_lp, rate_differences, reductions_equalized_odds, train_fair)
from advbias.linmodel import (LinearModel, MixtureClassifier, PostprocessedClassifier,
                              expected_accuracy, expected_prediction, fairness_gap,
                              train_unconstrained)
from advbias.synthetic import generate_synthetic, small_like

import oracles


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(small_like(), 1)


def rates(clf, data):
    p = expected_prediction(clf, data.X, data.s)
    out = np.zeros((2, 2))
    for y in (0, 1):
        for s in (0, 1):
            out[y, s] = p[(data.y == y) & (data.s == s)].mean()
    return out


def test_spec_validation():
    with pytest.raises(ConfigError):
        FairnessSpec(0.1, "postprocess")
    with pytest.raises(ConfigError):
        FairnessSpec(0.0, "reductions")
    with pytest.raises(ConfigError):
        FairnessSpec(0.1, "magic")


def test_degenerate_cell_rejected():
    d = Dataset(np.array([[0.0], [1.0], [2.0]]), [0, 1, 1], [0, 0, 1])
    with pytest.raises(DataError, match="degenerate cell"):
        postprocess_equalized_odds(LinearModel.zeros(1), d)
    with pytest.raises(DataError, match="degenerate cell"):
        reductions_equalized_odds(d, 0.1)


def test_postprocess_equalizes_rates(small):
    clf = postprocess_equalized_odds(train_unconstrained(small), small)
    r = rates(clf, small)
    assert abs(r[1, 0] - r[1, 1]) <= 1e-6 and abs(r[0, 0] - r[0, 1]) <= 1e-6
    assert fairness_gap(clf, small) <= 1e-6


def test_postprocess_is_lp_optimal(small):
    base = train_unconstrained(small)
    prob = postprocess_lp(base, small)
    ref = oracles.vertex_lp(prob.c, prob.A_eq, prob.b_eq, bounds=[(0, 1)] * 4)
    clf = postprocess_equalized_odds(base, small)
    assert prob.c @ clf.flip.ravel() == pytest.approx(ref[1], abs=1e-12)


def test_postprocess_on_unbiased_base_keeps_it():
    rng = np.random.default_rng(0)
    y = np.tile([0, 1], 200)
    s = np.repeat([0, 1], 200)
    X = ((2 * y - 1) * 3.0 + rng.normal(0, 0.1, 400))[:, None]
    d = Dataset(X, y, s)
    base = train_unconstrained(d)
    clf = postprocess_equalized_odds(base, d)
    assert expected_accuracy(clf, d) == expected_accuracy(base, d) == 1.0


def test_rate_differences():
    d = Dataset(np.zeros((4, 1)), [0, 0, 1, 1], [0, 1, 0, 1])
    np.testing.assert_allclose(rate_differences([1, 0, 1, 1], d), [1.0, 0.0])


@pytest.mark.parametrize("delta", [0.1, 0.01])
def test_reductions_meets_target_on_training_data(small, delta):
    clf = reductions_equalized_odds(small, delta)
    assert isinstance(clf, MixtureClassifier)
    assert fairness_gap(clf, small) <= delta + 1e-9
    assert expected_accuracy(clf, small) > 0.75


def test_reductions_uniform_weighting_and_trace(small):
    trace = []
    hyper = ReductionsHyper(iterations=10, weighting="uniform")
    clf = reductions_equalized_odds(small, 0.1, hyper, trace)
    assert len(trace) == 10 and len(clf.components) == 10
    np.testing.assert_allclose(clf.weights, 0.1)
    for rec in trace:
        assert rec["multipliers"].sum() <= hyper.bound + 1e-9
        assert np.all(rec["multipliers"] >= 0)


def test_hull_weights_prefer_feasible_mixture():
    errors = np.array([0.1, 0.3])
    gammas = np.array([[0.4, -0.4, 0.0, 0.0], [-0.4, 0.4, 0.0, 0.0]])
    w = hull_weights(errors, gammas, 0.0, 100.0)
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)


def test_train_fair_dispatch(small):
    assert isinstance(train_fair(small, FairnessSpec(0.0, "postprocess")), PostprocessedClassifier)
    assert isinstance(train_fair(small, FairnessSpec(0.1), reductions=ReductionsHyper(iterations=3)),
                      MixtureClassifier)
