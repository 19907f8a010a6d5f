"""
Fair training: post-processing and reductions
=============================================

Train an unconstrained logistic model and two equalized-odds models on the
same clean data, and compare accuracy with the gap on train and test.
"""
from advbias.fairtrain import postprocess_equalized_odds, reductions_equalized_odds
from advbias.harness import prepare_splits, preset_config
from advbias.linmodel import expected_accuracy, fairness_gap, train_unconstrained

config = preset_config("compas")
splits = prepare_splits(config, repetition=0)
clean, test = splits.clean, splits.test

# %%
# The unconstrained model is accurate but its error rates differ across
# groups.
base = train_unconstrained(clean)
models = {"unconstrained": base,
          "postprocess": postprocess_equalized_odds(base, clean)}

# %%
# The reduction plays an exponentiated-gradient game and returns a
# randomized mixture of weighted logistic models.
trace = []
for delta in (0.1, 0.01):
    models[f"reductions delta={delta}"] = reductions_equalized_odds(clean, delta, trace=trace)
print(f"{len(trace)} best responses computed")

# %%
print(f"{'model':<26}{'test acc':>10}{'train gap':>11}{'test gap':>10}")
for name, clf in models.items():
    print(f"{name:<26}{expected_accuracy(clf, test):>10.3f}"
          f"{fairness_gap(clf, clean):>11.3f}{fairness_gap(clf, test):>10.3f}")
