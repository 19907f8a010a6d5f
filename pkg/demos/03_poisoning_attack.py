"""
Poisoning a fair model
======================

Pick 10% extra training points from the attack pool with the fairness-aware
attack, then retrain. The fair model pays a much larger accuracy price than
the unconstrained one, and its fairness no longer holds on test data.
"""
import numpy as np

from advbias.attack import AttackConfig, run_attack
from advbias.data import subgroup_distribution
from advbias.fairtrain import reductions_equalized_odds
from advbias.harness import prepare_splits, preset_config
from advbias.linmodel import expected_accuracy, fairness_gap, train_unconstrained

splits = prepare_splits(preset_config("compas"), repetition=0)
clean, test = splits.clean, splits.test

# %%
# Three poisoning sets of the same size: fairness-aware (lambda = 100 eps),
# loss-only (lambda = 0) and uniformly random.
runs = {
    "alg2": run_attack(AttackConfig.from_preset("alg2", 0.1), clean, splits.attack),
    "alg2 lambda=0": run_attack(AttackConfig.from_preset("alg2-lambda0", 0.1), clean, splits.attack),
    "random": run_attack(AttackConfig(0.1, algorithm="random", seed=0), clean, splits.attack),
}

# %%
# Where do the poisoning points land? Cells are indexed [y, s].
for name, run in runs.items():
    print(name, len(run), "points, cell shares:", np.round(subgroup_distribution(run.poison).ravel(), 2))

# %%
# Retrain both models on clean plus poison and evaluate on clean test data.
print(f"\n{'poison':<15}{'unc acc':>9}{'fair acc':>10}{'fair test gap':>15}{'ref gap':>9}")
for name, run in [("none", None), *runs.items()]:
    train = clean if run is None else clean.concat(run.poison)
    unc = train_unconstrained(train)
    fair = reductions_equalized_odds(train, 0.01)
    print(f"{name:<15}{expected_accuracy(unc, test):>9.3f}{expected_accuracy(fair, test):>10.3f}"
          f"{fairness_gap(fair, test):>15.3f}{fairness_gap(unc, train):>9.3f}")

# %%
# The attacker's online trace records every pick.
print(runs["alg2"].trace[0])
