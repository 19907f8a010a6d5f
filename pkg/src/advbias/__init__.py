"""Poisoning attacks that amplify unfairness in equalized-odds classifiers.

Modules
-------
data       datasets, CSV ingestion, standardization, filtering, splits
linmodel   linear models, losses, randomized classifiers, gap metrics
fairtrain  post-processing and exponentiated-gradient fair training
attack     online poisoning attacks and baselines
harness    experiment config, grid runner, result files
synthetic  seeded Gaussian-mixture pools
lp         small dense simplex solver
"""
from .attack import AttackConfig, PoisonRun, run_attack
from .data import Dataset, DataSplits, Example, SubgroupStats, load_dataset
from .errors import (AdvBiasError, ConfigError, DataError, FeasibleSetExhausted, InfeasibleLP,
                     NumericalError, UnboundedLP)
from .fairtrain import FairnessSpec, postprocess_equalized_odds, reductions_equalized_odds, train_fair
from .harness import ExperimentConfig, MetricsRow, emit_results, run_grid
from .linmodel import (LinearModel, LossSpec, MixtureClassifier, PostprocessedClassifier,
                       expected_accuracy, fairness_gap, relaxed_gap, train_unconstrained)

__version__ = "0.1.0"
