"""
Preparing data: ingestion, filtering and splits
===============================================

Draw a recidivism-shaped pool, drop the hardest points with an RBF filter,
and split the rest into clean, test and attack parts.
"""
import tempfile
from pathlib import Path

import numpy as np

from advbias.data import (Schema, attach_hard, filter_hard_examples, load_dataset, save_dataset,
                          split, split_manifest, standardize, subgroup_distribution)
from advbias.linmodel import FilterSpec
from advbias.synthetic import compas_like, generate_synthetic

# %%
# A synthetic pool with the group and label rates of the two-race data.
raw = generate_synthetic(compas_like(), seed=0)
print(f"pool: {len(raw)} points, dim {raw.dim}, group-1 share {raw.s.mean():.3f}")

# %%
# Standardize, then keep the 60% of points with the smallest filter loss.
z, scaler = standardize(raw)
easy, hard = filter_hard_examples(z, 0.6, FilterSpec(kernel="rbf", gamma=1.0))
print(f"easy {len(easy)}, hard {len(hard)}")

# %%
# Split 4:1:1 and hand the hard points to the attacker.
splits = attach_hard(split(easy, (4, 1, 1), seed=0), hard)
print(splits.sizes())

# %%
# Cell masses of the clean part, indexed [y, s]. The positive members of
# group 1 form the smallest cell.
print(np.round(100 * subgroup_distribution(splits.clean), 1))

# %%
# Real data comes in as CSV plus a column mapping. Here we round-trip the
# clean part through a file with string-coded groups.
tmp = Path(tempfile.mkdtemp())
save_dataset(splits.clean, tmp / "clean.csv")
schema = Schema("label", "group", feature_cols=[f"x{j}" for j in range(splits.clean.dim)])
again = load_dataset(tmp / "clean.csv", schema)
print("round trip exact:", np.array_equal(again.X, splits.clean.X))
print(split_manifest(splits, 0, (4, 1, 1))["sizes"])
