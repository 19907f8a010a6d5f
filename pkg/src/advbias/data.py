"""Datasets, CSV ingestion, standardization, hard-example filtering and splits.

Labels and groups are stored as ``{0, 1}`` integers. Every dataset carries
the source index of each row (``ids``) so that splits can be checked for
disjointness against the pool they were cut from.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


class Example(NamedTuple):
    features: np.ndarray
    label: int
    group: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of labelled, group-annotated feature vectors.

    Parameters
    ----------
    X : ndarray (n, dim)
    y : ndarray (n,) of {0, 1}
    s : ndarray (n,) of {0, 1}, the sensitive attribute
    name : str
        Free-form provenance string.
    ids : ndarray (n,), optional
        Source index of each row; defaults to ``arange(n)``.
    """

    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    name: str = ""
    ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        y = np.asarray(self.y).astype(np.int64).ravel()
        s = np.asarray(self.s).astype(np.int64).ravel()
        n = X.shape[0]
        if y.shape[0] != n or s.shape[0] != n:
            raise DataError("features, labels and groups differ in length")
        if X.shape[1] < 1:
            raise DataError("dataset needs at least one feature")
        if n and not np.all((y == 0) | (y == 1)):
            raise DataError("invalid label: labels must be 0 or 1")
        if n and not np.all((s == 0) | (s == 1)):
            raise DataError("invalid group: groups must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite feature value")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64).ravel()
        if ids.shape[0] != n:
            raise DataError("ids length mismatch")
        for arr in (X, y, s, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, i: int) -> Example:
        return Example(self.X[i], int(self.y[i]), int(self.s[i]))

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_examples(cls, examples: Sequence[Example], name: str = "", dim: int | None = None) -> "Dataset":
        if not examples:
            if dim is None:
                raise DataError("dim is required for an empty dataset")
            return cls.empty(dim, name)
        X = np.vstack([np.asarray(e.features, dtype=float) for e in examples])
        return cls(X, [e.label for e in examples], [e.group for e in examples], name)

    @classmethod
    def empty(cls, dim: int, name: str = "") -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0, int), np.zeros(0, int), name)

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.s[idx],
                       self.name if name is None else name, self.ids[idx])

    def concat(self, other: "Dataset", name: str | None = None) -> "Dataset":
        if other.dim != self.dim:
            raise DataError(f"cannot concatenate dim {self.dim} with dim {other.dim}")
        return Dataset(np.vstack([self.X, other.X]),
                       np.concatenate([self.y, other.y]),
                       np.concatenate([self.s, other.s]),
                       self.name if name is None else name,
                       np.concatenate([self.ids, other.ids]))

    def cell_counts(self) -> np.ndarray:
        """Counts per cell as a (2, 2) array indexed ``[y, s]``."""
        counts = np.zeros((2, 2), dtype=np.int64)
        np.add.at(counts, (self.y, self.s), 1)
        return counts


@dataclass
class DataSplits:
    clean: Dataset
    test: Dataset
    attack: Dataset
    hard: Dataset

    def sizes(self) -> dict:
        return {"clean": len(self.clean), "test": len(self.test),
                "attack": len(self.attack), "hard": len(self.hard)}


@dataclass
class SubgroupStats:
    """Per-cell counts and error masses, indexed ``[y, s]``.

    ``errors`` holds integer mispredicted counts for deterministic models
    (or expected counts for randomized ones). ``loss_mass`` optionally holds
    the per-cell sum of linear losses used by the relaxed gap.
    """

    count: np.ndarray
    errors: np.ndarray
    loss_mass: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        self.count = np.asarray(self.count, dtype=np.int64).reshape(2, 2)
        errors = np.asarray(self.errors).reshape(2, 2)
        self.errors = errors if errors.dtype.kind == "f" else errors.astype(np.int64)
        self.loss_mass = np.asarray(self.loss_mass, dtype=float).reshape(2, 2)
        if np.any(self.count < 0) or np.any(self.errors < 0):
            raise DataError("negative subgroup count")
        if np.any(self.errors > self.count + 1e-9):
            raise DataError("subgroup errors exceed counts")

    @classmethod
    def from_predictions(cls, data: Dataset, pred, linear_losses=None) -> "SubgroupStats":
        """Stats of ``data`` under predictions ``pred`` (hard or expected, in [0, 1])."""
        pred = np.asarray(pred)
        wrong = np.abs(pred - data.y)
        if pred.dtype.kind in "biu":
            errors = np.zeros((2, 2), dtype=np.int64)
            wrong = wrong.astype(np.int64)
        else:
            errors = np.zeros((2, 2))
        np.add.at(errors, (data.y, data.s), wrong)
        mass = np.zeros((2, 2))
        if linear_losses is not None:
            np.add.at(mass, (data.y, data.s), np.asarray(linear_losses, dtype=float))
        return cls(data.cell_counts(), errors, mass)

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def error_rates(self) -> np.ndarray:
        return _safe_rates(self.errors, self.count)

    def risks(self) -> np.ndarray:
        return _safe_rates(self.loss_mass, self.count)

    def gap(self) -> float:
        r = self.error_rates()
        return float(max(abs(r[0, 0] - r[0, 1]), abs(r[1, 0] - r[1, 1])))

    def relaxed_gap(self) -> float:
        r = self.risks()
        return float((abs(r[1, 0] - r[1, 1]) + abs(r[0, 0] - r[0, 1])) / 2)


def _safe_rates(num, count):
    num = np.asarray(num, dtype=float)
    out = np.zeros_like(num, dtype=float)
    nz = count > 0
    out[nz] = num[nz] / count[nz]
    if not np.all(nz):
        logger.warning("empty (label, group) cell; its rate is taken as 0")
    return out


# ---------------------------------------------------------------- ingestion

_SCHEMA_KEYS = {"label_col", "group_col", "feature_cols", "categorical",
                "label_map", "group_map"}


@dataclass
class Schema:
    """Column mapping for CSV ingestion.

    ``feature_cols=None`` means every column that is neither the label nor
    the group. Columns named in ``categorical`` are one-hot encoded with
    categories in sorted order. ``label_map``/``group_map`` translate raw
    strings (e.g. ``"Caucasian"``) into ``0``/``1``.
    """

    label_col: str
    group_col: str
    feature_cols: list[str] | None = None
    categorical: list[str] = field(default_factory=list)
    label_map: dict[str, int] | None = None
    group_map: dict[str, int] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        unknown = set(d) - _SCHEMA_KEYS
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "Schema":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"schema file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema file {path} is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("label_col", "group_col", "feature_cols",
                                              "categorical", "label_map", "group_map")}


def _binary(raw: str, mapping, what: str, lineno: int) -> int:
    if mapping is not None:
        if raw not in mapping:
            raise DataError(f"invalid {what} {raw!r} on line {lineno}")
        val = mapping[raw]
    else:
        try:
            f = float(raw)
        except ValueError:
            raise DataError(f"invalid {what} {raw!r} on line {lineno}") from None
        val = int(f) if f.is_integer() else -1
    if val not in (0, 1):
        raise DataError(f"invalid {what} {raw!r} on line {lineno}")
    return val


def load_dataset(path, schema: Schema | dict, name: str | None = None) -> Dataset:
    """Read a headered, comma-separated UTF-8 file into a :class:`Dataset`.

    Rows with an empty required cell are dropped (logged); rows of the wrong
    arity or with non-numeric numeric features raise :class:`DataError`.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: no header row") from None
        rows = list(reader)

    cols = schema.feature_cols
    if cols is None:
        cols = [h for h in header if h not in (schema.label_col, schema.group_col)]
    needed = [schema.label_col, schema.group_col, *cols]
    for c in needed + list(schema.categorical):
        if c not in header:
            raise DataError(f"unknown column name: {c!r}")
    if not cols:
        raise DataError("schema selects no feature columns")
    pos = {h: i for i, h in enumerate(header)}
    cat = set(schema.categorical)

    kept, dropped = [], 0
    for lineno, row in enumerate(rows, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise DataError(f"malformed row on line {lineno}: expected {len(header)} fields, got {len(row)}")
        vals = {c: row[pos[c]].strip() for c in needed}
        if any(v == "" for v in vals.values()):
            dropped += 1
            continue
        kept.append((lineno, vals))
    if dropped:
        logger.warning("%s: dropped %d rows with missing values", path.name, dropped)

    levels = {c: sorted({v[c] for _, v in kept}) for c in cols if c in cat}
    X, y, s = [], [], []
    for lineno, vals in kept:
        feats = []
        for c in cols:
            if c in cat:
                feats.extend(1.0 if vals[c] == lev else 0.0 for lev in levels[c])
            else:
                try:
                    f = float(vals[c])
                except ValueError:
                    raise DataError(f"non-numeric feature {c}={vals[c]!r} on line {lineno}") from None
                if not math.isfinite(f):
                    raise DataError(f"non-finite feature {c} on line {lineno}")
                feats.append(f)
        X.append(feats)
        y.append(_binary(vals[schema.label_col], schema.label_map, "label", lineno))
        s.append(_binary(vals[schema.group_col], schema.group_map, "group", lineno))
    dim = sum(len(levels[c]) if c in cat else 1 for c in cols)
    X = np.asarray(X, dtype=float).reshape(len(kept), dim)
    return Dataset(X, np.asarray(y, int), np.asarray(s, int), name or path.stem)


def save_dataset(data: Dataset, path, extra: dict | None = None) -> None:
    """Write ``data`` as CSV with columns ``x0..x{d-1}, label, group`` plus ``extra``."""
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(data.dim)] + ["label", "group", *extra])
        for i in range(len(data)):
            w.writerow([repr(float(v)) for v in data.X[i]] + [int(data.y[i]), int(data.s[i])]
                       + [extra[k][i] for k in extra])


def default_schema(dim: int) -> Schema:
    """Schema matching files written by :func:`save_dataset`."""
    return Schema("label", "group", [f"x{j}" for j in range(dim)])


def load_saved(path, name: str | None = None) -> Dataset:
    """Read a file written by :func:`save_dataset`, inferring the dimension."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    dim = 0
    while f"x{dim}" in header:
        dim += 1
    if dim == 0:
        raise DataError(f"{path}: no x0.. feature columns")
    return load_dataset(path, default_schema(dim), name)


# ------------------------------------------------------------ standardizing

@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, data: Dataset) -> Dataset:
        if data.dim != self.mean.shape[0]:
            raise DataError("scaler dimension mismatch")
        scale = np.where(self.std > 0, self.std, 1.0)
        X = (data.X - self.mean) / scale
        X[:, self.std == 0] = 0.0
        return Dataset(X, data.y, data.s, data.name, data.ids)


def standardize(data: Dataset) -> tuple[Dataset, Scaler]:
    """Centre every column and scale it to unit population stddev.

    Constant columns are mapped to zero. The returned :class:`Scaler` can be
    applied to other splits.
    """
    if len(data) == 0:
        raise DataError("cannot standardize an empty dataset")
    mean = data.X.mean(axis=0)
    std = data.X.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
    scaler = Scaler(mean, std)
    return scaler.transform(data), scaler


# ---------------------------------------------------------------- filtering

def filter_hard_examples(data: Dataset, keep_fraction: float, filter_spec=None):
    """Split ``data`` into the low-loss ("easy") and high-loss ("hard") points.

    A filter model (linear, or linear on random Fourier features) is
    trained on all of ``data``; the
    ``floor(keep_fraction * n)`` points with the smallest loss are kept
    (ties broken by position). Both outputs keep the input's row order.

    Parameters
    ----------
    filter_spec : FilterSpec, optional
        Loss and trainer settings of the filter model; defaults to a hinge
        loss with L2 coefficient 1e-4.

    Returns
    -------
    easy, hard : Dataset
    """
    from .linmodel import FilterSpec, losses, train_unconstrained

    if not 0 < keep_fraction <= 1:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    if len(data) == 0:
        raise DataError("cannot filter an empty dataset")
    spec = filter_spec or FilterSpec()
    feats = Dataset(spec.featurize(data.X), data.y, data.s)
    model = train_unconstrained(feats, spec.loss, spec.hyper)
    scores = losses(spec.loss, model, feats.X, feats.y)
    n_keep = int(math.floor(keep_fraction * len(data) + 1e-9))
    order = np.argsort(scores, kind="stable")
    keep = np.sort(order[:n_keep])
    drop = np.sort(order[n_keep:])
    return data.subset(keep, f"{data.name}:easy"), data.subset(drop, f"{data.name}:hard")


# ------------------------------------------------------------------ splits

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def partition_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * ratio / sum(ratios)`` (ties go to earlier parts)."""
    r = np.asarray(ratios, dtype=float)
    if np.any(r < 0) or r.sum() <= 0:
        raise ConfigError(f"ratios must be nonnegative with positive sum, got {list(ratios)}")
    raw = r / r.sum() * n
    sizes = np.floor(raw + 1e-9).astype(int)
    # rounded so that equal remainders tie exactly
    order = np.argsort(-np.round(raw - sizes, 9), kind="stable")
    sizes[order[:n - sizes.sum()]] += 1
    return sizes.tolist()


def split(data: Dataset, ratios: Sequence[float] = (4, 1, 1), seed=0) -> DataSplits:
    """Shuffle with ``seed`` and cut into (clean, test, attack) parts.

    The ``hard`` part of the result is empty; see :func:`attach_hard`.
    """
    if len(ratios) != 3:
        raise ConfigError("split needs exactly three ratios (clean, test, attack)")
    sizes = partition_sizes(len(data), ratios)
    perm = _rng(seed).permutation(len(data))
    a, b = sizes[0], sizes[0] + sizes[1]
    return DataSplits(
        clean=data.subset(perm[:a], f"{data.name}:clean"),
        test=data.subset(perm[a:b], f"{data.name}:test"),
        attack=data.subset(perm[b:], f"{data.name}:attack"),
        hard=Dataset.empty(data.dim, f"{data.name}:hard"),
    )


def split_hierarchical(data: Dataset, attack_fraction: float = 0.5,
                       clean_fraction: float = 0.7, seed=0) -> DataSplits:
    """Two-level split: first carve off the attack part, then clean/test.

    The defaults give the recipe used for the census-income data (half of the
    pool to the attacker, the remainder 70/30 into clean/test).
    """
    rng = _rng(seed)
    top = split(data, (1 - attack_fraction, 0.0, attack_fraction), rng)
    rest = split(top.clean, (clean_fraction, 1 - clean_fraction, 0.0), rng)
    return DataSplits(rest.clean, rest.test, top.attack, top.hard)


def attach_hard(splits: DataSplits, hard: Dataset) -> DataSplits:
    """Append the filtered-out hard examples to the attack part."""
    return DataSplits(splits.clean, splits.test,
                      splits.attack.concat(hard, splits.attack.name), hard)


def require_nonempty(splits: DataSplits, *parts: str) -> None:
    for p in parts:
        if len(getattr(splits, p)) == 0:
            raise DataError(f"split {p!r} is empty")


def subgroup_distribution(data: Dataset) -> np.ndarray:
    """Fraction of ``data`` in each cell, as a (2, 2) array indexed ``[y, s]``."""
    if len(data) == 0:
        raise DataError("subgroup distribution of an empty dataset")
    return data.cell_counts() / len(data)


def split_manifest(splits: DataSplits, seed, ratios, extra: dict | None = None) -> dict:
    def table(d: Dataset):
        if len(d) == 0:
            return None
        dist = subgroup_distribution(d)
        return {f"y={y},s={s}": float(dist[y, s]) for y, s in CELLS}

    out = {
        "seed": seed if isinstance(seed, (int, type(None))) else str(seed),
        "ratios": [float(r) for r in ratios],
        "sizes": splits.sizes(),
        "subgroups": {k: table(getattr(splits, k)) for k in ("clean", "test", "attack", "hard")},
    }
    if extra:
        out.update(extra)
    return out


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
