"""Experiment configuration, the attack x model x epsilon grid, and result files.

A grid run repeats the whole pipeline ``repetitions`` times. Each repetition
draws (or reloads) the data, filters hard examples, re-splits, and then for
every attack and epsilon builds one poisoning set that is shared by all
models of the roster. Every job derives its random stream from the master
seed and its cell key, so results do not depend on execution order.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import LAMBDA_PRESETS, ALGORITHMS, MODES, AttackConfig, PoisonRun, run_attack
from .data import (CELLS, DataSplits, Dataset, Schema, attach_hard, filter_hard_examples,
                   load_dataset, require_nonempty, split, split_hierarchical, standardize)
from .errors import AdvBiasError, ConfigError, DataError
from .fairtrain import postprocess_equalized_odds, reductions_equalized_odds
from .linmodel import (FilterSpec, expected_accuracy, fairness_gap, train_unconstrained)
from .synthetic import PRESETS as SYNTHETIC_PRESETS
from .synthetic import generate_synthetic

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------ config

def _reject_unknown(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass(frozen=True)
class AttackSpec:
    """One entry of the attack roster.

    ``preset`` names a lambda preset (which fixes the algorithm and
    ``lam_factor``); otherwise ``algorithm`` and ``lam_factor`` are used
    directly. The attacker's lambda is ``lam_factor * epsilon``.
    """

    id: str
    algorithm: str = "surrogate"
    mode: str = "sampling"
    lam_factor: float = 0.0
    eta: float = 0.001
    schedule: str = "fixed"
    preset: str | None = None

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in LAMBDA_PRESETS:
                raise ConfigError(f"unknown lambda preset {self.preset!r}")
            alg, factor = LAMBDA_PRESETS[self.preset]
            object.__setattr__(self, "algorithm", alg)
            object.__setattr__(self, "lam_factor", factor)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        _reject_unknown(d, {f.name for f in dataclasses.fields(cls)}, "attack entry")
        if "id" not in d:
            raise ConfigError("attack entry needs an 'id'")
        return cls(**d)

    def config(self, epsilon: float, seed: int) -> AttackConfig:
        return AttackConfig(epsilon=epsilon, lam=self.lam_factor * epsilon, eta=self.eta,
                            mode=self.mode, algorithm=self.algorithm, seed=seed,
                            schedule=self.schedule)


_DATASET_KEYS = {"source", "generator", "n", "path", "schema"}


@dataclass
class ExperimentConfig:
    """Everything a grid run needs.

    Parameters
    ----------
    dataset : dict
        ``{"source": "synthetic", "generator": name, "n": size}`` or
        ``{"source": "csv", "path": file, "schema": mapping or schema file}``.
    keep_fraction : float
        Fraction of points kept by hard-example filtering.
    split : str
        ``"ratios"`` (shuffle and cut by ``ratios``) or ``"hierarchical"``
        (``attack_fraction`` to the attacker, the rest ``clean_fraction``
        into the clean part).
    filter_kernel, filter_gamma : str, float
        Filter model; see :class:`advbias.linmodel.FilterSpec`.
    unconstrained, postprocess : bool
        Include these models in the roster.
    deltas : list of float
        One reductions model per target gap.
    attacks : list of AttackSpec
    epsilons : list of float
        Poisoning ratios; 0 gives the benign rows.
    repetitions : int
        Full pipeline repetitions (fresh data draw and split each time).
    seed : int
        Master seed.
    """

    dataset: dict = field(default_factory=lambda: {"source": "synthetic", "generator": "synthetic-small"})
    keep_fraction: float = 0.9
    split: str = "ratios"
    ratios: tuple = (4.0, 1.0, 1.0)
    attack_fraction: float = 0.5
    clean_fraction: float = 0.7
    filter_kernel: str = "linear"
    filter_gamma: float = 0.5
    unconstrained: bool = True
    postprocess: bool = True
    deltas: tuple = (0.1, 0.01)
    attacks: tuple = ()
    epsilons: tuple = (0.0, 0.1)
    repetitions: int = 20
    seed: int = 0

    def __post_init__(self):
        _reject_unknown(self.dataset, _DATASET_KEYS, "dataset")
        src = self.dataset.get("source", "synthetic")
        if src == "synthetic":
            if self.dataset.get("generator", "synthetic-small") not in SYNTHETIC_PRESETS:
                raise ConfigError(f"unknown synthetic generator {self.dataset.get('generator')!r}")
        elif src == "csv":
            if "path" not in self.dataset or "schema" not in self.dataset:
                raise ConfigError("a csv dataset needs 'path' and 'schema'")
        else:
            raise ConfigError(f"unknown dataset source {src!r}")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError("keep_fraction must lie in (0, 1]")
        if self.split not in ("ratios", "hierarchical"):
            raise ConfigError(f"unknown split recipe {self.split!r}")
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3:
            raise ConfigError("ratios must have three entries")
        self.deltas = tuple(float(d) for d in self.deltas)
        if any(not d > 0 for d in self.deltas):
            raise ConfigError("reductions deltas must be positive")
        self.attacks = tuple(a if isinstance(a, AttackSpec) else AttackSpec.from_dict(a)
                             for a in self.attacks)
        ids = [a.id for a in self.attacks]
        if len(set(ids)) != len(ids):
            raise ConfigError("attack ids must be unique")
        self.epsilons = tuple(float(e) for e in self.epsilons)
        if any(not 0 <= e <= 0.5 for e in self.epsilons):
            raise ConfigError("epsilon values must lie in [0, 0.5]")
        if list(self.epsilons) != sorted(self.epsilons):
            raise ConfigError("epsilon values must be sorted ascending")
        if int(self.repetitions) < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.attacks:
            raise ConfigError("the attack roster is empty")
        if not (self.unconstrained or self.postprocess or self.deltas):
            raise ConfigError("the model roster is empty")
        FilterSpec(kernel=self.filter_kernel, gamma=self.filter_gamma)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _reject_unknown(d, {f.name for f in dataclasses.fields(cls)}, "experiment config")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ratios"] = list(self.ratios)
        d["deltas"] = list(self.deltas)
        d["epsilons"] = list(self.epsilons)
        d["attacks"] = [dataclasses.asdict(a) for a in self.attacks]
        return d

    def model_roster(self) -> list[tuple[str, float | None]]:
        roster = [("unconstrained", None)] if self.unconstrained else []
        roster += [(f"reductions-{d:g}", d) for d in self.deltas]
        if self.postprocess:
            roster.append(("postprocess", 0.0))
        return roster

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(kernel=self.filter_kernel, gamma=self.filter_gamma)


def _attack_roster(*names) -> list[dict]:
    out = []
    for name in names:
        if name in LAMBDA_PRESETS:
            out.append({"id": name, "preset": name})
        else:
            out.append({"id": name, "algorithm": name})
    return out


def preset_config(name: str) -> ExperimentConfig:
    """Built-in experiment recipes: ``compas``, ``adult``, ``synthetic-small``.

    The first two run on the synthetic look-alike pools unless the dataset
    entry is replaced by a CSV source.
    """
    if name == "compas":
        return ExperimentConfig(
            dataset={"source": "synthetic", "generator": "compas"},
            keep_fraction=0.6, split="ratios", ratios=(4, 1, 1),
            filter_kernel="rbf", filter_gamma=1.0,
            attacks=_attack_roster("alg2", "alg2-lambda0", "alg1-compas", "random", "flip", "hard"),
            epsilons=(0.0, 0.05, 0.1, 0.15, 0.2), repetitions=20)
    if name == "adult":
        return ExperimentConfig(
            dataset={"source": "synthetic", "generator": "adult"},
            keep_fraction=0.9, split="hierarchical", attack_fraction=0.5, clean_fraction=0.7,
            filter_kernel="linear",
            attacks=_attack_roster("alg2", "alg1-adult", "random", "flip", "hard"),
            epsilons=(0.0, 0.1), repetitions=20)
    if name == "synthetic-small":
        return ExperimentConfig(
            dataset={"source": "synthetic", "generator": "synthetic-small"},
            keep_fraction=0.9, split="ratios", ratios=(4, 1, 1),
            deltas=(0.1,),
            attacks=_attack_roster("alg2", "alg1-compas", "random", "flip", "hard"),
            epsilons=(0.0, 0.1), repetitions=2)
    raise ConfigError(f"unknown preset {name!r}")


# ------------------------------------------------------------------- seeds

def cell_seed(master: int, *key: int) -> int:
    """Deterministic 32-bit seed for the job ``key`` under ``master``."""
    return int(np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


# -------------------------------------------------------------------- data

def _load_source(config: ExperimentConfig, seed: int) -> Dataset:
    ds = config.dataset
    if ds.get("source", "synthetic") == "synthetic":
        gen = SYNTHETIC_PRESETS[ds.get("generator", "synthetic-small")]
        spec = gen(int(ds["n"])) if ds.get("n") else gen()
        return generate_synthetic(spec, seed)
    schema = ds["schema"]
    schema = Schema.from_json(schema) if isinstance(schema, (str, Path)) else Schema.from_dict(schema)
    return load_dataset(ds["path"], schema)


def prepare_splits(config: ExperimentConfig, repetition: int = 0) -> DataSplits:
    """Load or draw the pool, standardize, filter, split and attach hard examples."""
    seed = cell_seed(config.seed, repetition)
    raw, _ = standardize(_load_source(config, seed))
    easy, hard = filter_hard_examples(raw, config.keep_fraction, config.filter_spec())
    if config.split == "ratios":
        parts = split(easy, config.ratios, seed)
    else:
        parts = split_hierarchical(easy, config.attack_fraction, config.clean_fraction, seed)
    splits = attach_hard(parts, hard)
    require_nonempty(splits, "clean", "test", "attack")
    return splits


# ----------------------------------------------------------------- metrics

_CELL_NAMES = tuple(f"y{y}s{s}" for y, s in CELLS)


@dataclass
class MetricsRow:
    """One (repetition, attack, epsilon, model) result.

    Metric fields are ``None`` on failed rows; ``error`` then carries the
    reason. ``poison_*`` are the poison-set fractions per (label, group)
    cell, all zero when no poison was added.
    """

    run_id: str
    repetition: int
    seed: int
    model: str
    delta: float | None
    attack: str
    algorithm: str
    mode: str
    lam: float
    epsilon: float
    status: str = "ok"
    error: str = ""
    n_clean: int | None = None
    n_poison: int | None = None
    poison_digest: str = ""
    majority_group: int | None = None
    smallest_cell: str = ""
    test_acc: float | None = None
    test_acc_majority: float | None = None
    test_acc_minority: float | None = None
    train_acc_clean: float | None = None
    train_acc_poison: float | None = None
    train_gap: float | None = None
    test_gap: float | None = None
    ref_gap: float | None = None
    poison_y0s0: float | None = None
    poison_y0s1: float | None = None
    poison_y1s0: float | None = None
    poison_y1s1: float | None = None
    poison_smallest: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def parse(cls, record: dict) -> "MetricsRow":
        """Rebuild a row from string (CSV) or JSON values."""
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for name in cls.columns():
            v = record.get(name)
            t = kinds[name]
            if v is None or v == "":
                out[name] = "" if t == "str" else None
            elif t.startswith("int"):
                out[name] = int(v)
            elif t.startswith("float"):
                out[name] = float(v)
            else:
                out[name] = str(v)
        return cls(**out)


def _group_accuracy(clf, data: Dataset, group: int) -> float | None:
    part = data.subset(np.flatnonzero(data.s == group))
    return expected_accuracy(clf, part) if len(part) else None


def _train(model_id: str, delta, data: Dataset):
    if model_id == "unconstrained":
        return train_unconstrained(data)
    if model_id == "postprocess":
        return postprocess_equalized_odds(train_unconstrained(data), data)
    return reductions_equalized_odds(data, delta)


def _poison_fractions(run: PoisonRun | None) -> np.ndarray:
    if run is None or len(run) == 0:
        return np.zeros((2, 2))
    return run.poison.cell_counts() / len(run)


def _evaluate(row: MetricsRow, clf, splits: DataSplits, run: PoisonRun | None,
              train: Dataset, majority: int, ref_gap: float) -> None:
    row.test_acc = expected_accuracy(clf, splits.test)
    row.test_acc_majority = _group_accuracy(clf, splits.test, majority)
    row.test_acc_minority = _group_accuracy(clf, splits.test, 1 - majority)
    row.train_acc_clean = expected_accuracy(clf, splits.clean)
    if run is not None and len(run):
        row.train_acc_poison = expected_accuracy(clf, run.poison)
    row.train_gap = fairness_gap(clf, train)
    row.test_gap = fairness_gap(clf, splits.test)
    row.ref_gap = ref_gap


def _base_row(config, rep, seed, model_id, delta, spec: AttackSpec, eps, splits) -> MetricsRow:
    counts = splits.clean.cell_counts()
    flat = [counts[y, s] for y, s in CELLS]
    return MetricsRow(
        run_id=f"r{rep}:{spec.id}:{eps:g}:{model_id}", repetition=rep, seed=seed,
        model=model_id, delta=delta, attack=spec.id, algorithm=spec.algorithm, mode=spec.mode,
        lam=spec.lam_factor * eps, epsilon=eps, n_clean=len(splits.clean),
        majority_group=int(counts[:, 1].sum() > counts[:, 0].sum()),
        smallest_cell=_CELL_NAMES[int(np.argmin(flat))])


def _fail(row: MetricsRow, exc: Exception) -> MetricsRow:
    row.status = "failed"
    row.error = f"{type(exc).__name__}: {exc}"
    return row


def run_grid(config: ExperimentConfig, progress=None) -> list[MetricsRow]:
    """Run every (repetition, attack, epsilon, model) cell of ``config``.

    Errors inside a cell become rows with ``status == "failed"`` instead of
    aborting the grid; errors while preparing a repetition fail all of its
    rows. ``progress`` is an optional callback receiving each finished row.
    """
    rows: list[MetricsRow] = []
    roster = config.model_roster()

    def emit(row):
        rows.append(row)
        if progress is not None:
            progress(row)

    for rep in range(int(config.repetitions)):
        try:
            splits = prepare_splits(config, rep)
        except AdvBiasError as exc:
            logger.error("repetition %d: data preparation failed: %s", rep, exc)
            for a_idx, spec in enumerate(config.attacks):
                for e_idx, eps in enumerate(config.epsilons):
                    for model_id, delta in roster:
                        emit(_fail(MetricsRow(f"r{rep}:{spec.id}:{eps:g}:{model_id}", rep,
                                              cell_seed(config.seed, rep, a_idx, e_idx), model_id,
                                              delta, spec.id, spec.algorithm, spec.mode,
                                              spec.lam_factor * eps, eps), exc))
            continue
        counts = splits.clean.cell_counts()
        majority = int(counts[:, 1].sum() > counts[:, 0].sum())
        benign: dict = {}
        for a_idx, spec in enumerate(config.attacks):
            for e_idx, eps in enumerate(config.epsilons):
                seed = cell_seed(config.seed, rep, a_idx, e_idx)
                run = None
                try:
                    if eps > 0:
                        run = run_attack(spec.config(eps, seed), splits.clean, splits.attack, splits.hard)
                except AdvBiasError as exc:
                    logger.error("%s eps=%g rep %d: attack failed: %s", spec.id, eps, rep, exc)
                    for model_id, delta in roster:
                        emit(_fail(_base_row(config, rep, seed, model_id, delta, spec, eps, splits), exc))
                    continue
                train = splits.clean.concat(run.poison) if run is not None and len(run) else splits.clean
                fr = _poison_fractions(run)
                try:
                    ref = fairness_gap(train_unconstrained(train), train)
                except AdvBiasError as exc:
                    ref = None
                    logger.error("reference model failed: %s", exc)
                for model_id, delta in roster:
                    row = _base_row(config, rep, seed, model_id, delta, spec, eps, splits)
                    row.n_poison = 0 if run is None else len(run)
                    row.poison_digest = "" if run is None else run.digest()
                    for (y, s), name in zip(CELLS, _CELL_NAMES):
                        setattr(row, f"poison_{name}", float(fr[y, s]))
                    row.poison_smallest = getattr(row, f"poison_{row.smallest_cell}")
                    try:
                        if eps == 0:
                            # benign models are trained once per repetition
                            if model_id not in benign:
                                benign[model_id] = _train(model_id, delta, train)
                            clf = benign[model_id]
                        else:
                            clf = _train(model_id, delta, train)
                        _evaluate(row, clf, splits, run, train, majority, ref)
                    except AdvBiasError as exc:
                        logger.error("%s: training failed: %s", row.run_id, exc)
                        _fail(row, exc)
                    emit(row)
    return rows


# ---------------------------------------------------------------- emission

_SUMMARY_KEYS = ("model", "delta", "attack", "algorithm", "mode", "lam", "epsilon")
_SUMMARY_METRICS = ("test_acc", "test_acc_majority", "test_acc_minority", "train_acc_clean",
                    "train_acc_poison", "train_gap", "test_gap", "ref_gap",
                    "poison_y0s0", "poison_y0s1", "poison_y1s0", "poison_y1s1", "poison_smallest")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(records: list[dict], columns: list[str], fmt: str, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(columns)
                for r in records:
                    w.writerow([_fmt(r.get(c)) for c in columns])
            else:
                for r in records:
                    fh.write(json.dumps({c: r.get(c) for c in columns}) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.summary{path.suffix}")


def summarize(rows: list[MetricsRow]) -> list[dict]:
    """Mean and population stddev of every metric per grid cell, over repetitions.

    Only ``ok`` rows contribute; ``count`` and ``failed`` report how many rows
    went in and how many were skipped. Groups keep first-appearance order.
    """
    groups: dict = {}
    for r in rows:
        key = tuple(getattr(r, k) for k in _SUMMARY_KEYS)
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        rec = dict(zip(_SUMMARY_KEYS, key))
        ok = [m for m in members if m.status == "ok"]
        rec["count"] = len(ok)
        rec["failed"] = len(members) - len(ok)
        for m in _SUMMARY_METRICS:
            vals = np.array([getattr(r, m) for r in ok if getattr(r, m) is not None], dtype=float)
            rec[f"{m}_mean"] = float(vals.mean()) if vals.size else None
            rec[f"{m}_std"] = float(vals.std()) if vals.size else None
        out.append(rec)
    return out


def summary_columns() -> list[str]:
    cols = list(_SUMMARY_KEYS) + ["count", "failed"]
    for m in _SUMMARY_METRICS:
        cols += [f"{m}_mean", f"{m}_std"]
    return cols


def emit_results(rows: list[MetricsRow], fmt: str, path) -> tuple[Path, Path]:
    """Write raw rows to ``path`` and the per-cell summary next to it.

    Returns the two paths written. The summary file is ``<stem>.summary<suffix>``.
    """
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"unknown output format {fmt!r}")
    if not rows:
        raise DataError("no rows to emit")
    path = Path(path)
    write_records([dataclasses.asdict(r) for r in rows], MetricsRow.columns(), fmt, path)
    spath = summary_path(path)
    write_records(summarize(rows), summary_columns(), fmt, spath)
    return path, spath


def load_results(path) -> list[MetricsRow]:
    """Parse a file written by :func:`emit_results` (format from the suffix)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"results file not found: {path}")
    with open(path, newline="") as fh:
        if path.suffix == ".jsonl":
            records = [json.loads(line) for line in fh if line.strip()]
        else:
            records = list(csv.DictReader(fh))
    if records and set(records[0]) != set(MetricsRow.columns()):
        raise DataError(f"{path} does not have the results schema")
    return [MetricsRow.parse(r) for r in records]


def check_row(row: MetricsRow) -> None:
    """Raise ``ValueError`` if an ok row breaks the range invariants."""
    if row.status != "ok":
        return
    for name in ("test_acc", "test_acc_majority", "test_acc_minority", "train_acc_clean",
                 "train_acc_poison", "train_gap", "test_gap", "ref_gap"):
        v = getattr(row, name)
        if v is not None and not (0.0 <= v <= 1.0 and math.isfinite(v)):
            raise ValueError(f"{name}={v} outside [0, 1]")
    fr = [getattr(row, f"poison_{c}") for c in _CELL_NAMES]
    total = sum(fr)
    if row.n_poison:
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"poison fractions sum to {total}")
    elif total != 0:
        raise ValueError("poison fractions must be zero without poison")
