"""Raw per-variable tables to task datasets.

The raw corpus is one table per variable: (subject_id, value) pairs where a
value is a real number, a categorical code, or missing. Building a task
joins those tables on subject, computes labels, picks features by mutual
information and availability, normalizes, one-hot encodes, and splits.

Everything that could leak test information (normalization statistics,
one-hot vocabularies, MI scores, feature selection) is computed on the
training split only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import FeatureCatalog, FeatureMeta, as_cost
from .survey import CostTable, reference_cost_table

log = logging.getLogger(__name__)

Value = Union[float, str, None]


class DegenerateColumnError(ValueError):
    """Column with no variance (or no data) cannot be normalized."""


class EmptyVocabularyError(ValueError):
    """Categorical column with no available training values."""


class InsufficientDataError(ValueError):
    """Too few rows or label values to estimate mutual information."""


class NoFeaturesSelectedError(ValueError):
    """Thresholds rejected every candidate variable."""


class InvalidMeasurementError(ValueError):
    """Physiologically impossible measurement fed to a label rule."""


class NoIndicatorsConfiguredError(ValueError):
    """Composite label rule configured with zero indicator variables."""


class EmptyJoinError(ValueError):
    """No subject ended up with a computable label."""


# --- raw variable tables -------------------------------------------------------


@dataclass
class VariableTable:
    """All observed values of one variable, keyed by subject."""

    variable_id: str
    subject_ids: list
    values: list
    declared_kind: Optional[str] = None

    def __post_init__(self):
        if len(self.subject_ids) != len(self.values):
            raise ValueError(f"{self.variable_id}: subject/value lengths differ")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise ValueError(f"{self.variable_id}: duplicate subject ids")

    def as_mapping(self) -> dict:
        return dict(zip(self.subject_ids, self.values))

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "value"])
        for sid, v in zip(self.subject_ids, self.values):
            writer.writerow([sid, "" if v is None else v])

    @classmethod
    def from_csv(cls, fh: IO[str], variable_id: str, declared_kind: Optional[str] = None) -> "VariableTable":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "value"]:
            raise ValueError(f"variable table header must be subject_id,value, got {header}")
        sids, vals = [], []
        for row in reader:
            if not row:
                continue
            sids.append(int(row[0]))
            raw = row[1]
            if raw == "":
                vals.append(None)
            else:
                try:
                    vals.append(float(raw))
                except ValueError:
                    vals.append(raw)
        return cls(variable_id, sids, vals, declared_kind)


def infer_kind(values: Iterable[Value]) -> str:
    """real / binary / categorical from observed values; strings force categorical."""
    present = [v for v in values if v is not None]
    if any(isinstance(v, str) for v in present):
        return "categorical"
    distinct = set(present)
    if len(distinct) <= 2:
        return "binary"
    if len(distinct) <= 10:
        return "categorical"
    return "real"


# --- column preprocessing ------------------------------------------------------


def compute_norm_stats(values: np.ndarray, available: np.ndarray) -> tuple[float, float]:
    """(mean, population std) over available entries; degenerate columns refuse."""
    present = values[available]
    if present.size == 0:
        raise DegenerateColumnError("no available values")
    mean = float(present.mean())
    std = float(present.std())  # population (ddof=0)
    if std < 1e-12:
        raise DegenerateColumnError(f"zero variance (all values = {mean})")
    return mean, std


def apply_norm(values: np.ndarray, available: np.ndarray, stats: tuple[float, float]) -> np.ndarray:
    """(v - mean)/std where available, 0 elsewhere; 0 doubles as the mean."""
    mean, std = stats
    out = np.zeros(len(values), dtype=np.float64)
    out[available] = (values[available] - mean) / std
    return out


def build_vocabulary(values: Sequence[Value], available: np.ndarray) -> list:
    """Sorted distinct available codes (strings sort apart from numbers)."""
    seen = {v for v, a in zip(values, available) if a}
    if not seen:
        raise EmptyVocabularyError("no available values to build a vocabulary from")
    return sorted(seen, key=lambda v: (isinstance(v, str), v))


def one_hot(
    values: Sequence[Value],
    available: np.ndarray,
    vocabulary: Sequence,
    counters: Optional[dict] = None,
) -> np.ndarray:
    """Unit rows for known codes; zeros for missing; zeros + counter for unseen."""
    if not len(vocabulary):
        raise EmptyVocabularyError("empty vocabulary")
    index = {code: i for i, code in enumerate(vocabulary)}
    out = np.zeros((len(values), len(vocabulary)), dtype=np.float64)
    for i, (v, a) in enumerate(zip(values, available)):
        if not a:
            continue
        col = index.get(v)
        if col is None:
            if counters is not None:
                counters["unseen_codes"] = counters.get("unseen_codes", 0) + 1
        else:
            out[i, col] = 1.0
    return out


def equal_frequency_bins(values: np.ndarray, bins: int) -> np.ndarray:
    """Interior quantile edges, deduplicated; constant data gets no edges."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    qs = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    return np.unique(np.quantile(values, qs))


def mutual_information(
    values: Sequence[Value],
    available: np.ndarray,
    labels: np.ndarray,
    bins: int = 16,
    kind: str = "real",
) -> float:
    """Plug-in MI (nats) between the binned feature and the label, available rows only."""
    available = np.asarray(available, dtype=bool)
    labs = np.asarray(labels)[available]
    if labs.size == 0 or len(np.unique(labs)) < 2:
        raise InsufficientDataError("need >= 2 label values over available rows")
    if kind == "real":
        vals = np.asarray([v for v, a in zip(values, available) if a], dtype=np.float64)
        edges = equal_frequency_bins(vals, bins)
        cells = np.searchsorted(edges, vals, side="right")
    else:
        present = [v for v, a in zip(values, available) if a]
        codes = {c: i for i, c in enumerate(sorted(set(present), key=lambda v: (isinstance(v, str), v)))}
        cells = np.asarray([codes[v] for v in present])
    joint: dict = {}
    for c, l in zip(cells, labs):
        joint[(int(c), int(l))] = joint.get((int(c), int(l)), 0) + 1
    n = labs.size
    px: dict = {}
    py: dict = {}
    for (cx, cy), cnt in joint.items():
        px[cx] = px.get(cx, 0) + cnt
        py[cy] = py.get(cy, 0) + cnt
    mi = 0.0
    for (cx, cy), cnt in joint.items():
        p = cnt / n
        mi += p * math.log(p * n * n / (px[cx] * py[cy]))
    return max(mi, 0.0)


# --- label rules ----------------------------------------------------------------


def _check_measurement(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InvalidMeasurementError(f"{what} must be positive and finite, got {value}")
    return value


def label_diabetes(glucose_mg_dl: float) -> int:
    """Fasting glucose: <100 normal, 100..125 intermediate, >125 positive."""
    g = _check_measurement(glucose_mg_dl, "glucose")
    if g < 100:
        return 0
    if g <= 125:
        return 1
    return 2


def label_hypertension(systolic_mm_hg: float) -> int:
    """Systolic pressure strictly above 140 is positive."""
    s = _check_measurement(systolic_mm_hg, "systolic pressure")
    return 1 if s > 140 else 0


def label_heart_disease(flags: Sequence[Optional[bool]]) -> Optional[int]:
    """Any affirmative history flag is positive; all-missing means no label."""
    flags = list(flags)
    if not flags:
        raise NoIndicatorsConfiguredError("no indicator variables configured")
    if any(f is True for f in flags):
        return 1
    if all(f is None for f in flags):
        return None
    return 0


# --- task definitions -----------------------------------------------------------


@dataclass
class TaskDef:
    """Names a task: which variables define the label and how."""

    name: str
    target_variables: tuple
    label_fn: Callable[[Mapping[str, Value]], Optional[int]]
    n_classes: int


def diabetes_task(glucose_var: str, name: str = "diabetes") -> TaskDef:
    def fn(row: Mapping[str, Value]) -> Optional[int]:
        g = row.get(glucose_var)
        return None if g is None else label_diabetes(g)

    return TaskDef(name, (glucose_var,), fn, 3)


def hypertension_task(systolic_var: str, name: str = "hypertension") -> TaskDef:
    def fn(row: Mapping[str, Value]) -> Optional[int]:
        s = row.get(systolic_var)
        return None if s is None else label_hypertension(s)

    return TaskDef(name, (systolic_var,), fn, 2)


def heart_disease_task(
    indicator_vars: Sequence[str], affirmative: float = 1.0, name: str = "heart-disease"
) -> TaskDef:
    indicator_vars = tuple(indicator_vars)
    if not indicator_vars:
        raise NoIndicatorsConfiguredError("no indicator variables configured")

    def fn(row: Mapping[str, Value]) -> Optional[int]:
        flags = []
        for var in indicator_vars:
            v = row.get(var)
            flags.append(None if v is None else v == affirmative)
        return label_heart_disease(flags)

    return TaskDef(name, indicator_vars, fn, 2)


# --- selection ------------------------------------------------------------------


@dataclass(frozen=True)
class SelectedVariable:
    variable_id: str
    mi: float
    availability: float
    kind: str


def auto_select(
    tables: Sequence[VariableTable],
    subjects: Sequence[int],
    labels: np.ndarray,
    tau_mi: float = 0.02,
    tau_avail: float = 0.5,
    mi_bins: int = 16,
    exclude: Iterable[str] = (),
) -> list[SelectedVariable]:
    """Keep variables informative about the label and mostly measured.

    MI and availability are computed over the given subjects (pass the
    training split). Order: MI descending, then name, so output is stable.
    """
    if tau_mi < 0:
        raise ValueError("tau_mi must be >= 0")
    if not 0.0 <= tau_avail <= 1.0:
        raise ValueError("tau_avail must lie in [0, 1]")
    excluded = set(exclude)
    picked = []
    for table in tables:
        if table.variable_id in excluded:
            continue
        lookup = table.as_mapping()
        vals = [lookup.get(s) for s in subjects]
        avail = np.array([v is not None for v in vals])
        frac = float(avail.mean()) if len(avail) else 0.0
        if frac < tau_avail:
            continue
        kind = table.declared_kind or infer_kind(vals)
        mi_kind = "real" if kind in ("real", "binary") else "categorical"
        try:
            mi = mutual_information(vals, avail, labels, bins=mi_bins, kind=mi_kind)
        except InsufficientDataError:
            continue
        if mi >= tau_mi:
            picked.append(SelectedVariable(table.variable_id, mi, frac, kind))
    picked.sort(key=lambda s: (-s.mi, s.variable_id))
    if not picked:
        raise NoFeaturesSelectedError(
            f"no variable passed tau_mi={tau_mi}, tau_avail={tau_avail}"
        )
    return picked


# --- dataset assembly -----------------------------------------------------------


@dataclass
class TaskDataset:
    """Model-ready rows: normalized values, per-feature availability, labels."""

    matrix: np.ndarray  # (N, catalog.total_width)
    availability: np.ndarray  # (N, d) 0/1
    labels: np.ndarray  # (N,) ints in [0, n_classes)
    catalog: FeatureCatalog
    norm_stats: dict  # feature name -> (mean, std) in original units
    task_name: str
    n_classes: int
    subject_ids: list = field(default_factory=list)
    vocabularies: dict = field(default_factory=dict)  # feature name -> code list


@dataclass
class TaskSplits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class TaskBundle:
    dataset: TaskDataset
    splits: TaskSplits
    manifest: dict
    counters: dict


@dataclass
class PrepConfig:
    seed: int = 0
    tau_mi: float = 0.02
    tau_avail: float = 0.5
    mi_bins: int = 16
    split_fractions: tuple = (0.70, 0.15, 0.15)
    features: Optional[Sequence[str]] = None  # explicit list bypasses auto_select
    category_map: Mapping[str, str] = field(default_factory=dict)
    default_category: str = "questionnaire"
    cost_table: Optional[CostTable] = None

    def __post_init__(self):
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def split_indices(n: int, fractions: tuple, seed: int) -> TaskSplits:
    """Seeded shuffle of range(n) cut at 70/15/15 (or whatever fractions say)."""
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_train = int(fractions[0] * n)
    n_val = int((fractions[0] + fractions[1]) * n) - n_train
    return TaskSplits(
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train : n_train + n_val]),
        test=np.sort(order[n_train + n_val :]),
    )


def compute_labels(
    tables: Mapping[str, VariableTable], task: TaskDef
) -> tuple[list, np.ndarray]:
    """Labeled subjects (sorted) and their classes; unlabelable subjects drop out."""
    maps = {v: tables[v].as_mapping() for v in task.target_variables if v in tables}
    if not maps:
        raise EmptyJoinError(f"none of {task.target_variables} present in the corpus")
    candidates = sorted(set().union(*[set(m) for m in maps.values()]))
    subjects, labels = [], []
    for sid in candidates:
        row = {v: m.get(sid) for v, m in maps.items()}
        y = task.label_fn(row)
        if y is not None:
            subjects.append(sid)
            labels.append(y)
    if not subjects:
        raise EmptyJoinError(f"no subject has a computable {task.name} label")
    return subjects, np.asarray(labels, dtype=np.int64)


def build_task(
    tables: Sequence[VariableTable],
    task: TaskDef,
    config: PrepConfig,
) -> TaskBundle:
    """Join, label, select, encode, and split one task's dataset.

    Selection, normalization statistics, and vocabularies come from the
    training split; encoding is then applied to every row.
    """
    by_id = {t.variable_id: t for t in tables}
    counters: dict = {}
    subjects, labels = compute_labels(by_id, task)
    n = len(subjects)
    splits = split_indices(n, config.split_fractions, config.seed)
    train_subjects = [subjects[i] for i in splits.train]
    train_labels = labels[splits.train]

    if config.features is not None:
        chosen = []
        for name in config.features:
            if name not in by_id:
                raise KeyError(f"requested feature {name!r} not in corpus")
            t = by_id[name]
            vals = [t.as_mapping().get(s) for s in train_subjects]
            kind = t.declared_kind or infer_kind(vals)
            chosen.append(SelectedVariable(name, math.nan, math.nan, kind))
    else:
        chosen = auto_select(
            tables,
            train_subjects,
            train_labels,
            tau_mi=config.tau_mi,
            tau_avail=config.tau_avail,
            mi_bins=config.mi_bins,
            exclude=task.target_variables,
        )

    cost_table = config.cost_table or reference_cost_table()
    is_train_row = np.zeros(n, dtype=bool)
    is_train_row[splits.train] = True

    entries: list[FeatureMeta] = []
    columns: list[np.ndarray] = []
    avail_cols: list[np.ndarray] = []
    norm_stats: dict = {}
    vocabularies: dict = {}
    for sel in chosen:
        table = by_id[sel.variable_id]
        lookup = table.as_mapping()
        vals = [lookup.get(s) for s in subjects]
        avail = np.array([v is not None for v in vals])
        category = config.category_map.get(sel.variable_id)
        if category is None:
            category = config.default_category
            log.warning(
                "variable %s has no category mapping, defaulting to %s",
                sel.variable_id,
                category,
            )
        cost = as_cost(cost_table[category])
        if sel.kind in ("real", "binary"):
            numeric = np.array([v if v is not None else 0.0 for v in vals], dtype=np.float64)
            try:
                stats = compute_norm_stats(numeric[is_train_row], avail[is_train_row])
            except DegenerateColumnError as err:
                log.warning("dropping %s: %s", sel.variable_id, err)
                counters["dropped_degenerate"] = counters.get("dropped_degenerate", 0) + 1
                continue
            norm_stats[sel.variable_id] = stats
            columns.append(apply_norm(numeric, avail, stats)[:, None])
            width = 1
        else:
            train_vals = [v for v, tr in zip(vals, is_train_row) if tr]
            try:
                vocab = build_vocabulary(train_vals, avail[is_train_row])
            except EmptyVocabularyError as err:
                log.warning("dropping %s: %s", sel.variable_id, err)
                counters["dropped_empty_vocab"] = counters.get("dropped_empty_vocab", 0) + 1
                continue
            vocabularies[sel.variable_id] = vocab
            columns.append(one_hot(vals, avail, vocab, counters))
            width = len(vocab)
        entries.append(FeatureMeta(sel.variable_id, sel.kind, category, cost, width))
        avail_cols.append(avail.astype(np.int8)[:, None])

    if not entries:
        raise NoFeaturesSelectedError("every candidate variable was dropped during encoding")
    catalog = FeatureCatalog(entries)
    dataset = TaskDataset(
        matrix=np.hstack(columns),
        availability=np.hstack(avail_cols),
        labels=labels,
        catalog=catalog,
        norm_stats=norm_stats,
        task_name=task.name,
        n_classes=task.n_classes,
        subject_ids=list(subjects),
        vocabularies=vocabularies,
    )
    manifest = {
        "format_version": 1,
        "task": task.name,
        "n_classes": task.n_classes,
        "seed": config.seed,
        "thresholds": {"tau_mi": config.tau_mi, "tau_avail": config.tau_avail},
        "mi_bins": config.mi_bins,
        "split_fractions": list(config.split_fractions),
        "n_rows": n,
        "split_sizes": {
            "train": int(splits.train.size),
            "val": int(splits.val.size),
            "test": int(splits.test.size),
        },
        "features": [e.name for e in entries],
        "norm_stats": {k: [v[0], v[1]] for k, v in norm_stats.items()},
        "vocabularies": {k: list(v) for k, v in vocabularies.items()},
        "counters": counters,
    }
    return TaskBundle(dataset=dataset, splits=splits, manifest=manifest, counters=counters)


# --- bundle persistence ----------------------------------------------------------


def column_headers(catalog: FeatureCatalog) -> list[str]:
    headers = []
    for e in catalog:
        if e.encoded_width == 1:
            headers.append(e.name)
        else:
            headers.extend(f"{e.name}[{i}]" for i in range(e.encoded_width))
    return headers


def save_bundle(bundle: TaskBundle, out_dir: Union[str, Path]) -> None:
    """matrix.csv + catalog.csv + splits.json + manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = bundle.dataset
    with open(out / "matrix.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "label"]
            + [f"k:{e.name}" for e in ds.catalog]
            + [f"v:{h}" for h in column_headers(ds.catalog)]
        )
        for i in range(ds.matrix.shape[0]):
            writer.writerow(
                [ds.subject_ids[i], int(ds.labels[i])]
                + [int(a) for a in ds.availability[i]]
                + [repr(float(v)) for v in ds.matrix[i]]
            )
    with open(out / "catalog.csv", "w", newline="") as fh:
        ds.catalog.to_csv(fh)
    with open(out / "splits.json", "w") as fh:
        json.dump(
            {
                "format_version": 1,
                "train": bundle.splits.train.tolist(),
                "val": bundle.splits.val.tolist(),
                "test": bundle.splits.test.tolist(),
            },
            fh,
        )
    with open(out / "manifest.json", "w") as fh:
        json.dump(bundle.manifest, fh, indent=2, sort_keys=True)


def load_bundle(in_dir: Union[str, Path]) -> TaskBundle:
    src = Path(in_dir)
    with open(src / "catalog.csv", newline="") as fh:
        catalog = FeatureCatalog.from_csv(fh)
    with open(src / "manifest.json") as fh:
        manifest = json.load(fh)
    with open(src / "splits.json") as fh:
        raw = json.load(fh)
    splits = TaskSplits(
        train=np.asarray(raw["train"], dtype=np.int64),
        val=np.asarray(raw["val"], dtype=np.int64),
        test=np.asarray(raw["test"], dtype=np.int64),
    )
    d = len(catalog)
    sids, labels, avail, rows = [], [], [], []
    with open(src / "matrix.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            sids.append(int(row[0]))
            labels.append(int(row[1]))
            avail.append([int(x) for x in row[2 : 2 + d]])
            rows.append([float(x) for x in row[2 + d :]])
    dataset = TaskDataset(
        matrix=np.asarray(rows, dtype=np.float64),
        availability=np.asarray(avail, dtype=np.int8),
        labels=np.asarray(labels, dtype=np.int64),
        catalog=catalog,
        norm_stats={k: (v[0], v[1]) for k, v in manifest["norm_stats"].items()},
        task_name=manifest["task"],
        n_classes=manifest["n_classes"],
        subject_ids=sids,
        vocabularies={k: list(v) for k, v in manifest.get("vocabularies", {}).items()},
    )
    return TaskBundle(dataset=dataset, splits=splits, manifest=manifest, counters=manifest.get("counters", {}))
