"""Feature-mask decision process: catalogs, partial states, query, termination.

The acquisition engine models a test instance as a partially observed feature
vector. Each feature has a purchase cost; buying feature ``j`` flips its mask
bit, writes its value, and charges the catalog cost. Cost bookkeeping is done
in exact rational arithmetic (`fractions.Fraction`) so that replaying a
trajectory log reproduces the spent amount bit for bit.

States are value-semantic: `query` returns a fresh state and never mutates
its input, so episodes can run in parallel over a shared read-only catalog.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence, TextIO, Union

import numpy as np

FEATURE_KINDS = ("real", "categorical", "multiple-choice", "binary")
COST_CATEGORIES = ("demographics", "questionnaire", "examination", "laboratory")

CostLike = Union[int, float, str, Fraction]


class CoreError(Exception):
    """Base class for acquisition-state errors."""


class AlreadyAcquiredError(CoreError):
    """Attempt to purchase a feature whose mask bit is already set."""


class IndexOutOfRangeError(CoreError, IndexError):
    """Feature index outside the catalog."""


class DimensionMismatchError(CoreError):
    """State, value, or catalog dimensions do not line up."""


def as_cost(value: CostLike) -> Fraction:
    """Coerce a cost into an exact rational.

    Floats are read through their shortest decimal repr, so ``0.1`` means
    one tenth rather than its binary approximation. Strings accept decimals
    ("4.5") and explicit ratios ("9/2").
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"cost must be finite, got {value!r}")
        return Fraction(repr(value))
    return Fraction(str(value).strip())


def format_cost(cost: Fraction) -> str:
    """Render a rational cost exactly: decimal when possible, else 'p/q'."""
    den = cost.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{cost.numerator}/{cost.denominator}"
    shift = max(twos, fives)
    scaled = cost.numerator * 10**shift // cost.denominator
    digits = str(abs(scaled)).rjust(shift + 1, "0")
    sign = "-" if scaled < 0 else ""
    if shift == 0:
        return sign + digits
    return f"{sign}{digits[:-shift]}.{digits[-shift:]}"


@dataclass(frozen=True)
class FeatureMeta:
    """Catalog entry for one purchasable feature.

    ``encoded_width`` is the number of matrix columns the feature occupies
    after preprocessing (1 for reals, vocabulary size for one-hot groups).
    The whole group is bought atomically at a single cost.
    """

    name: str
    kind: str
    category: str
    cost: Fraction
    encoded_width: int = 1


class FeatureCatalog:
    """Ordered, validated collection of FeatureMeta entries."""

    def __init__(self, entries: Iterable[FeatureMeta]):
        entries = tuple(entries)
        if not entries:
            raise ValueError("catalog must contain at least one feature")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("catalog feature names must be unique")
        for e in entries:
            if e.kind not in FEATURE_KINDS:
                raise ValueError(f"unknown feature kind {e.kind!r} for {e.name!r}")
            if e.category not in COST_CATEGORIES:
                raise ValueError(f"unknown cost category {e.category!r} for {e.name!r}")
            if e.cost < 0:
                raise ValueError(f"negative cost for {e.name!r}")
            if e.encoded_width < 1:
                raise ValueError(f"encoded_width must be >= 1 for {e.name!r}")
            if e.kind == "real" and e.encoded_width != 1:
                raise ValueError(f"real feature {e.name!r} must have encoded_width 1")
        self.entries = entries
        self.costs: tuple[Fraction, ...] = tuple(e.cost for e in entries)
        self.widths = np.array([e.encoded_width for e in entries], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.widths)])
        self.total_width = int(self.offsets[-1])
        self._index = {e.name: i for i, e in enumerate(entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[FeatureMeta]:
        return iter(self.entries)

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def block(self, j: int) -> slice:
        """Column slice of feature ``j`` in the encoded matrix."""
        return slice(int(self.offsets[j]), int(self.offsets[j + 1]))

    def with_entries(self, entries: Iterable[FeatureMeta]) -> "FeatureCatalog":
        return FeatureCatalog(entries)

    def to_csv(self, fh: TextIO) -> None:
        writer = csv.writer(fh)
        writer.writerow(["name", "kind", "category", "cost", "encoded_width"])
        for e in self.entries:
            writer.writerow([e.name, e.kind, e.category, format_cost(e.cost), e.encoded_width])

    @classmethod
    def from_csv(cls, fh: TextIO) -> "FeatureCatalog":
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["name", "kind", "category", "cost", "encoded_width"]
        if header != expected:
            raise ValueError(f"catalog header must be {','.join(expected)}, got {header}")
        entries = []
        for row in reader:
            if not row:
                continue
            name, kind, category, cost, width = row
            entries.append(FeatureMeta(name, kind, category, as_cost(cost), int(width)))
        return cls(entries)


@dataclass(frozen=True)
class AcquisitionState:
    """Partially observed instance: encoded values plus per-feature masks.

    ``values`` spans the catalog's encoded columns (length ``total_width``)
    and is zero wherever the owning feature is unacquired; after
    standardization, zero stands for mean imputation. ``k0`` marks features
    known for free at intake, ``k`` the features acquired so far, and
    ``spent`` the exact cost charged beyond the free set.

    Treat instances as immutable; `query` returns a new state.
    """

    values: np.ndarray
    k0: np.ndarray
    k: np.ndarray
    spent: Fraction
    step: int

    @property
    def d(self) -> int:
        return int(self.k.shape[0])


def initial_state(
    catalog: FeatureCatalog,
    x_row: np.ndarray | None = None,
    k0: Sequence[int] | np.ndarray | None = None,
) -> AcquisitionState:
    """Fresh state at step 0: only the free-at-start features are visible.

    ``x_row`` (encoded width) supplies values for any feature with k0=1 and
    is required when k0 is nonzero.
    """
    d = len(catalog)
    if k0 is None:
        k0_arr = np.zeros(d, dtype=np.int8)
    else:
        k0_arr = np.asarray(k0, dtype=np.int8).copy()
        if k0_arr.shape != (d,):
            raise DimensionMismatchError(f"k0 must have length {d}")
    values = np.zeros(catalog.total_width, dtype=np.float64)
    if k0_arr.any():
        if x_row is None:
            raise DimensionMismatchError("x_row required when k0 has free features")
        x_row = np.asarray(x_row, dtype=np.float64)
        if x_row.shape != (catalog.total_width,):
            raise DimensionMismatchError(
                f"x_row must have length {catalog.total_width}, got {x_row.shape}"
            )
        for j in np.flatnonzero(k0_arr):
            blk = catalog.block(int(j))
            values[blk] = x_row[blk]
    return AcquisitionState(values=values, k0=k0_arr, k=k0_arr.copy(), spent=Fraction(0), step=0)


def query(
    state: AcquisitionState,
    j: int,
    value: float | np.ndarray,
    catalog: FeatureCatalog,
) -> AcquisitionState:
    """Purchase feature ``j``: flip its mask bit, write its value, pay its cost.

    ``value`` is a scalar for width-1 features or an array spanning the
    feature's encoded columns.
    """
    d = len(catalog)
    if state.d != d:
        raise DimensionMismatchError(f"state has {state.d} features, catalog {d}")
    if not 0 <= j < d:
        raise IndexOutOfRangeError(f"feature index {j} out of range [0, {d})")
    if state.k[j]:
        raise AlreadyAcquiredError(f"feature {j} ({catalog.entries[j].name}) already acquired")
    width = int(catalog.widths[j])
    block = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if block.shape != (width,):
        raise DimensionMismatchError(
            f"feature {j} spans {width} columns, got value of shape {block.shape}"
        )
    values = state.values.copy()
    values[catalog.block(j)] = block
    k = state.k.copy()
    k[j] = 1
    return AcquisitionState(
        values=values,
        k0=state.k0,
        k=k,
        spent=state.spent + catalog.costs[j],
        step=state.step + 1,
    )


def total_cost(state: AcquisitionState, catalog: FeatureCatalog) -> Fraction:
    """Exact spend: sum of catalog costs over acquired-but-not-free features."""
    if state.d != len(catalog):
        raise DimensionMismatchError(f"state has {state.d} features, catalog {len(catalog)}")
    total = Fraction(0)
    for j in range(state.d):
        if state.k[j] and not state.k0[j]:
            total += catalog.costs[j]
    return total


def available_actions(state: AcquisitionState) -> set[int]:
    """Indices still purchasable: exactly those with mask bit 0."""
    return {int(j) for j in np.flatnonzero(state.k == 0)}


@dataclass(frozen=True)
class Budget:
    """Stop before any further purchase would push spending past ``limit``.

    The limit is inclusive: a purchase landing exactly on it is allowed.
    ``math.inf`` never binds.
    """

    limit: Union[Fraction, float]

    def __post_init__(self):
        limit = self.limit
        if isinstance(limit, float):
            if math.isinf(limit) and limit > 0:
                return
            object.__setattr__(self, "limit", as_cost(limit))
            limit = self.limit
        if limit < 0:
            raise ValueError("budget must be non-negative")


@dataclass(frozen=True)
class Confidence:
    """Stop once prediction certainty reaches ``threshold``."""

    threshold: float

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("confidence threshold must lie in [0, 1]")


@dataclass(frozen=True)
class AllAcquired:
    """Stop only when every feature has been acquired."""


@dataclass(frozen=True)
class Composite:
    """Any-of combination of termination rules."""

    rules: tuple


TerminationRule = Union[Budget, Confidence, AllAcquired, Composite]


def is_terminal(
    state: AcquisitionState,
    rule: TerminationRule,
    certainty: float,
    catalog: FeatureCatalog,
) -> bool:
    """Decide whether acquisition must stop under ``rule``.

    Budget uses would-exceed lookahead: terminal as soon as even the cheapest
    remaining feature no longer fits, which guarantees spent never passes the
    limit.
    """
    if not 0.0 <= certainty <= 1.0:
        raise CoreError(f"certainty must lie in [0, 1], got {certainty}")
    if isinstance(rule, AllAcquired):
        return not available_actions(state)
    if isinstance(rule, Confidence):
        return certainty >= rule.threshold
    if isinstance(rule, Budget):
        remaining = [catalog.costs[j] for j in np.flatnonzero(state.k == 0)]
        if not remaining:
            return True
        if isinstance(rule.limit, float) and math.isinf(rule.limit):
            return False
        return state.spent + min(remaining) > rule.limit
    if isinstance(rule, Composite):
        return any(is_terminal(state, r, certainty, catalog) for r in rule.rules)
    raise TypeError(f"unknown termination rule {rule!r}")


def rule_needs_certainty(rule: TerminationRule) -> bool:
    if isinstance(rule, Confidence):
        return True
    if isinstance(rule, Composite):
        return any(rule_needs_certainty(r) for r in rule.rules)
    return False


def rule_budget_cap(rule: TerminationRule) -> Fraction | None:
    """Tightest finite budget inside ``rule``, or None when unbounded."""
    if isinstance(rule, Budget):
        if isinstance(rule.limit, float) and math.isinf(rule.limit):
            return None
        return rule.limit
    if isinstance(rule, Composite):
        caps = [c for c in (rule_budget_cap(r) for r in rule.rules) if c is not None]
        return min(caps) if caps else None
    return None


# --- Trajectory log: one line per purchase, exact decimal costs ---------------

TRAJECTORY_HEADER = "episode_id,step,feature_index,cost,spent_after"


def trajectory_line(episode_id: str, step: int, j: int, cost: Fraction, spent_after: Fraction) -> str:
    return f"{episode_id},{step},{j},{format_cost(cost)},{format_cost(spent_after)}"


def replay_trajectory(lines: Iterable[str]) -> dict[str, Fraction]:
    """Recompute per-episode totals from a trajectory log by pure summation.

    Independent of the state machinery: only the per-step cost column is
    summed, and each line's running total is cross-checked.
    """
    totals: dict[str, Fraction] = {}
    for raw in lines:
        line = raw.strip()
        if not line or line == TRAJECTORY_HEADER:
            continue
        episode_id, _step, _j, cost, spent_after = line.rsplit(",", 4)
        total = totals.get(episode_id, Fraction(0)) + as_cost(cost)
        if total != as_cost(spent_after):
            raise ValueError(f"running total mismatch in trajectory log at line {line!r}")
        totals[episode_id] = total
    return totals
