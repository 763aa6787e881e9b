"""Convenience-survey aggregation into per-category feature costs.

Respondents rate how convenient it is to provide four kinds of health
information (demographic facts, lifestyle questions, physical examinations,
lab tests) on a 1..10 scale. Costs invert convenience: cost = 11 - median
rating, so the easiest category to provide is the cheapest to acquire.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Union

from .core import COST_CATEGORIES, FeatureCatalog, FeatureMeta, as_cost

N_QUESTIONS = 4


class EmptySurveyError(ValueError):
    """No responses to aggregate."""


class OutOfRangeError(ValueError):
    """Rating or median outside the 1..10 scale."""


class UnmappedCategoryError(KeyError):
    """Catalog category missing from the cost table."""


@dataclass(frozen=True)
class SurveyResponse:
    """One respondent's four convenience ratings, in category order."""

    answers: tuple

    def __post_init__(self):
        if len(self.answers) != N_QUESTIONS:
            raise ValueError(f"expected {N_QUESTIONS} answers, got {len(self.answers)}")
        for a in self.answers:
            if not isinstance(a, int) or not 1 <= a <= 10:
                raise OutOfRangeError(f"ratings must be integers in [1, 10], got {a!r}")


def lower_median(values: Iterable[int]) -> int:
    """Median that stays integer for even counts: element ceil(n/2) of the sorted list."""
    ordered = sorted(values)
    if not ordered:
        raise EmptySurveyError("no values to take a median of")
    return ordered[(len(ordered) - 1) // 2]


def aggregate_medians(responses: Iterable[SurveyResponse]) -> tuple:
    responses = list(responses)
    if not responses:
        raise EmptySurveyError("survey has no responses")
    return tuple(
        lower_median(r.answers[q] for r in responses) for q in range(N_QUESTIONS)
    )


def convenience_to_cost(median: int) -> int:
    if not 1 <= median <= 10:
        raise OutOfRangeError(f"median must lie in [1, 10], got {median}")
    return 11 - median


@dataclass(frozen=True)
class CostTable:
    """Per-category acquisition cost; all four categories, each in [1, 10]."""

    costs: Mapping[str, int]

    def __post_init__(self):
        missing = set(COST_CATEGORIES) - set(self.costs)
        if missing:
            raise ValueError(f"cost table missing categories: {sorted(missing)}")
        extra = set(self.costs) - set(COST_CATEGORIES)
        if extra:
            raise ValueError(f"unknown categories: {sorted(extra)}")
        for cat, cost in self.costs.items():
            if not isinstance(cost, int) or not 1 <= cost <= 10:
                raise OutOfRangeError(f"cost for {cat!r} must be an integer in [1, 10]")

    def __getitem__(self, category: str) -> int:
        return self.costs[category]

    @classmethod
    def from_medians(cls, medians: Iterable[int]) -> "CostTable":
        medians = tuple(medians)
        if len(medians) != len(COST_CATEGORIES):
            raise ValueError(f"expected {len(COST_CATEGORIES)} medians")
        return cls({cat: convenience_to_cost(m) for cat, m in zip(COST_CATEGORIES, medians)})

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh)
        writer.writerow(["category", "cost"])
        for cat in COST_CATEGORIES:
            writer.writerow([cat, self.costs[cat]])

    @classmethod
    def from_csv(cls, fh: IO[str]) -> "CostTable":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["category", "cost"]:
            raise ValueError(f"cost table header must be category,cost, got {header}")
        costs = {}
        for row in reader:
            if not row:
                continue
            costs[row[0]] = int(row[1])
        return cls(costs)


def survey_costs(responses: Iterable[SurveyResponse]) -> CostTable:
    return CostTable.from_medians(aggregate_medians(responses))


def assign_costs(catalog: FeatureCatalog, table: Union[CostTable, Mapping[str, int]]) -> FeatureCatalog:
    """Stamp each feature's cost from its category; everything else unchanged."""
    lookup = table.costs if isinstance(table, CostTable) else table
    entries = []
    for e in catalog:
        if e.category not in lookup:
            raise UnmappedCategoryError(e.category)
        entries.append(
            FeatureMeta(e.name, e.kind, e.category, as_cost(lookup[e.category]), e.encoded_width)
        )
    return FeatureCatalog(entries)


def load_survey_csv(fh: IO[str]) -> list[SurveyResponse]:
    """Read `respondent_id,q1,q2,q3,q4` rows; the id column is ignored."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != ["respondent_id", "q1", "q2", "q3", "q4"]:
        raise ValueError(f"survey header must be respondent_id,q1,q2,q3,q4, got {header}")
    responses = []
    for row in reader:
        if not row:
            continue
        responses.append(SurveyResponse(tuple(int(a) for a in row[1:5])))
    if not responses:
        raise EmptySurveyError("survey file has no response rows")
    return responses


def load_medians_csv(fh: IO[str]) -> tuple:
    """Read `category,median` rows in any order; all four categories required."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != ["category", "median"]:
        raise ValueError(f"medians header must be category,median, got {header}")
    by_cat = {}
    for row in reader:
        if not row:
            continue
        by_cat[row[0]] = int(row[1])
    missing = set(COST_CATEGORIES) - set(by_cat)
    if missing:
        raise ValueError(f"medians file missing categories: {sorted(missing)}")
    return tuple(by_cat[c] for c in COST_CATEGORIES)


def reference_cost_table() -> CostTable:
    """Cost table from the bundled survey summary (medians per category)."""
    from importlib import resources

    ref = resources.files("featacq").joinpath("fixtures/survey_medians.csv")
    with ref.open("r", encoding="utf-8") as fh:
        return CostTable.from_medians(load_medians_csv(fh))
