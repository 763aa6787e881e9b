"""Synthetic acquisition tasks with known structure.

Used to exercise the policies end to end: a threshold task where exactly one
feature carries the label, a proxy task where a cheap noisy copy of an
expensive perfect feature is the economical buy, and a three-feature binary
toy small enough for exact dynamic-programming analysis.
"""

from __future__ import annotations

import numpy as np

from .core import FeatureCatalog, FeatureMeta, as_cost
from .pipeline import TaskBundle, TaskDataset, split_indices


def uniform_catalog(d: int, cost=1, category: str = "laboratory", prefix: str = "f") -> FeatureCatalog:
    return FeatureCatalog(
        [FeatureMeta(f"{prefix}{j}", "real", category, as_cost(cost)) for j in range(d)]
    )


def make_bundle(
    matrix: np.ndarray,
    availability: np.ndarray,
    labels: np.ndarray,
    catalog: FeatureCatalog,
    name: str,
    n_classes: int,
    seed: int,
    split_fractions: tuple = (0.70, 0.15, 0.15),
) -> TaskBundle:
    dataset = TaskDataset(
        matrix=matrix,
        availability=availability,
        labels=labels,
        catalog=catalog,
        norm_stats={},
        task_name=name,
        n_classes=n_classes,
        subject_ids=list(range(matrix.shape[0])),
    )
    splits = split_indices(matrix.shape[0], split_fractions, seed)
    manifest = {
        "format_version": 1,
        "task": name,
        "n_classes": n_classes,
        "seed": seed,
        "n_rows": int(matrix.shape[0]),
        "features": list(catalog.names),
        "norm_stats": {},
        "synthetic": True,
    }
    return TaskBundle(dataset=dataset, splits=splits, manifest=manifest, counters={})


def threshold_task_data(n: int = 2000, d: int = 8, seed: int = 0) -> TaskBundle:
    """Independent standard normals; only feature 0's sign sets the label."""
    gen = np.random.Generator(np.random.PCG64(seed))
    x = gen.normal(size=(n, d))
    labels = (x[:, 0] > 0).astype(np.int64)
    return make_bundle(
        x,
        np.ones((n, d), dtype=np.int8),
        labels,
        uniform_catalog(d, cost=1),
        "threshold",
        2,
        seed,
    )


def proxy_task_data(n: int = 2000, seed: int = 0, flip: float = 0.1, n_noise: int = 4) -> TaskBundle:
    """Perfect feature A at cost 9, a cheap proxy B (A flipped w.p. ``flip``)
    at cost 1, and ``n_noise`` irrelevant unit-cost noise features."""
    gen = np.random.Generator(np.random.PCG64(seed))
    a = gen.choice([-1.0, 1.0], size=n)
    flips = gen.random(n) < flip
    b = np.where(flips, -a, a)
    noise = gen.normal(size=(n, n_noise))
    matrix = np.column_stack([a, b, noise])
    labels = (a > 0).astype(np.int64)
    entries = [FeatureMeta("perfect", "real", "laboratory", as_cost(9))]
    entries.append(FeatureMeta("proxy", "real", "questionnaire", as_cost(1)))
    entries.extend(
        FeatureMeta(f"noise{i}", "real", "questionnaire", as_cost(1)) for i in range(n_noise)
    )
    return make_bundle(
        matrix,
        np.ones((n, 2 + n_noise), dtype=np.int8),
        labels,
        FeatureCatalog(entries),
        "proxy",
        2,
        seed,
    )


def three_bit_task_data(n: int = 2000, seed: int = 0) -> TaskBundle:
    """Three independent +-1 features, label = sign of feature 0, unit costs."""
    gen = np.random.Generator(np.random.PCG64(seed))
    x = gen.choice([-1.0, 1.0], size=(n, 3))
    labels = (x[:, 0] > 0).astype(np.int64)
    return make_bundle(
        x,
        np.ones((n, 3), dtype=np.int8),
        labels,
        uniform_catalog(3, cost=1),
        "three-bit",
        2,
        seed,
    )


def three_bit_joint() -> list:
    """Exact joint of the three-bit task: uniform over the 8 sign corners."""
    table = []
    for s0 in (-1.0, 1.0):
        for s1 in (-1.0, 1.0):
            for s2 in (-1.0, 1.0):
                table.append((0.125, (s0, s1, s2), int(s0 > 0)))
    return table
