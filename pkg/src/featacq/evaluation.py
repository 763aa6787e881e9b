"""Evaluation harness: budget and penalty sweeps, order matrices, reports.

Each sweep point runs every test instance through one episode and reports
(mean exact cost, accuracy). Per-episode randomness is derived from the
instance content, so duplicating rows of the test set cannot move a point,
and a fixed seed reproduces every artifact byte for byte. Episodes are
independent over immutable inputs; they run here as an ordered sequential
reduction so the aggregation itself is deterministic.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    TRAJECTORY_HEADER,
    FeatureCatalog,
    COST_CATEGORIES,
    initial_state,
    replay_trajectory,
)
from .nets import (
    AdamConfig,
    adam_step,
    backward,
    cross_entropy,
    dense_net,
    forward,
    init_adam,
    make_rng,
    minibatches,
)
from .strategies import (
    ExhaustiveStrategy,
    FactStrategy,
    Instance,
    OlStrategy,
    RandomStrategy,
    RlStrategy,
    StaticOrderStrategy,
    dataset_instances,
    run_episode,
    strategy_to_dict,
)


class EvaluationError(Exception):
    pass


class UntrainedStrategyError(EvaluationError):
    """A sweep was asked to drive a strategy with missing fitted parts."""


class TrainingDivergedError(ArithmeticError):
    """The importance model's loss became non-finite."""


class IoError(OSError):
    """Export asked to write nothing or to an unusable destination."""


# --- deterministic per-episode seeding -------------------------------------------


def instance_seed(base_seed: int, instance: Instance) -> int:
    """Seed derived from the instance's content, not its position.

    Duplicated test rows therefore replay identical episodes, which keeps
    sweep points invariant under test-set duplication.
    """
    digest = hashlib.sha256()
    digest.update(str(int(base_seed)).encode())
    digest.update(np.ascontiguousarray(instance.values, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(instance.availability, dtype=np.int8).tobytes())
    digest.update(int(instance.label).to_bytes(8, "little", signed=True))
    return int.from_bytes(digest.digest()[:8], "little")


def bundle_instances(bundle, split: str = "test") -> list:
    indices = getattr(bundle.splits, split)
    return dataset_instances(bundle.dataset, indices)


# --- sweeps -----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    control: float
    mean_cost: float
    accuracy: float
    n_episodes: int


@dataclass
class SweepResult:
    strategy_id: str
    task_id: str
    seed: int
    points: list = field(default_factory=list)


def _check_trained(strategy) -> None:
    if isinstance(strategy, FactStrategy):
        try:
            strategy.model.require_trained()
        except Exception as exc:
            raise UntrainedStrategyError(str(exc)) from exc
        return
    predictor = getattr(strategy, "predictor", None)
    if predictor is None:
        raise UntrainedStrategyError(f"{type(strategy).__name__} has no predictor")
    if getattr(strategy, "q_net", "absent") is None:
        raise UntrainedStrategyError(f"{type(strategy).__name__} has no value network")


def sweep(
    strategy,
    instances: Sequence[Instance],
    controls: Sequence,
    rule_template: Callable,
    seed: int,
    catalog: FeatureCatalog,
    strategy_id: str = "strategy",
    task_id: str = "task",
    strategy_for_control: Optional[dict] = None,
) -> tuple:
    """Run every instance once per control value.

    ``rule_template`` maps a control value to a termination rule (for budget
    sweeps, Budget(control)); ``strategy_for_control`` optionally swaps in a
    differently trained strategy per control, which is how penalty sweeps
    evaluate one policy per penalty while keeping a single result table.

    Returns (SweepResult with points sorted by mean cost, trajectory lines).
    """
    if not instances:
        raise EvaluationError("sweep needs at least one test instance")
    points = []
    lines = [TRAJECTORY_HEADER]
    for control in controls:
        active = strategy if strategy_for_control is None else strategy_for_control[control]
        _check_trained(active)
        rule = rule_template(control)
        hits = 0
        total = Fraction(0)
        for i, inst in enumerate(instances):
            episode_id = f"{task_id}/{strategy_id}/c={control}/i={i}"
            rng = make_rng(instance_seed(seed, inst))
            result = run_episode(active, inst, catalog, rule, rng=rng, episode_id=episode_id)
            hits += result.correct
            total += result.total_cost
            lines.extend(result.trajectory_lines())
        n = len(instances)
        points.append(
            SweepPoint(
                control=float(control),
                mean_cost=float(total / n),
                accuracy=hits / n,
                n_episodes=n,
            )
        )
    points.sort(key=lambda p: (p.mean_cost, p.control))
    return SweepResult(strategy_id, task_id, seed, points), lines


def mean_cost_from_log(
    lines: Sequence[str], task_id: str, strategy_id: str, control, n_episodes: int
) -> float:
    """Independent check: one point's mean cost recomputed from the raw log.

    Episodes that never bought anything are absent from the log and count
    as zero spend.
    """
    prefix = f"{task_id}/{strategy_id}/c={control}/i="
    totals = replay_trajectory(lines)
    subtotal = sum((v for k, v in totals.items() if k.startswith(prefix)), Fraction(0))
    return float(subtotal / n_episodes)


def full_state_accuracy(strategy, instances: Sequence[Instance], catalog: FeatureCatalog) -> float:
    """The strategy's own predictor applied to fully acquired states."""
    ones = np.ones(len(catalog), dtype=np.int8)
    hits = sum(
        strategy.predict(initial_state(catalog, x_row=inst.values, k0=ones)) == inst.label
        for inst in instances
    )
    return hits / len(instances)


def empty_state_accuracy(strategy, instances: Sequence[Instance], catalog: FeatureCatalog) -> float:
    hits = sum(
        strategy.predict(initial_state(catalog)) == inst.label for inst in instances
    )
    return hits / len(instances)


# --- acquisition-order matrices ---------------------------------------------------


@dataclass
class OrderMatrix:
    """Acquisition ranks per sampled episode, columns grouped by cost category.

    ``ranks[i, c]`` is 1 for the first feature episode i bought, 2 for the
    second, and 0 where the feature was never acquired.
    """

    feature_names: list
    categories: list
    episode_ids: list
    ranks: np.ndarray


def order_matrix(
    strategy,
    instances: Sequence[Instance],
    n_samples: int,
    rule,
    seed: int,
    catalog: FeatureCatalog,
    task_id: str = "task",
) -> OrderMatrix:
    if n_samples < 1:
        raise EvaluationError("n_samples must be >= 1")
    rng = make_rng(seed)
    chosen = rng.choice(len(instances), size=n_samples, replace=n_samples > len(instances))
    column_order = sorted(
        range(len(catalog)),
        key=lambda j: (COST_CATEGORIES.index(catalog.entries[j].category), j),
    )
    names = [catalog.entries[j].name for j in column_order]
    cats = [catalog.entries[j].category for j in column_order]
    ranks = np.zeros((n_samples, len(catalog)), dtype=np.int64)
    ids = []
    for row, idx in enumerate(chosen):
        inst = instances[int(idx)]
        episode_id = f"{task_id}/order/i={int(idx)}"
        episode_rng = make_rng(instance_seed(seed, inst))
        result = run_episode(strategy, inst, catalog, rule, rng=episode_rng, episode_id=episode_id)
        ids.append(episode_id)
        for position, j in enumerate(result.order, start=1):
            ranks[row, column_order.index(j)] = position
    return OrderMatrix(names, cats, ids, ranks)


def median_rank(matrix: OrderMatrix, feature: str) -> float:
    """Median acquisition rank over the episodes that actually bought it."""
    col = matrix.feature_names.index(feature)
    got = matrix.ranks[:, col]
    got = got[got > 0]
    if got.size == 0:
        return math.inf
    return float(np.median(got))


# --- feature importance -------------------------------------------------------------


def logistic_importance(
    dataset,
    l2: float = 1e-3,
    epochs: int = 60,
    learning_rate: float = 0.05,
    batch_size: int = 64,
    seed: int = 0,
) -> list:
    """Weight-magnitude ranking from a regularized zero-hidden-layer model.

    Trains softmax regression on the fully encoded matrix with an L2 weight
    penalty, then scores each feature by the mean absolute weight over its
    encoded columns and all classes, scaled so the top feature is 1.
    """
    catalog = dataset.catalog
    x = np.asarray(dataset.matrix, dtype=np.float64)
    y = np.eye(dataset.n_classes)[np.asarray(dataset.labels, dtype=np.int64)]
    rng = make_rng(seed)
    net = dense_net([catalog.total_width, dataset.n_classes], ["softmax"], rng=rng)
    adam = AdamConfig(learning_rate=learning_rate, batch_size=batch_size)
    adam_state = init_adam(net)
    for _ in range(epochs):
        for idx in minibatches(n=x.shape[0], batch_size=batch_size, rng=rng):
            out, cache = forward(net, x[idx], mode="train", rng=rng)
            value, grad = cross_entropy(out, y[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(f"importance model loss became {value!r}")
            grads = backward(net, cache, grad)
            grads.weights[0] = grads.weights[0] + 2.0 * l2 * net.layers[0].weight
            adam_step(net, grads, adam_state, adam)
    weights = np.abs(net.layers[0].weight)  # (classes, total_width)
    raw = np.array([weights[:, catalog.block(j)].mean() for j in range(len(catalog))])
    top = raw.max()
    if not np.isfinite(top):
        raise TrainingDivergedError("importance weights became non-finite")
    scaled = raw / top if top > 0 else np.ones_like(raw)
    ranked = sorted(zip(catalog.names, scaled), key=lambda kv: (-kv[1], kv[0]))
    return [(name, float(v)) for name, v in ranked]


# --- exports --------------------------------------------------------------------------


def sweep_to_csv(result: SweepResult, fh) -> None:
    fh.write("strategy_id,task_id,seed,control,mean_cost,accuracy,n_episodes\n")
    for p in result.points:
        fh.write(
            f"{result.strategy_id},{result.task_id},{result.seed},"
            f"{p.control!r},{p.mean_cost!r},{p.accuracy!r},{p.n_episodes}\n"
        )


def sweep_from_csv(fh) -> SweepResult:
    header = fh.readline().strip()
    expected = "strategy_id,task_id,seed,control,mean_cost,accuracy,n_episodes"
    if header != expected:
        raise ValueError(f"sweep header must be {expected!r}, got {header!r}")
    result = None
    for line in fh:
        line = line.strip()
        if not line:
            continue
        strategy_id, task_id, seed, control, cost, acc, n = line.split(",")
        if result is None:
            result = SweepResult(strategy_id, task_id, int(seed))
        result.points.append(
            SweepPoint(float(control), float(cost), float(acc), int(n))
        )
    if result is None:
        raise ValueError("sweep file contains no points")
    return result


def order_matrix_to_csv(matrix: OrderMatrix, fh) -> None:
    fh.write("episode_id," + ",".join(matrix.feature_names) + "\n")
    fh.write("category," + ",".join(matrix.categories) + "\n")
    for eid, row in zip(matrix.episode_ids, matrix.ranks):
        cells = ["" if r == 0 else str(int(r)) for r in row]
        fh.write(eid + "," + ",".join(cells) + "\n")


def importance_to_csv(ranked: Sequence, fh) -> None:
    fh.write("feature,importance\n")
    for name, value in ranked:
        fh.write(f"{name},{value!r}\n")


def _deterministic_figure():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "featacq"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def plot_sweeps(results: Sequence[SweepResult], path) -> None:
    """Accuracy-versus-cost chart, one named series per strategy, as SVG."""
    if not results:
        raise IoError("nothing to plot")
    plt = _deterministic_figure()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for result in results:
        xs = [p.mean_cost for p in result.points]
        ys = [p.accuracy for p in result.points]
        ax.plot(xs, ys, marker="o", label=result.strategy_id)
    ax.set_xlabel("mean acquisition cost")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_order_matrix(matrix: OrderMatrix, path) -> None:
    if matrix.ranks.size == 0:
        raise IoError("nothing to plot")
    plt = _deterministic_figure()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    shown = np.ma.masked_equal(matrix.ranks, 0)
    image = ax.imshow(shown, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(matrix.feature_names)))
    ax.set_xticklabels(matrix.feature_names, rotation=90, fontsize=7)
    ax.set_ylabel("episode")
    fig.colorbar(image, ax=ax, label="acquisition rank")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def export(results: Sequence[SweepResult], fmt: str, path) -> Path:
    """Write sweeps as csv, json, or plot. Refuses to create empty artifacts."""
    if not results:
        raise IoError("refusing to export an empty result list")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w") as fh:
            for result in results:
                sweep_to_csv(result, fh)
    elif fmt == "json":
        doc = [
            {
                "strategy_id": r.strategy_id,
                "task_id": r.task_id,
                "seed": r.seed,
                "points": [
                    {
                        "control": p.control,
                        "mean_cost": p.mean_cost,
                        "accuracy": p.accuracy,
                        "n_episodes": p.n_episodes,
                    }
                    for p in r.points
                ],
            }
            for r in results
        ]
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    elif fmt == "plot":
        plot_sweeps(results, path)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return path


def checkpoint_hash(strategy) -> str:
    payload = json.dumps(strategy_to_dict(strategy), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def strategy_label(strategy) -> str:
    return {
        RandomStrategy: "random",
        StaticOrderStrategy: "static-order",
        ExhaustiveStrategy: "exhaustive",
        FactStrategy: "fact",
        RlStrategy: "rl",
        OlStrategy: "ol",
    }.get(type(strategy), type(strategy).__name__.lower())


def write_results(
    out_dir,
    task_id: str,
    strategy_id: str,
    sweep_result: SweepResult | None = None,
    trajectory_lines: Sequence[str] | None = None,
    matrix: OrderMatrix | None = None,
    importance: Sequence | None = None,
    manifest: dict | None = None,
) -> dict:
    """Materialize the per-strategy results directory; returns written paths."""
    base = Path(out_dir) / task_id / strategy_id
    base.mkdir(parents=True, exist_ok=True)
    written = {}
    if sweep_result is not None:
        with open(base / "sweep.csv", "w") as fh:
            sweep_to_csv(sweep_result, fh)
        written["sweep"] = base / "sweep.csv"
        plot_sweeps([sweep_result], base / "curve.svg")
        written["curve"] = base / "curve.svg"
    if trajectory_lines is not None:
        with open(base / "trajectories.csv", "w") as fh:
            fh.write("\n".join(trajectory_lines) + "\n")
        written["trajectories"] = base / "trajectories.csv"
    if matrix is not None:
        with open(base / "order_matrix.csv", "w") as fh:
            order_matrix_to_csv(matrix, fh)
        written["order_matrix"] = base / "order_matrix.csv"
        plot_order_matrix(matrix, base / "order_plot.svg")
        written["order_plot"] = base / "order_plot.svg"
    if importance is not None:
        with open(base / "importance.csv", "w") as fh:
            importance_to_csv(importance, fh)
        written["importance"] = base / "importance.csv"
    if manifest is not None:
        with open(base / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        written["manifest"] = base / "manifest.json"
    return written
