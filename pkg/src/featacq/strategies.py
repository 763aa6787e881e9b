"""Acquisition policies: who to ask next, and when to stop and predict.

Four selector families share one episode driver:

* exhaustive lookahead: score every missing feature by the expected change
  in the classifier's output, binned over a training store, per unit cost;
* gradient lookahead: one backward pass through a bit-level classifier,
  weighted by autoencoder posteriors over the missing bits, per unit cost;
* penalty-driven Q-learning: terminal reward trades prediction errors
  against acquisition spend at an explicit exchange rate;
* certainty-driven Q-learning: immediate reward is the per-cost shift in
  model certainty, with a threshold stop.

Plus two baselines (random order, fixed order). Policies never re-buy a
feature and select by per-cost score with exact tie handling: scores are
compared as rationals so a uniform rescaling of all costs provably cannot
change any argmax.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import (
    AcquisitionState,
    AlreadyAcquiredError,
    FeatureCatalog,
    available_actions,
    initial_state,
    is_terminal,
    query,
    rule_budget_cap,
    rule_needs_certainty,
    trajectory_line,
)
from .nets import (
    AdamConfig,
    BitEncoder,
    DenoisingAutoencoder,
    DenseNet,
    adam_step,
    backward,
    corrupt_bits,
    dae_missing_posteriors,
    dense_net,
    forward,
    init_adam,
    make_rng,
    mc_certainty,
    minibatches,
    net_from_dict,
    net_to_dict,
    predict_proba,
    squared,
    train_epoch,
)


class StrategyError(Exception):
    """Base for policy-level failures."""


class EmptyStoreError(StrategyError):
    """The reference store for lookahead scoring has no rows."""


class ZeroCostError(StrategyError):
    """A per-cost reward was requested for a zero-cost feature."""


class UntrainedModelError(StrategyError):
    """A selector needs a fitted model that was never trained."""


class DivergedQError(ArithmeticError):
    """Temporal-difference loss became non-finite during Q training."""


# --- state representation -------------------------------------------------------


def state_rep(state: AcquisitionState) -> np.ndarray:
    """Network input for a partial state: encoded values then mask bits."""
    return np.concatenate([state.values, state.k.astype(np.float64)])


def random_mask_reps(
    matrix: np.ndarray,
    availability: np.ndarray,
    catalog: FeatureCatalog,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rows re-encoded as random partial states.

    Each row draws its own keep probability so training covers everything
    from nearly empty to nearly complete masks; unavailable features are
    never kept.
    """
    n, d = availability.shape
    u = rng.random((n, 1))
    keep = ((rng.random((n, d)) < u) & (availability == 1)).astype(np.float64)
    cols = np.repeat(keep, catalog.widths, axis=1)
    return np.concatenate([matrix * cols, keep], axis=1)


@dataclass
class PredictorConfig:
    hidden: tuple = (64,)
    dropout: float = 0.2
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0


def train_partial_predictor(
    matrix: np.ndarray,
    availability: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    catalog: FeatureCatalog,
    config: PredictorConfig | None = None,
) -> DenseNet:
    """Classifier over partial states, trained on random mask augmentations."""
    cfg = config or PredictorConfig()
    rng = make_rng(cfg.seed)
    widths = [catalog.total_width + len(catalog), *cfg.hidden, n_classes]
    acts = ["relu"] * len(cfg.hidden) + ["softmax"]
    drops = [cfg.dropout] * len(cfg.hidden) + [0.0]
    net = dense_net(widths, acts, drops, rng=rng)
    y = np.eye(n_classes)[np.asarray(labels, dtype=np.int64)]
    adam = AdamConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)
    adam_state = init_adam(net)
    for _ in range(cfg.epochs):
        reps = random_mask_reps(matrix, availability, catalog, rng)
        batches = [
            (reps[idx], y[idx]) for idx in minibatches(n=reps.shape[0], batch_size=cfg.batch_size, rng=rng)
        ]
        train_epoch(net, batches, "cross-entropy", adam, adam_state, rng=rng)
    return net


def predict_class(predictor: DenseNet, state: AcquisitionState) -> int:
    return int(np.argmax(predict_proba(predictor, state_rep(state))))


# --- per-cost comparison --------------------------------------------------------


def per_cost_ratio(utility: float, cost: Fraction) -> tuple:
    """Orderable exact score utility/cost.

    Encoded as (class, rational) so zero-cost features with positive utility
    sort above every finite ratio. Rational arithmetic makes the ordering
    invariant under any uniform positive rescaling of costs.
    """
    value = Fraction(float(utility))
    if cost == 0:
        return (1, value) if value > 0 else (0, Fraction(0))
    return (0, value / cost)


def _argmax_per_cost(scores: dict, costs) -> Optional[int]:
    best_j = None
    best = None
    for j in sorted(scores):  # ascending: ties keep the lowest index
        ratio = per_cost_ratio(scores[j], costs[j])
        if best is None or ratio > best:
            best, best_j = ratio, j
    return best_j


# --- exhaustive lookahead -------------------------------------------------------


@dataclass(frozen=True)
class FeatureBins:
    """Value bins for one feature: representative centers plus an assigner.

    ``kind`` is "discrete" (few unique values, centers are the values
    themselves), "quantile" (equal-frequency intervals, centers are interval
    midpoints, ``lookup`` holds interior edges), or "code" (one bin per
    one-hot column).
    """

    kind: str
    centers: tuple
    lookup: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.centers)

    def assign(self, block: np.ndarray) -> np.ndarray:
        """Bin index for each row of (n, width) encoded values."""
        if self.kind == "code":
            return block.argmax(axis=1)
        flat = block[:, 0]
        if self.kind == "discrete":
            idx = np.searchsorted(self.lookup, flat)
            return np.clip(idx, 0, self.n_bins - 1)
        return np.searchsorted(self.lookup, flat, side="left")


def _fit_bins(values: np.ndarray, n_bins: int) -> FeatureBins:
    if values.size == 0:
        return FeatureBins("discrete", (np.zeros(1),), np.zeros(1))
    uniq = np.unique(values)
    if uniq.size <= n_bins:
        return FeatureBins("discrete", tuple(np.array([v]) for v in uniq), uniq)
    edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1)))
    centers = tuple(
        np.array([(edges[i] + edges[i + 1]) / 2.0]) for i in range(len(edges) - 1)
    )
    return FeatureBins("quantile", centers, edges[1:-1])


@dataclass
class TrainStore:
    """Reference rows the lookahead scorer conditions on.

    Holds the full encoded training matrix, per-feature availability, and
    per-feature value bins; ``neighbors`` rows nearest in the acquired
    subspace estimate the conditional bin frequencies.
    """

    matrix: np.ndarray
    availability: np.ndarray
    catalog: FeatureCatalog
    bins: list
    n_bins: int
    neighbors: int


def build_train_store(
    matrix: np.ndarray,
    availability: np.ndarray,
    catalog: FeatureCatalog,
    bins: int = 10,
    neighbors: int = 50,
) -> TrainStore:
    matrix = np.asarray(matrix, dtype=np.float64)
    availability = np.asarray(availability)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise EmptyStoreError("lookahead store needs at least one row")
    if bins < 1 or neighbors < 1:
        raise ValueError("bins and neighbors must be positive")
    per_feature = []
    for j in range(len(catalog)):
        width = int(catalog.widths[j])
        if width > 1:
            centers = tuple(np.eye(width)[i] for i in range(width))
            per_feature.append(FeatureBins("code", centers, np.arange(width)))
        else:
            col = matrix[availability[:, j] == 1, catalog.block(j).start]
            per_feature.append(_fit_bins(col, bins))
    return TrainStore(matrix, availability, catalog, per_feature, bins, neighbors)


def _bin_probs(store: TrainStore, state: AcquisitionState, j: int) -> np.ndarray | None:
    """Estimated distribution of feature j's bin given the acquired values.

    Conditions on the ``neighbors`` nearest store rows in the acquired
    columns; falls back to the marginal when nothing is acquired yet or no
    neighbor actually has feature j.
    """
    rows_with_j = np.flatnonzero(store.availability[:, j] == 1)
    if rows_with_j.size == 0:
        return None
    acquired = np.flatnonzero(state.k == 1)
    cand = rows_with_j
    if acquired.size:
        cols = np.concatenate([np.arange(c.start, c.stop) for c in map(store.catalog.block, acquired)])
        diff = store.matrix[:, cols] - state.values[cols]
        dist = np.einsum("ij,ij->i", diff, diff)
        nearest = np.argsort(dist, kind="stable")[: store.neighbors]
        nearest = nearest[store.availability[nearest, j] == 1]
        if nearest.size:
            cand = nearest
    feature_bins = store.bins[j]
    idx = feature_bins.assign(store.matrix[cand][:, store.catalog.block(j)])
    counts = np.bincount(idx, minlength=feature_bins.n_bins).astype(np.float64)
    return counts / counts.sum()


def exhaustive_utility(
    state: AcquisitionState,
    j: int,
    predictor: DenseNet,
    store: TrainStore,
) -> float:
    """Expected L1 shift of the class probabilities if feature j were bought.

    Averages |p(after) - p(before)| over the feature's bins, weighted by the
    conditional bin frequencies from the store.
    """
    if state.k[j]:
        raise AlreadyAcquiredError(f"feature {j} already acquired")
    probs = _bin_probs(store, state, j)
    if probs is None:
        return 0.0
    base = predict_proba(predictor, state_rep(state))
    feature_bins = store.bins[j]
    block = store.catalog.block(j)
    reps = np.empty((feature_bins.n_bins, state.values.size + state.d))
    k_after = state.k.astype(np.float64)
    k_after[j] = 1.0
    for b, center in enumerate(feature_bins.centers):
        values = state.values.copy()
        values[block] = center
        reps[b] = np.concatenate([values, k_after])
    outs = predict_proba(predictor, reps)
    shifts = np.abs(outs - base).sum(axis=1)
    return float(probs @ shifts)


def exhaustive_select(
    state: AcquisitionState,
    predictor: DenseNet,
    store: TrainStore,
    catalog: FeatureCatalog,
    candidates: Sequence[int] | None = None,
) -> Optional[int]:
    """Highest utility-per-cost missing feature; None when nothing is left."""
    cands = sorted(available_actions(state)) if candidates is None else sorted(candidates)
    if not cands:
        return None
    scores = {j: exhaustive_utility(state, j, predictor, store) for j in cands}
    return _argmax_per_cost(scores, catalog.costs)


# --- gradient lookahead over feature bits ---------------------------------------


@dataclass
class FactModel:
    """Bit-level classifier plus the autoencoder that fills in missing bits."""

    encoder: BitEncoder | None = None
    dae: DenoisingAutoencoder | None = None
    predictor: DenseNet | None = None

    def require_trained(self):
        if self.encoder is None or self.dae is None or self.predictor is None:
            raise UntrainedModelError("gradient selector used before training")


@dataclass
class FactConfig:
    levels: int = 3
    dae_hidden: tuple = (64,)
    predictor_hidden: tuple = (64,)
    corruption: float = 0.5
    dae_epochs: int = 60
    predictor_epochs: int = 40
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


def _complete_bits(dae: DenoisingAutoencoder, bits: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Batch fill-in: kept bits pass through, the rest become posteriors."""
    x = np.where(keep == 1.0, bits, 0.5)
    out = predict_proba(dae.net, x)
    return np.where(keep == 1.0, bits, out)


def train_fact(
    matrix: np.ndarray,
    availability: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    catalog: FeatureCatalog,
    config: FactConfig | None = None,
) -> FactModel:
    """Fit encoder ranges, the denoising autoencoder, then the bit classifier.

    The classifier trains on autoencoder-completed representations of
    randomly masked rows so its inputs at selection time (posteriors for
    missing bits, hard bits elsewhere) match what it saw in training.
    """
    cfg = config or FactConfig()
    rng = make_rng(cfg.seed)
    matrix = np.asarray(matrix, dtype=np.float64)
    availability = np.asarray(availability)
    n, d = availability.shape
    encoder = BitEncoder.fit(matrix, catalog, levels=cfg.levels)
    bits = encoder.encode(matrix, catalog)
    bit_width = d * cfg.levels
    bit_weights = np.repeat(availability.astype(np.float64), cfg.levels, axis=1)

    dae_net = dense_net(
        [bit_width, *cfg.dae_hidden, bit_width],
        ["relu"] * len(cfg.dae_hidden) + ["sigmoid"],
        rng=rng,
    )
    adam = AdamConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)
    adam_state = init_adam(dae_net)
    for _ in range(cfg.dae_epochs):
        corrupted = corrupt_bits(bits, availability, cfg.levels, cfg.corruption, rng)
        batches = [
            (corrupted[idx], bits[idx], bit_weights[idx])
            for idx in minibatches(n=n, batch_size=cfg.batch_size, rng=rng)
        ]
        train_epoch(dae_net, batches, "bernoulli-reconstruction", adam, adam_state, rng=rng)
    dae = DenoisingAutoencoder(dae_net, cfg.corruption)

    clf = dense_net(
        [bit_width, *cfg.predictor_hidden, n_classes],
        ["relu"] * len(cfg.predictor_hidden) + ["softmax"],
        rng=rng,
    )
    y = np.eye(n_classes)[np.asarray(labels, dtype=np.int64)]
    clf_state = init_adam(clf)
    for _ in range(cfg.predictor_epochs):
        u = rng.random((n, 1))
        keep = ((rng.random((n, d)) < u) & (availability == 1)).astype(np.float64)
        keep_bits = np.repeat(keep, cfg.levels, axis=1)
        completed = _complete_bits(dae, bits, keep_bits)
        batches = [
            (completed[idx], y[idx]) for idx in minibatches(n=n, batch_size=cfg.batch_size, rng=rng)
        ]
        train_epoch(clf, batches, "cross-entropy", adam, clf_state, rng=rng)
    return FactModel(encoder=encoder, dae=dae, predictor=clf)


def fact_sensitivities(state: AcquisitionState, model: FactModel, catalog: FeatureCatalog) -> np.ndarray:
    """Per-feature score: gradient of the top class w.r.t. each raw bit,
    weighted by that bit's posterior probability of being 1, summed over bits.

    A raw bit reaches the classifier on two paths: directly at its own slot,
    and through the autoencoder, whose fill-in at every still-missing slot
    shifts when the bit arrives. Both are differentiated; without the chained
    term a feature whose value the classifier only ever reads via completions
    of some redundant twin would score near zero.
    """
    model.require_trained()
    d, levels = len(catalog), model.encoder.levels
    hard = model.encoder.encode_state(state, catalog).reshape(-1)
    keep = np.repeat(state.k.astype(np.float64), levels)
    x = np.where(keep == 1.0, hard, 0.5)
    dae_out, dae_cache = forward(model.dae.net, x, mode="eval")
    completed = np.where(keep == 1.0, x, dae_out)
    out, cache = forward(model.predictor, completed, mode="eval")
    g_out = np.zeros(out.shape[-1])
    g_out[int(np.argmax(out))] = 1.0
    g_completed = backward(model.predictor, cache, g_out).x
    chained = backward(model.dae.net, dae_cache, (1.0 - keep) * g_completed).x
    sens = np.abs(g_completed + (1.0 - keep) * chained).reshape(d, levels)
    post = completed.reshape(d, levels)
    return (sens * post).sum(axis=1)


def fact_select(
    state: AcquisitionState,
    model: FactModel,
    catalog: FeatureCatalog,
    candidates: Sequence[int] | None = None,
) -> Optional[int]:
    """One forward/backward pass; highest bit-sensitivity per cost wins."""
    cands = sorted(available_actions(state)) if candidates is None else sorted(candidates)
    if not cands:
        return None
    utilities = fact_sensitivities(state, model, catalog)
    return _argmax_per_cost({j: float(utilities[j]) for j in cands}, catalog.costs)


# --- rewards --------------------------------------------------------------------


@dataclass(frozen=True)
class Acquire:
    feature: int


@dataclass(frozen=True)
class Predict:
    class_id: int
    correct: Optional[bool] = None


@dataclass(frozen=True)
class Transition:
    """One recorded decision: state, action taken, reward, successor."""

    rep: np.ndarray
    action: object
    reward: float
    next_rep: np.ndarray
    terminal: bool


def rl_reward(action, catalog: FeatureCatalog, penalty: float) -> float:
    """Terminal-penalty scheme: pay per acquisition, pay ``penalty`` per miss."""
    if isinstance(action, Acquire):
        return -float(catalog.costs[action.feature])
    if isinstance(action, Predict):
        if action.correct is None:
            raise ValueError("predict reward needs the correctness flag")
        return 0.0 if action.correct else -float(penalty)
    raise TypeError(f"unknown action {action!r}")


def ol_reward(
    state: AcquisitionState,
    j: int,
    value,
    predictor: DenseNet,
    catalog: FeatureCatalog,
    mc_samples: int = 30,
    rng=None,
) -> Fraction:
    """Per-cost certainty shift from buying feature j at its true value.

    Returned exactly as a rational: rescaling every cost by alpha rescales
    this reward by exactly 1/alpha, independent of float rounding. Certainty
    on both sides uses dropout sampling driven by ``rng``.
    """
    cost = catalog.costs[j]
    if cost == 0:
        raise ZeroCostError(f"feature {j} has zero cost; per-cost reward undefined")
    gen = make_rng(rng)
    before, _ = mc_certainty(predictor, state_rep(state), samples=mc_samples, rng=gen)
    after_state = query(state, j, value, catalog)
    after, _ = mc_certainty(predictor, state_rep(after_state), samples=mc_samples, rng=gen)
    return Fraction(abs(before - after)) / cost


# --- Q-learning plumbing --------------------------------------------------------


@dataclass
class RlBasedConfig:
    """Penalty-driven variant: d acquisition actions plus one predict action."""

    penalty: float = 1.0
    episodes: int = 3000
    hidden: tuple = (64,)
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_fraction: float = 0.2
    replay_capacity: int = 10_000
    batch_size: int = 64
    target_sync: int = 500
    gamma: float = 1.0
    min_fill: int = 500
    seed: int = 0

    def __post_init__(self):
        _check_q_config(self)
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")


@dataclass
class OlConfig:
    """Certainty-driven variant: d acquisition actions, threshold stop."""

    mc_samples: int = 30
    delta: float = 0.0
    episodes: int = 3000
    hidden: tuple = (64,)
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_fraction: float = 0.2
    replay_capacity: int = 10_000
    batch_size: int = 64
    target_sync: int = 500
    gamma: float = 1.0
    min_fill: int = 500
    seed: int = 0

    def __post_init__(self):
        _check_q_config(self)
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


def _check_q_config(cfg):
    if not 0.0 <= cfg.gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if not 0.0 <= cfg.epsilon_end <= cfg.epsilon_start <= 1.0:
        raise ValueError("epsilon schedule must satisfy 0 <= end <= start <= 1")
    if not 0.0 < cfg.decay_fraction <= 1.0:
        raise ValueError("decay_fraction must lie in (0, 1]")
    if cfg.replay_capacity < 1 or cfg.batch_size < 1 or cfg.target_sync < 1:
        raise ValueError("replay_capacity, batch_size, target_sync must be positive")
    if cfg.episodes < 1:
        raise ValueError("episodes must be >= 1")


def epsilon_at(episode: int, total: int, start: float, end: float, decay_fraction: float) -> float:
    """Linear decay from ``start`` to ``end`` over the first fraction of episodes."""
    horizon = max(1, int(total * decay_fraction))
    if episode >= horizon:
        return end
    return start + (end - start) * (episode / horizon)


def epsilon_greedy(q_values: np.ndarray, legal: Sequence[int], epsilon: float, rng) -> int:
    """Explore uniformly over ``legal`` with probability epsilon, else greedy.

    ``legal`` must be ascending; exact Q ties resolve to its earliest entry.
    """
    if not legal:
        raise ValueError("no legal actions")
    gen = make_rng(rng)
    if gen.random() < epsilon:
        return int(legal[gen.integers(len(legal))])
    legal_arr = np.asarray(legal)
    return int(legal_arr[int(np.argmax(q_values[legal_arr]))])


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored as flat arrays."""

    def __init__(self, capacity: int, rep_width: int, n_actions: int):
        self.capacity = capacity
        self.reps = np.zeros((capacity, rep_width))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_reps = np.zeros((capacity, rep_width))
        self.legal_next = np.zeros((capacity, n_actions), dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def push(self, rep, action, reward, next_rep, legal_next, terminal):
        i = self.pos
        self.reps[i] = rep
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_reps[i] = next_rep
        self.legal_next[i] = legal_next
        self.terminal[i] = terminal
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> tuple:
        idx = make_rng(rng).integers(0, self.size, size=batch_size)
        return (
            self.reps[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_reps[idx],
            self.legal_next[idx],
            self.terminal[idx],
        )


@dataclass
class QDiagnostics:
    episode_rewards: list = field(default_factory=list)
    updates: int = 0
    final_epsilon: float = 0.0


def _clone_net(net: DenseNet) -> DenseNet:
    return net_from_dict(net_to_dict(net))


def _q_update(
    q_net: DenseNet,
    target_net: DenseNet,
    replay: ReplayBuffer,
    adam: AdamConfig,
    adam_state,
    gamma: float,
    batch_size: int,
    clamp_nonnegative: bool,
    rng,
) -> float:
    reps, actions, rewards, next_reps, legal_next, terminal = replay.sample(batch_size, rng)
    q_next = predict_proba(target_net, next_reps)
    masked = np.where(legal_next, q_next, -np.inf)
    best_next = masked.max(axis=1)
    best_next = np.where(np.isfinite(best_next), best_next, 0.0)
    targets = rewards + gamma * np.where(terminal, 0.0, best_next)
    if clamp_nonnegative:
        # certainty-shift rewards are >= 0, so true action values are too;
        # clamping keeps early bootstrap noise from driving targets negative
        targets = np.maximum(targets, 0.0)
    out, cache = forward(q_net, reps, mode="train", rng=rng)
    rows = np.arange(len(actions))
    wanted = out.copy()
    wanted[rows, actions] = targets
    weight = np.zeros_like(out)
    weight[rows, actions] = 1.0
    loss, grad = squared(out, wanted, weight)
    if not np.isfinite(loss):
        raise DivergedQError(f"temporal-difference loss became {loss!r}")
    grads = backward(q_net, cache, grad)
    adam_step(q_net, grads, adam_state, adam)
    return loss


def train_q_strategy(
    variant: str,
    matrix: np.ndarray,
    availability: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    catalog: FeatureCatalog,
    config,
    predictor: DenseNet | None = None,
    predictor_config: PredictorConfig | None = None,
):
    """Episodic Q-learning over the acquisition MDP.

    ``variant`` is "rl" (acquire actions plus a predict action, terminal
    penalty reward) or "ol" (acquire actions only, certainty-shift reward,
    episode ends when everything is bought). Updates start once the replay
    buffer reaches ``min_fill`` and the target net re-syncs every
    ``target_sync`` gradient steps. Returns (strategy, diagnostics).
    """
    if variant not in ("rl", "ol"):
        raise ValueError(f"unknown variant {variant!r}")
    matrix = np.asarray(matrix, dtype=np.float64)
    availability = np.asarray(availability)
    labels = np.asarray(labels, dtype=np.int64)
    d = len(catalog)
    rep_width = catalog.total_width + d
    n_actions = d + 1 if variant == "rl" else d
    rng = make_rng(config.seed)
    if predictor is None:
        predictor = train_partial_predictor(
            matrix, availability, labels, n_classes, catalog, predictor_config
        )

    q_net = dense_net(
        [rep_width, *config.hidden, n_actions],
        ["relu"] * len(config.hidden) + ["identity"],
        rng=rng,
    )
    target_net = _clone_net(q_net)
    replay = ReplayBuffer(config.replay_capacity, rep_width, n_actions)
    adam = AdamConfig(learning_rate=config.learning_rate, batch_size=config.batch_size)
    adam_state = init_adam(q_net)
    diags = QDiagnostics()
    costs = [float(c) for c in catalog.costs]
    min_fill = max(config.min_fill, config.batch_size)

    for episode in range(config.episodes):
        eps = epsilon_at(
            episode, config.episodes, config.epsilon_start, config.epsilon_end, config.decay_fraction
        )
        row = int(rng.integers(matrix.shape[0]))
        x_row = matrix[row]
        label = int(labels[row])
        state = initial_state(catalog)
        episode_reward = 0.0
        certainty = None
        if variant == "ol":
            certainty, _ = mc_certainty(
                predictor, state_rep(state), samples=config.mc_samples, rng=rng
            )
        while True:
            unacquired = sorted(available_actions(state))
            legal = unacquired + [d] if variant == "rl" else unacquired
            if not legal:
                break
            rep = state_rep(state)
            q_values = predict_proba(q_net, rep)
            action = epsilon_greedy(q_values, legal, eps, rng)
            if variant == "rl" and action == d:
                guess = predict_class(predictor, state)
                reward = rl_reward(Predict(guess, guess == label), catalog, config.penalty)
                replay.push(rep, action, reward, rep, np.zeros(n_actions, dtype=bool), True)
                done = True
                next_state = state
            else:
                value = x_row[catalog.block(action)]
                next_state = query(state, action, value, catalog)
                next_rep = state_rep(next_state)
                remaining = sorted(available_actions(next_state))
                if variant == "rl":
                    reward = rl_reward(Acquire(action), catalog, config.penalty)
                    legal_next = np.zeros(n_actions, dtype=bool)
                    legal_next[remaining] = True
                    legal_next[d] = True
                    done = False
                else:
                    next_certainty, _ = mc_certainty(
                        predictor, next_rep, samples=config.mc_samples, rng=rng
                    )
                    reward = float(
                        Fraction(abs(certainty - next_certainty)) / catalog.costs[action]
                    )
                    certainty = next_certainty
                    legal_next = np.zeros(n_actions, dtype=bool)
                    legal_next[remaining] = True
                    done = not remaining
                replay.push(rep, action, reward, next_rep, legal_next, done)
            episode_reward += reward
            if replay.size >= min_fill:
                _q_update(
                    q_net,
                    target_net,
                    replay,
                    adam,
                    adam_state,
                    config.gamma,
                    config.batch_size,
                    clamp_nonnegative=(variant == "ol"),
                    rng=rng,
                )
                diags.updates += 1
                if diags.updates % config.target_sync == 0:
                    target_net = _clone_net(q_net)
            if done:
                break
            state = next_state
        diags.episode_rewards.append(episode_reward)
        diags.final_epsilon = eps

    if variant == "rl":
        return RlStrategy(q_net=q_net, predictor=predictor, catalog=catalog, config=config), diags
    return OlStrategy(q_net=q_net, predictor=predictor, catalog=catalog, config=config), diags


# --- strategy objects -----------------------------------------------------------


class _PredictorMixin:
    """Prediction and certainty via the shared partial-state classifier."""

    def predict(self, state: AcquisitionState, rng=None) -> int:
        return predict_class(self.predictor, state)

    def certainty(self, state: AcquisitionState, rng=None) -> float:
        value, _ = mc_certainty(self.predictor, state_rep(state), samples=1, rng=rng)
        return value


@dataclass
class RandomConfig:
    seed: int = 0


@dataclass
class RandomStrategy(_PredictorMixin):
    """Uniform choice among the legal features; never stops on its own."""

    predictor: DenseNet
    config: RandomConfig = field(default_factory=RandomConfig)

    def select(self, state, legal, rng) -> Optional[int]:
        if not legal:
            return None
        gen = make_rng(rng)
        return int(legal[gen.integers(len(legal))])


@dataclass
class StaticOrderConfig:
    ordering: tuple = ()


@dataclass
class StaticOrderStrategy(_PredictorMixin):
    """Walks a fixed feature permutation, skipping whatever is not legal."""

    predictor: DenseNet
    config: StaticOrderConfig
    catalog: FeatureCatalog

    def __post_init__(self):
        order = tuple(int(j) for j in self.config.ordering)
        if sorted(order) != list(range(len(self.catalog))):
            raise ValueError("ordering must be a permutation of all feature indices")
        self.config = StaticOrderConfig(order)

    def select(self, state, legal, rng=None) -> Optional[int]:
        legal_set = set(legal)
        for j in self.config.ordering:
            if j in legal_set:
                return j
        return None


@dataclass
class ExhaustiveConfig:
    bins: int = 10
    neighbors: int = 50


@dataclass
class ExhaustiveStrategy(_PredictorMixin):
    predictor: DenseNet
    store: TrainStore
    catalog: FeatureCatalog
    config: ExhaustiveConfig = field(default_factory=ExhaustiveConfig)

    def select(self, state, legal, rng=None) -> Optional[int]:
        return exhaustive_select(state, self.predictor, self.store, self.catalog, candidates=legal)


@dataclass
class FactStrategy:
    model: FactModel
    catalog: FeatureCatalog
    config: FactConfig = field(default_factory=FactConfig)

    def select(self, state, legal, rng=None) -> Optional[int]:
        return fact_select(state, self.model, self.catalog, candidates=legal)

    def _completed(self, state) -> np.ndarray:
        self.model.require_trained()
        post = dae_missing_posteriors(self.model.dae, state, self.model.encoder, self.catalog)
        return post.reshape(-1)

    def predict(self, state, rng=None) -> int:
        return int(np.argmax(predict_proba(self.model.predictor, self._completed(state))))

    def certainty(self, state, rng=None) -> float:
        return float(predict_proba(self.model.predictor, self._completed(state)).max())


@dataclass
class RlStrategy(_PredictorMixin):
    """Greedy policy of the penalty-trained Q net; selecting the predict
    action reads as a stop."""

    q_net: DenseNet
    predictor: DenseNet
    catalog: FeatureCatalog
    config: RlBasedConfig

    def q_values(self, state) -> np.ndarray:
        return predict_proba(self.q_net, state_rep(state))

    def select(self, state, legal, rng=None) -> Optional[int]:
        d = len(self.catalog)
        actions = sorted(legal) + [d]
        choice = epsilon_greedy(self.q_values(state), actions, 0.0, rng=0)
        return None if choice == d else choice


@dataclass
class OlStrategy(_PredictorMixin):
    """Greedy policy of the certainty-trained Q net with a threshold stop:
    halt once no legal action is predicted to move certainty per cost by at
    least delta."""

    q_net: DenseNet
    predictor: DenseNet
    catalog: FeatureCatalog
    config: OlConfig

    def q_values(self, state) -> np.ndarray:
        return predict_proba(self.q_net, state_rep(state))

    def select(self, state, legal, rng=None) -> Optional[int]:
        if not legal:
            return None
        choice = epsilon_greedy(self.q_values(state), sorted(legal), 0.0, rng=0)
        if self.q_values(state)[choice] < self.config.delta:
            return None
        return choice

    def certainty(self, state, rng=None) -> float:
        value, _ = mc_certainty(
            self.predictor, state_rep(state), samples=self.config.mc_samples, rng=rng
        )
        return value


# --- episode driver -------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    """One held-out subject: encoded row, per-feature availability, label."""

    values: np.ndarray
    availability: np.ndarray
    label: int


def dataset_instances(dataset, indices) -> list:
    return [
        Instance(
            values=dataset.matrix[i].astype(np.float64),
            availability=dataset.availability[i],
            label=int(dataset.labels[i]),
        )
        for i in indices
    ]


@dataclass
class EpisodeResult:
    episode_id: str
    order: list
    step_costs: list
    prediction: int
    label: int
    correct: bool
    total_cost: Fraction
    steps: int

    def trajectory_lines(self) -> list:
        lines = []
        spent = Fraction(0)
        for step, (j, cost) in enumerate(zip(self.order, self.step_costs), start=1):
            spent += cost
            lines.append(trajectory_line(self.episode_id, step, j, cost, spent))
        return lines


def run_episode(
    strategy,
    instance: Instance,
    catalog: FeatureCatalog,
    rule,
    rng=None,
    episode_id: str = "ep",
    k0=None,
) -> EpisodeResult:
    """Drive one acquisition episode to termination and a final prediction.

    The rule is consulted before every step; the strategy only sees legal
    actions it can still afford under the rule's budget, and may stop early
    by returning None. The instance's stored row supplies revealed values
    (zero-imputed columns for features it never had).
    """
    gen = make_rng(rng)
    state = initial_state(catalog, x_row=instance.values, k0=k0)
    cap = rule_budget_cap(rule)
    order = []
    step_costs = []
    while True:
        # rules without a confidence clause never read the certainty argument
        certainty = strategy.certainty(state, rng=gen) if rule_needs_certainty(rule) else 1.0
        if is_terminal(state, rule, certainty, catalog):
            break
        legal = [
            j
            for j in sorted(available_actions(state))
            if cap is None or state.spent + catalog.costs[j] <= cap
        ]
        if not legal:
            break
        j = strategy.select(state, legal, gen)
        if j is None:
            break
        state = query(state, j, instance.values[catalog.block(j)], catalog)
        order.append(j)
        step_costs.append(catalog.costs[j])
    prediction = strategy.predict(state, rng=gen)
    return EpisodeResult(
        episode_id=episode_id,
        order=order,
        step_costs=step_costs,
        prediction=prediction,
        label=instance.label,
        correct=prediction == instance.label,
        total_cost=state.spent,
        steps=len(order),
    )


# --- checkpoints ----------------------------------------------------------------


def _catalog_text(catalog: FeatureCatalog) -> str:
    import io

    buf = io.StringIO()
    catalog.to_csv(buf)
    return buf.getvalue()


def _catalog_from_text(text: str) -> FeatureCatalog:
    import io

    return FeatureCatalog.from_csv(io.StringIO(text))


def strategy_to_dict(strategy) -> dict:
    doc = {"format_version": 1, "kind": "strategy"}
    if isinstance(strategy, RandomStrategy):
        doc.update(variant="random", config=asdict(strategy.config), predictor=net_to_dict(strategy.predictor))
    elif isinstance(strategy, StaticOrderStrategy):
        doc.update(
            variant="static-order",
            config={"ordering": list(strategy.config.ordering)},
            predictor=net_to_dict(strategy.predictor),
            catalog=_catalog_text(strategy.catalog),
        )
    elif isinstance(strategy, ExhaustiveStrategy):
        doc.update(
            variant="exhaustive",
            config=asdict(strategy.config),
            predictor=net_to_dict(strategy.predictor),
            catalog=_catalog_text(strategy.catalog),
            store={
                "matrix": strategy.store.matrix.tolist(),
                "availability": strategy.store.availability.tolist(),
            },
        )
    elif isinstance(strategy, FactStrategy):
        strategy.model.require_trained()
        cfg = asdict(strategy.config)
        cfg["dae_hidden"] = list(strategy.config.dae_hidden)
        cfg["predictor_hidden"] = list(strategy.config.predictor_hidden)
        doc.update(
            variant="fact",
            config=cfg,
            catalog=_catalog_text(strategy.catalog),
            encoder={
                "levels": strategy.model.encoder.levels,
                "lo": strategy.model.encoder.lo.tolist(),
                "hi": strategy.model.encoder.hi.tolist(),
            },
            dae=net_to_dict(strategy.model.dae.net),
            corruption=strategy.model.dae.corruption_rate,
            predictor=net_to_dict(strategy.model.predictor),
        )
    elif isinstance(strategy, RlStrategy):
        cfg = asdict(strategy.config)
        cfg["hidden"] = list(strategy.config.hidden)
        doc.update(
            variant="rl",
            config=cfg,
            catalog=_catalog_text(strategy.catalog),
            q_net=net_to_dict(strategy.q_net),
            predictor=net_to_dict(strategy.predictor),
        )
    elif isinstance(strategy, OlStrategy):
        cfg = asdict(strategy.config)
        cfg["hidden"] = list(strategy.config.hidden)
        doc.update(
            variant="ol",
            config=cfg,
            catalog=_catalog_text(strategy.catalog),
            q_net=net_to_dict(strategy.q_net),
            predictor=net_to_dict(strategy.predictor),
        )
    else:
        raise TypeError(f"cannot checkpoint {type(strategy).__name__}")
    return doc


def strategy_from_dict(doc: dict):
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    if doc.get("kind") != "strategy":
        raise ValueError(f"not a strategy checkpoint: kind={doc.get('kind')!r}")
    variant = doc.get("variant")
    if variant == "random":
        return RandomStrategy(net_from_dict(doc["predictor"]), RandomConfig(**doc["config"]))
    if variant == "static-order":
        catalog = _catalog_from_text(doc["catalog"])
        return StaticOrderStrategy(
            net_from_dict(doc["predictor"]),
            StaticOrderConfig(tuple(doc["config"]["ordering"])),
            catalog,
        )
    if variant == "exhaustive":
        catalog = _catalog_from_text(doc["catalog"])
        config = ExhaustiveConfig(**doc["config"])
        store = build_train_store(
            np.array(doc["store"]["matrix"]),
            np.array(doc["store"]["availability"], dtype=np.int8),
            catalog,
            bins=config.bins,
            neighbors=config.neighbors,
        )
        return ExhaustiveStrategy(net_from_dict(doc["predictor"]), store, catalog, config)
    if variant == "fact":
        catalog = _catalog_from_text(doc["catalog"])
        cfg_kw = dict(doc["config"])
        cfg_kw["dae_hidden"] = tuple(cfg_kw["dae_hidden"])
        cfg_kw["predictor_hidden"] = tuple(cfg_kw["predictor_hidden"])
        model = FactModel(
            encoder=BitEncoder(
                levels=int(doc["encoder"]["levels"]),
                lo=np.array(doc["encoder"]["lo"]),
                hi=np.array(doc["encoder"]["hi"]),
            ),
            dae=DenoisingAutoencoder(net_from_dict(doc["dae"]), doc["corruption"]),
            predictor=net_from_dict(doc["predictor"]),
        )
        return FactStrategy(model, catalog, FactConfig(**cfg_kw))
    if variant in ("rl", "ol"):
        catalog = _catalog_from_text(doc["catalog"])
        cfg_kw = dict(doc["config"])
        cfg_kw["hidden"] = tuple(cfg_kw["hidden"])
        cls, cfg_cls = (RlStrategy, RlBasedConfig) if variant == "rl" else (OlStrategy, OlConfig)
        return cls(
            q_net=net_from_dict(doc["q_net"]),
            predictor=net_from_dict(doc["predictor"]),
            catalog=catalog,
            config=cfg_cls(**cfg_kw),
        )
    raise ValueError(f"unknown strategy variant {variant!r}")


def save_strategy(strategy, fh) -> None:
    json.dump(strategy_to_dict(strategy), fh)


def load_strategy(fh):
    return strategy_from_dict(json.load(fh))
