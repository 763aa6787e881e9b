import io
import json
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import vi_oracle
from featacq.core import (
    AllAcquired,
    AlreadyAcquiredError,
    Budget,
    FeatureCatalog,
    FeatureMeta,
    as_cost,
    available_actions,
    initial_state,
    query,
    replay_trajectory,
    TRAJECTORY_HEADER,
)
from featacq.nets import dense_net, predict_proba
from featacq.strategies import (
    Acquire,
    DivergedQError,
    EmptyStoreError,
    ExhaustiveConfig,
    ExhaustiveStrategy,
    FactConfig,
    FactModel,
    FactStrategy,
    Instance,
    OlConfig,
    OlStrategy,
    Predict,
    RandomConfig,
    RandomStrategy,
    ReplayBuffer,
    RlBasedConfig,
    RlStrategy,
    StaticOrderConfig,
    StaticOrderStrategy,
    UntrainedModelError,
    ZeroCostError,
    _argmax_per_cost,
    build_train_store,
    dataset_instances,
    epsilon_at,
    epsilon_greedy,
    exhaustive_select,
    exhaustive_utility,
    fact_select,
    load_strategy,
    ol_reward,
    per_cost_ratio,
    rl_reward,
    run_episode,
    save_strategy,
    state_rep,
    strategy_from_dict,
    strategy_to_dict,
    train_fact,
    train_partial_predictor,
    train_q_strategy,
    PredictorConfig,
)
from featacq.synthetic import three_bit_joint, three_bit_task_data, uniform_catalog


# --- shared fixtures -------------------------------------------------------------


@pytest.fixture(scope="module")
def three_bit():
    bundle = three_bit_task_data(n=900, seed=1)
    ds = bundle.dataset
    tr = bundle.splits.train
    return ds, ds.matrix[tr], ds.availability[tr], ds.labels[tr]


@pytest.fixture(scope="module")
def predictor3(three_bit):
    ds, m, a, y = three_bit
    net = train_partial_predictor(
        m, a, y, 2, ds.catalog,
        PredictorConfig(hidden=(24,), dropout=0.0, epochs=20, seed=3),
    )
    # needs to be reliable when feature 0 is visible, else nothing downstream works
    full = np.concatenate([m, np.ones_like(a, dtype=np.float64)], axis=1)
    acc = (predict_proba(net, full).argmax(axis=1) == y).mean()
    assert acc > 0.95
    return net


@pytest.fixture(scope="module")
def rl3(three_bit, predictor3):
    ds, m, a, y = three_bit
    cfg = RlBasedConfig(
        penalty=5.0, episodes=2500, hidden=(32,), min_fill=300,
        target_sync=250, seed=5,
    )
    strategy, diags = train_q_strategy("rl", m, a, y, 2, ds.catalog, cfg, predictor=predictor3)
    assert diags.updates > 0
    return strategy


@pytest.fixture(scope="module")
def ol3(three_bit, predictor3):
    ds, m, a, y = three_bit
    cfg = OlConfig(
        mc_samples=1, gamma=0.0, episodes=600, hidden=(16,), min_fill=200, seed=7,
    )
    strategy, _ = train_q_strategy("ol", m, a, y, 2, ds.catalog, cfg, predictor=predictor3)
    return strategy


def catalog2(costs=(1, 1)):
    return FeatureCatalog(
        [FeatureMeta(f"f{j}", "real", "laboratory", as_cost(c)) for j, c in enumerate(costs)]
    )


# --- per-cost comparison ----------------------------------------------------------


def test_per_cost_ratio_orders_by_exact_division():
    assert per_cost_ratio(0.3, Fraction(1)) > per_cost_ratio(0.5, Fraction(2))
    assert per_cost_ratio(0.5, Fraction(2)) == per_cost_ratio(0.25, Fraction(1))


def test_per_cost_ratio_zero_cost():
    assert per_cost_ratio(0.1, Fraction(0)) > per_cost_ratio(1e9, Fraction(1, 1000))
    assert per_cost_ratio(0.0, Fraction(0)) == (0, Fraction(0))


@given(
    utilities=st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=6),
    alpha=st.sampled_from([Fraction(1, 2), Fraction(2), Fraction(3), Fraction(10), Fraction(7, 3)]),
)
@settings(max_examples=60, deadline=None)
def test_argmax_invariant_under_uniform_cost_scaling(utilities, alpha):
    costs = [Fraction(j + 1) for j in range(len(utilities))]
    scores = dict(enumerate(utilities))
    before = _argmax_per_cost(scores, costs)
    after = _argmax_per_cost(scores, [alpha * c for c in costs])
    assert before == after


def test_argmax_tie_takes_lowest_index():
    assert _argmax_per_cost({0: 0.5, 1: 0.5, 2: 0.5}, [Fraction(1)] * 3) == 0
    assert _argmax_per_cost({2: 0.5, 1: 1.0}, [Fraction(1), Fraction(2), Fraction(1)]) == 1


# --- exhaustive lookahead ----------------------------------------------------------


def _two_feature_store(availability=None, neighbors=6):
    # joint with known conditionals: f0 in {0,1}, f1 in {10,20}
    rows = [(0, 10)] * 4 + [(0, 20)] * 2 + [(1, 10)] * 1 + [(1, 20)] * 3
    matrix = np.array(rows, dtype=np.float64)
    avail = np.ones((10, 2), dtype=np.int8) if availability is None else availability
    cat = catalog2()
    store = build_train_store(matrix, avail, cat, bins=10, neighbors=neighbors)
    net = dense_net([4, 2], ["softmax"], rng=0)
    return store, net, cat


def _l1_shift(net, values, mask, base):
    rep = np.concatenate([values, mask])
    return np.abs(predict_proba(net, rep) - base).sum()


def test_exhaustive_utility_matches_hand_conditional():
    store, net, cat = _two_feature_store()
    state = query(initial_state(cat), 0, 0.0, cat)
    base = predict_proba(net, state_rep(state))
    # six nearest rows share f0 = 0, of which 4 have f1=10 and 2 have f1=20
    expected = (4 / 6) * _l1_shift(net, [0.0, 10.0], [1.0, 1.0], base) + (
        2 / 6
    ) * _l1_shift(net, [0.0, 20.0], [1.0, 1.0], base)
    assert exhaustive_utility(state, 1, net, store) == pytest.approx(expected, abs=1e-12)


def test_exhaustive_utility_marginal_when_nothing_acquired():
    store, net, cat = _two_feature_store()
    state = initial_state(cat)
    base = predict_proba(net, state_rep(state))
    expected = 0.5 * _l1_shift(net, [0.0, 10.0], [0.0, 1.0], base) + 0.5 * _l1_shift(
        net, [0.0, 20.0], [0.0, 1.0], base
    )
    assert exhaustive_utility(state, 1, net, store) == pytest.approx(expected, abs=1e-12)


def test_exhaustive_utility_falls_back_when_neighbors_lack_feature():
    avail = np.ones((10, 2), dtype=np.int8)
    avail[:6, 1] = 0  # every f0=0 row is missing f1
    store, net, cat = _two_feature_store(availability=avail)
    state = query(initial_state(cat), 0, 0.0, cat)
    base = predict_proba(net, state_rep(state))
    # marginal over the four rows that do have f1: one 10, three 20s
    expected = (1 / 4) * _l1_shift(net, [0.0, 10.0], [1.0, 1.0], base) + (
        3 / 4
    ) * _l1_shift(net, [0.0, 20.0], [1.0, 1.0], base)
    assert exhaustive_utility(state, 1, net, store) == pytest.approx(expected, abs=1e-12)


def test_exhaustive_utility_rejects_acquired_feature():
    store, net, cat = _two_feature_store()
    state = query(initial_state(cat), 0, 0.0, cat)
    with pytest.raises(AlreadyAcquiredError):
        exhaustive_utility(state, 0, net, store)


def test_empty_store_rejected():
    with pytest.raises(EmptyStoreError):
        build_train_store(np.empty((0, 2)), np.empty((0, 2), dtype=np.int8), catalog2())


def test_quantile_bins_on_continuous_column():
    rng = np.random.Generator(np.random.PCG64(0))
    matrix = rng.normal(size=(400, 1))
    cat = FeatureCatalog([FeatureMeta("x", "real", "laboratory", as_cost(1))])
    store = build_train_store(matrix, np.ones((400, 1), dtype=np.int8), cat, bins=10)
    fb = store.bins[0]
    assert fb.kind == "quantile"
    assert 2 <= fb.n_bins <= 10
    centers = np.array([c[0] for c in fb.centers])
    assert np.all(np.diff(centers) > 0)
    idx = fb.assign(matrix)
    assert idx.min() >= 0 and idx.max() < fb.n_bins


def test_exhaustive_select_divides_by_cost(three_bit, predictor3):
    ds, m, a, y = three_bit
    store = build_train_store(m, a, ds.catalog, bins=10, neighbors=50)
    state = initial_state(ds.catalog)
    assert exhaustive_select(state, predictor3, store, ds.catalog) == 0
    # price feature 0 out of the market, keep the rest cheap
    expensive = ds.catalog.with_entries(
        [replace(e, cost=as_cost(1000) if j == 0 else e.cost) for j, e in enumerate(ds.catalog)]
    )
    assert exhaustive_select(state, predictor3, store, expensive) != 0


def test_exhaustive_select_scale_invariant(three_bit, predictor3):
    ds, m, a, y = three_bit
    base = FeatureCatalog(
        [replace(e, cost=as_cost(c)) for e, c in zip(ds.catalog, (2, 3, 5))]
    )
    store = build_train_store(m, a, base, bins=10, neighbors=50)
    states = [initial_state(base), query(initial_state(base), 1, 1.0, base)]
    for state in states:
        picks = {
            alpha: exhaustive_select(
                state,
                predictor3,
                store,
                base.with_entries([replace(e, cost=e.cost * as_cost(alpha)) for e in base]),
            )
            for alpha in (1, Fraction(1, 2), 2, 10)
        }
        assert len(set(picks.values())) == 1


# --- gradient selector --------------------------------------------------------------


@pytest.fixture(scope="module")
def fact3(three_bit):
    ds, m, a, y = three_bit
    cfg = FactConfig(
        levels=3, dae_hidden=(32,), predictor_hidden=(32,),
        dae_epochs=20, predictor_epochs=20, seed=9,
    )
    return train_fact(m, a, y, 2, ds.catalog, cfg)


def test_untrained_fact_model_rejected(three_bit):
    ds = three_bit[0]
    with pytest.raises(UntrainedModelError):
        fact_select(initial_state(ds.catalog), FactModel(), ds.catalog)


def test_fact_picks_the_label_feature(three_bit, fact3):
    ds = three_bit[0]
    assert fact_select(initial_state(ds.catalog), fact3, ds.catalog) == 0


def test_fact_select_scale_invariant(three_bit, fact3):
    ds, m, a, y = three_bit
    base = FeatureCatalog(
        [replace(e, cost=as_cost(c)) for e, c in zip(ds.catalog, (2, 3, 5))]
    )
    state = query(initial_state(base), 2, -1.0, base)
    picks = {
        alpha: fact_select(
            state,
            fact3,
            base.with_entries([replace(e, cost=e.cost * as_cost(alpha)) for e in base]),
        )
        for alpha in (1, Fraction(1, 2), 2, 10)
    }
    assert len(set(picks.values())) == 1


# --- rewards ------------------------------------------------------------------------


def test_rl_reward_cases():
    cat = catalog2(costs=(3, 7))
    assert rl_reward(Acquire(1), cat, penalty=5.0) == -7.0
    assert rl_reward(Predict(0, correct=True), cat, penalty=5.0) == 0.0
    assert rl_reward(Predict(1, correct=False), cat, penalty=5.0) == -5.0
    with pytest.raises(ValueError):
        rl_reward(Predict(0), cat, penalty=5.0)


def test_ol_reward_nonnegative_rational_and_scales_exactly():
    cat = catalog2(costs=(3, 7))
    net = dense_net([4, 8, 2], ["relu", "softmax"], dropout=[0.3, 0.0], rng=2)
    state = initial_state(cat)
    r = ol_reward(state, 0, 1.5, net, cat, mc_samples=8, rng=11)
    assert isinstance(r, Fraction) and r >= 0
    scaled_cat = catalog2(costs=(9, 21))
    r_scaled = ol_reward(state, 0, 1.5, net, scaled_cat, mc_samples=8, rng=11)
    assert r_scaled * 3 == r  # exact rational identity, not approximate


def test_ol_reward_zero_cost_rejected():
    cat = FeatureCatalog(
        [
            FeatureMeta("free", "real", "demographics", as_cost(0)),
            FeatureMeta("paid", "real", "laboratory", as_cost(1)),
        ]
    )
    net = dense_net([4, 2], ["softmax"], rng=0)
    with pytest.raises(ZeroCostError):
        ol_reward(initial_state(cat), 0, 1.0, net, cat)


# --- Q plumbing ---------------------------------------------------------------------


def test_epsilon_schedule_endpoints_and_midpoint():
    assert epsilon_at(0, 100, 1.0, 0.05, 0.2) == 1.0
    assert epsilon_at(20, 100, 1.0, 0.05, 0.2) == 0.05
    assert epsilon_at(99, 100, 1.0, 0.05, 0.2) == 0.05
    mid = epsilon_at(10, 100, 1.0, 0.05, 0.2)
    assert mid == pytest.approx((1.0 + 0.05) / 2)


def test_epsilon_one_explores_uniformly():
    rng = np.random.Generator(np.random.PCG64(0))
    legal = [0, 2, 5]
    q = np.array([0.0, 0.0, 100.0, 0.0, 0.0, -1.0])
    n = 3000
    counts = {j: 0 for j in legal}
    for _ in range(n):
        counts[epsilon_greedy(q, legal, 1.0, rng)] += 1
    sigma = np.sqrt(n * (1 / 3) * (2 / 3))
    for j in legal:
        assert abs(counts[j] - n / 3) < 3 * sigma


def test_epsilon_zero_is_greedy_with_earliest_tie():
    q = np.array([1.0, 5.0, 5.0, 0.0])
    assert epsilon_greedy(q, [0, 1, 2, 3], 0.0, rng=0) == 1
    assert epsilon_greedy(q, [2, 3], 0.0, rng=0) == 2
    with pytest.raises(ValueError):
        epsilon_greedy(q, [], 0.5, rng=0)


def test_replay_buffer_wraps_and_samples():
    buf = ReplayBuffer(capacity=4, rep_width=2, n_actions=3)
    for i in range(6):
        buf.push(np.full(2, i), i % 3, float(i), np.full(2, i + 10), np.ones(3, dtype=bool), False)
    assert buf.size == 4
    # oldest two entries were overwritten
    assert set(buf.rewards.tolist()) == {2.0, 3.0, 4.0, 5.0}
    reps, actions, rewards, nreps, legal, term = buf.sample(8, rng=1)
    assert reps.shape == (8, 2) and legal.shape == (8, 3)
    assert set(rewards.tolist()) <= {2.0, 3.0, 4.0, 5.0}


def test_no_updates_below_min_fill(three_bit, predictor3):
    ds, m, a, y = three_bit
    cfg = RlBasedConfig(penalty=1.0, episodes=5, min_fill=10**6, seed=0)
    _, diags = train_q_strategy("rl", m, a, y, 2, ds.catalog, cfg, predictor=predictor3)
    assert diags.updates == 0
    assert len(diags.episode_rewards) == 5


@pytest.mark.filterwarnings("ignore:overflow encountered")
@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_diverged_q_raises(three_bit, predictor3):
    ds, m, a, y = three_bit
    # an unbounded miss penalty poisons a replayed transition, so the TD loss
    # must go non-finite once that sample is drawn
    cfg = RlBasedConfig(
        penalty=float("inf"), episodes=200, batch_size=8, min_fill=8, seed=0,
    )
    with pytest.raises(DivergedQError):
        train_q_strategy("rl", m, a, y, 2, ds.catalog, cfg, predictor=predictor3)


def test_unknown_variant_rejected(three_bit, predictor3):
    ds, m, a, y = three_bit
    with pytest.raises(ValueError):
        train_q_strategy("sarsa", m, a, y, 2, ds.catalog, RlBasedConfig(), predictor=predictor3)


def test_q_config_validation():
    with pytest.raises(ValueError):
        RlBasedConfig(gamma=1.5)
    with pytest.raises(ValueError):
        RlBasedConfig(penalty=-1.0)
    with pytest.raises(ValueError):
        OlConfig(delta=-0.1)
    with pytest.raises(ValueError):
        OlConfig(epsilon_start=0.01, epsilon_end=0.5)


# --- exact dynamic-programming oracle ----------------------------------------------


def test_oracle_three_bit_values():
    oracle = vi_oracle.JointOracle(three_bit_joint(), [1, 1, 1], penalty=5.0)
    states = oracle.reachable_states()
    assert len(states) == 27
    empty = (None, None, None)
    assert oracle.value(empty) == pytest.approx(-1.0)
    assert oracle.optimal_actions(empty) == {0}
    assert oracle.posterior((1.0, None, None)) == [0.0, 1.0]
    # feature 0 visible: predicting is uniquely optimal
    assert oracle.optimal_actions((1.0, None, -1.0)) == {vi_oracle.PREDICT}
    # feature 0 hidden: buying it is uniquely optimal
    assert oracle.optimal_actions((None, 1.0, 1.0)) == {0}


def test_oracle_zero_penalty_predicts_immediately():
    oracle = vi_oracle.JointOracle(three_bit_joint(), [1, 1, 1], penalty=0.0)
    for obs in oracle.reachable_states():
        assert vi_oracle.PREDICT in oracle.optimal_actions(obs)
        assert oracle.value(obs) == pytest.approx(0.0)


def _obs_to_state(obs, catalog):
    state = initial_state(catalog)
    for j, v in enumerate(obs):
        if v is not None:
            state = query(state, j, float(v), catalog)
    return state


def _greedy_action(strategy, state, catalog):
    legal = sorted(available_actions(state))
    choice = strategy.select(state, legal, rng=0)
    return vi_oracle.PREDICT if choice is None else choice


def test_trained_rl_matches_oracle_on_most_states(three_bit, rl3):
    ds = three_bit[0]
    oracle = vi_oracle.JointOracle(three_bit_joint(), [1, 1, 1], penalty=5.0)
    states = oracle.reachable_states()
    hits = sum(
        _greedy_action(rl3, _obs_to_state(obs, ds.catalog), ds.catalog)
        in oracle.optimal_actions(obs)
        for obs in states
    )
    assert hits / len(states) >= 0.9


def test_zero_penalty_policy_predicts_immediately(three_bit, predictor3):
    ds, m, a, y = three_bit
    cfg = RlBasedConfig(
        penalty=0.0, episodes=700, hidden=(16,), min_fill=150, target_sync=200, seed=2,
    )
    strategy, _ = train_q_strategy("rl", m, a, y, 2, ds.catalog, cfg, predictor=predictor3)
    state = initial_state(ds.catalog)
    assert strategy.select(state, sorted(available_actions(state)), rng=0) is None


def test_trained_ol_ranks_label_feature_first(three_bit, ol3):
    ds = three_bit[0]
    state = initial_state(ds.catalog)
    assert ol3.select(state, [0, 1, 2], rng=0) == 0


def test_ol_delta_threshold_stops(three_bit, ol3):
    ds = three_bit[0]
    lazy = OlStrategy(
        q_net=ol3.q_net, predictor=ol3.predictor, catalog=ds.catalog,
        config=replace(ol3.config, delta=1e6),
    )
    state = initial_state(ds.catalog)
    assert lazy.select(state, [0, 1, 2], rng=0) is None


# --- episode driver -----------------------------------------------------------------


def test_run_episode_random_all_acquired(three_bit, predictor3):
    ds = three_bit[0]
    strategy = RandomStrategy(predictor3, RandomConfig(seed=0))
    inst = dataset_instances(ds, [0])[0]
    result = run_episode(strategy, inst, ds.catalog, AllAcquired(), rng=4, episode_id="e0")
    assert sorted(result.order) == [0, 1, 2]
    assert result.total_cost == Fraction(3)
    assert result.steps == 3
    assert result.prediction in (0, 1)
    assert result.correct == (result.prediction == inst.label)


def test_run_episode_matches_trajectory_replay(three_bit, predictor3):
    ds = three_bit[0]
    strategy = RandomStrategy(predictor3)
    totals = {}
    lines = [TRAJECTORY_HEADER]
    for i, inst in enumerate(dataset_instances(ds, range(8))):
        res = run_episode(strategy, inst, ds.catalog, AllAcquired(), rng=i, episode_id=f"e{i}")
        totals[f"e{i}"] = res.total_cost
        lines.extend(res.trajectory_lines())
    assert replay_trajectory(lines[1:]) == totals


def test_run_episode_budget_respected(three_bit, predictor3):
    ds = three_bit[0]
    strategy = RandomStrategy(predictor3)
    inst = dataset_instances(ds, [3])[0]
    result = run_episode(strategy, inst, ds.catalog, Budget(2), rng=0)
    assert result.total_cost <= 2
    assert result.steps == 2  # unit costs: exactly two fit


def test_run_episode_never_reacquires(three_bit, predictor3):
    ds = three_bit[0]
    strategy = RandomStrategy(predictor3)
    for i, inst in enumerate(dataset_instances(ds, range(6))):
        res = run_episode(strategy, inst, ds.catalog, AllAcquired(), rng=100 + i)
        assert len(res.order) == len(set(res.order))


def test_run_episode_static_order_prefix(three_bit, predictor3):
    ds = three_bit[0]
    strategy = StaticOrderStrategy(predictor3, StaticOrderConfig((2, 0, 1)), ds.catalog)
    inst = dataset_instances(ds, [1])[0]
    res = run_episode(strategy, inst, ds.catalog, Budget(2), rng=0)
    assert res.order == [2, 0]


def test_run_episode_k0_features_are_free(three_bit, predictor3):
    ds = three_bit[0]
    strategy = RandomStrategy(predictor3)
    inst = dataset_instances(ds, [2])[0]
    res = run_episode(
        strategy, inst, ds.catalog, AllAcquired(), rng=0, k0=np.array([1, 0, 0], dtype=np.int8)
    )
    assert sorted(res.order) == [1, 2]
    assert res.total_cost == Fraction(2)


def test_run_episode_strategy_stop_still_predicts(three_bit, ol3):
    ds = three_bit[0]
    lazy = OlStrategy(
        q_net=ol3.q_net, predictor=ol3.predictor, catalog=ds.catalog,
        config=replace(ol3.config, delta=1e6),
    )
    inst = dataset_instances(ds, [5])[0]
    res = run_episode(lazy, inst, ds.catalog, AllAcquired(), rng=0)
    assert res.steps == 0 and res.total_cost == 0
    assert res.prediction in (0, 1)


def test_static_order_must_be_permutation(three_bit, predictor3):
    ds = three_bit[0]
    with pytest.raises(ValueError):
        StaticOrderStrategy(predictor3, StaticOrderConfig((0, 1)), ds.catalog)
    with pytest.raises(ValueError):
        StaticOrderStrategy(predictor3, StaticOrderConfig((0, 1, 1)), ds.catalog)


def test_static_order_by_utility_equals_exhaustive_first_pick(three_bit, predictor3):
    ds, m, a, y = three_bit
    store = build_train_store(m, a, ds.catalog, bins=10, neighbors=50)
    empty = initial_state(ds.catalog)
    scores = {
        j: exhaustive_utility(empty, j, predictor3, store)
        for j in sorted(available_actions(empty))
    }
    ranked = sorted(
        scores,
        key=lambda j: (per_cost_ratio(scores[j], ds.catalog.costs[j]), -j),
        reverse=True,
    )
    static = StaticOrderStrategy(predictor3, StaticOrderConfig(tuple(ranked)), ds.catalog)
    assert static.select(empty, [0, 1, 2]) == exhaustive_select(
        empty, predictor3, store, ds.catalog
    )


# --- checkpoints --------------------------------------------------------------------


def _roundtrip(strategy):
    buf = io.StringIO()
    save_strategy(strategy, buf)
    buf.seek(0)
    return load_strategy(buf)


def test_rl_checkpoint_roundtrip_exact(three_bit, rl3):
    ds = three_bit[0]
    loaded = _roundtrip(rl3)
    state = query(initial_state(ds.catalog), 1, -1.0, ds.catalog)
    assert np.array_equal(loaded.q_values(state), rl3.q_values(state))
    assert loaded.config == rl3.config
    legal = sorted(available_actions(state))
    assert loaded.select(state, legal, rng=0) == rl3.select(state, legal, rng=0)


def test_ol_checkpoint_roundtrip_exact(three_bit, ol3):
    ds = three_bit[0]
    loaded = _roundtrip(ol3)
    state = initial_state(ds.catalog)
    assert np.array_equal(loaded.q_values(state), ol3.q_values(state))
    assert loaded.select(state, [0, 1, 2], rng=0) == ol3.select(state, [0, 1, 2], rng=0)


def test_fact_checkpoint_roundtrip(three_bit, fact3):
    ds = three_bit[0]
    strategy = FactStrategy(fact3, ds.catalog)
    loaded = _roundtrip(strategy)
    state = query(initial_state(ds.catalog), 2, 1.0, ds.catalog)
    legal = [0, 1]
    assert loaded.select(state, legal) == strategy.select(state, legal)
    assert loaded.predict(state) == strategy.predict(state)
    assert loaded.certainty(state) == pytest.approx(strategy.certainty(state), abs=0)


def test_exhaustive_checkpoint_roundtrip(three_bit, predictor3):
    ds, m, a, y = three_bit
    store = build_train_store(m[:50], a[:50], ds.catalog, bins=5, neighbors=10)
    strategy = ExhaustiveStrategy(predictor3, store, ds.catalog, ExhaustiveConfig(5, 10))
    loaded = _roundtrip(strategy)
    state = initial_state(ds.catalog)
    assert loaded.select(state, [0, 1, 2]) == strategy.select(state, [0, 1, 2])


def test_random_and_static_checkpoint_roundtrip(three_bit, predictor3):
    ds = three_bit[0]
    rnd = _roundtrip(RandomStrategy(predictor3, RandomConfig(seed=3)))
    assert rnd.config == RandomConfig(seed=3)
    static = _roundtrip(StaticOrderStrategy(predictor3, StaticOrderConfig((2, 1, 0)), ds.catalog))
    assert static.config.ordering == (2, 1, 0)
    assert static.select(initial_state(ds.catalog), [0, 1, 2]) == 2


def test_checkpoint_rejects_wrong_header(three_bit, rl3):
    doc = strategy_to_dict(rl3)
    bad_version = dict(doc, format_version=2)
    with pytest.raises(ValueError):
        strategy_from_dict(bad_version)
    bad_kind = dict(doc, kind="dense-net")
    with pytest.raises(ValueError):
        strategy_from_dict(bad_kind)
    bad_variant = dict(doc, variant="mystery")
    with pytest.raises(ValueError):
        strategy_from_dict(bad_variant)
