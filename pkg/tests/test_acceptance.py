"""Release gates: every core behaviour exercised at its stated scale.

Each test here is a blocking check with an explicit tolerance. Slow ones share
module-scoped fixtures (one desk-scale training run, one distilled tree) so
the whole file stays inside its time budget on a single core.
"""

import csv
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from racestrat.agent import (
    ReplayBuffer, EpisodeRecord, TrainingConfig, Transition, epsilon_at,
    greedy_rollout, train,
)
from racestrat.baselines import format_strategy, load_strategy_pool, parse_strategy, scale_plan
from racestrat.basetypes import ACTIONS, Action, Compound, SafetyCarStatus
from racestrat.env import RaceEnv, make_tiny_env
from racestrat.harness import (
    ComparisonSpec, FixedPlanPolicy, HeuristicPolicy, NetPolicy, RandomPolicy,
    run_comparison,
)
from racestrat.rewards import reward
from racestrat.sim import default_grid, gaps, init_race, step_lap, trace_csv
from racestrat.state import (
    COARSE_GROUPS, FEATURE_GROUPS, UnifiedRaceState, calibrate_scaling,
)
from racestrat.track import desk_track
from racestrat.xai.counterfactual import counterfactual, counterfactual_proximity
from racestrat.xai.cart import fit_cart
from racestrat.xai.shapley import attribution_fidelity
from racestrat.xai.viper import surrogate_fidelity, viper_distill

from oracles import tiny_optimal_actions, tiny_optimal_trajectory

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"

# Desk-scale training configuration used by the learning-signal, attribution
# and distillation gates below. One run, shared via the `trained` fixture.
DESK_TRAIN = TrainingConfig(
    episodes=2000,
    hidden_dim=64,
    learning_rate=0.003,
    batch_size=32,
    updates_per_episode=16,
    target_update_every=5,
    replay_buffer_size=100,
    epsilon_decay=0.997,
    min_epsilon=0.05,
    mask_invalid=True,
    seed=0,
)


@pytest.fixture(scope="module")
def desk():
    config = desk_track("BHR", 20)
    pool = [scale_plan(p, 57, 20) for p in load_strategy_pool("BHR")]
    profile = calibrate_scaling(config, n_sims=200, seed=0)
    return config, pool, profile


@pytest.fixture(scope="module")
def trained(desk):
    config, pool, profile = desk

    def factory(seed):
        return RaceEnv(config, profile, seed, opponent_pool=pool,
                       model_key="train")

    t0 = time.time()
    net, _ = train(factory, DESK_TRAIN)
    return net, time.time() - t0


# ---- reward function ----

def _reward_state(terminal, position, avail, vf):
    return UnifiedRaceState(
        terminal=terminal, track="BHR", safety_car=SafetyCarStatus.NONE,
        position=position, race_progress=0.5, current_tyre=Compound.SOFT,
        tyre_degradation=0.5, soft_available=avail[0],
        medium_available=avail[1], hard_available=avail[2],
        gap_ahead=1.0, gap_behind=1.0, gap_to_leader=5.0,
        last_lap_to_reference=1.0, valid_finish=vf,
    )


def _reference_reward(action, avail, prev_vf, terminal, next_vf, position):
    """Independent first-match transcription of the piecewise definition."""
    points = (25, 18, 15, 12, 10, 8, 6, 4, 2, 1)
    pit_index = {Action.PIT_SOFT: 0, Action.PIT_MEDIUM: 1, Action.PIT_HARD: 2}
    if action in pit_index and not avail[pit_index[action]]:
        return -1000.0
    if terminal and not next_vf:
        return -1000.0
    if action is not Action.NO_PIT and prev_vf:
        return -10.0
    if terminal and position <= 10:
        return float(100 * points[position - 1])
    if terminal and position > 10:
        return 0.0
    return 1.0


def test_reward_truth_table_exhaustive():
    """Every (action, availability, validity, terminal, position) combination."""
    cases = 0
    for action, avail, prev_vf, terminal, next_vf, position in itertools.product(
            ACTIONS,
            itertools.product([False, True], repeat=3),
            [False, True], [False, True], [False, True],
            range(1, 21)):
        prev = _reward_state(False, position, avail, prev_vf)
        nxt = _reward_state(terminal, position, avail, next_vf)
        expected = _reference_reward(action, avail, prev_vf, terminal,
                                     next_vf, position)
        assert reward(prev, action, nxt) == expected, (
            action, avail, prev_vf, terminal, next_vf, position)
        cases += 1
    assert cases == 4 * 8 * 2 * 2 * 2 * 20
    # spot values: P1 2500, P10 100, P11 0, invalid pit -1000, extraneous -10
    avail = (True, True, True)
    assert reward(_reward_state(False, 1, avail, False), Action.NO_PIT,
                  _reward_state(True, 1, avail, True)) == 2500.0
    assert reward(_reward_state(False, 10, avail, False), Action.NO_PIT,
                  _reward_state(True, 10, avail, True)) == 100.0
    assert reward(_reward_state(False, 11, avail, False), Action.NO_PIT,
                  _reward_state(True, 11, avail, True)) == 0.0
    assert reward(_reward_state(False, 5, (False, True, True), False),
                  Action.PIT_SOFT,
                  _reward_state(False, 5, (False, True, True), False)) == -1000.0
    assert reward(_reward_state(False, 5, avail, True), Action.PIT_SOFT,
                  _reward_state(False, 5, avail, True)) == -10.0
    assert reward(_reward_state(False, 5, avail, False), Action.NO_PIT,
                  _reward_state(False, 5, avail, False)) == 1.0


# ---- simulator ----

def test_simulator_invariants_over_1000_races():
    config = desk_track("BHR", 20)
    replay_sample = {}
    for seed in range(1000):
        sim = init_race(config, default_grid(10), seed=seed)
        prev_times = {c.car_id: 0.0 for c in sim.cars}
        while not sim.terminal:
            actions = {3: Action.PIT_MEDIUM} if sim.lap == 8 else {}
            step_lap(sim, config, actions)
            assert sorted(sim.classification) == list(range(10))
            for car in sim.cars:
                assert car.cumulative_time > prev_times[car.car_id]
                prev_times[car.car_id] = car.cumulative_time
                used = (sum(config.tyre_allocation.values())
                        - sum(car.remaining_sets.values()))
                assert used == car.pit_count + 1
        g = gaps(sim)
        order = sim.classification
        for ahead_id, behind_id in zip(order, order[1:]):
            assert abs(g[behind_id][0] - g[ahead_id][1]) < 1e-9
        if seed < 50:
            replay_sample[seed] = trace_csv(sim)

    # byte-identical seed replay on a 50-seed sample
    for seed, expected in replay_sample.items():
        sim = init_race(config, default_grid(10), seed=seed)
        while not sim.terminal:
            actions = {3: Action.PIT_MEDIUM} if sim.lap == 8 else {}
            step_lap(sim, config, actions)
        assert trace_csv(sim) == expected


# ---- learning ----

def test_tiny_mdp_training_reaches_value_iteration_policy():
    """Greedy policy after training agrees with explicit value iteration."""
    cfg = TrainingConfig(episodes=2000, hidden_dim=32, batch_size=8,
                         updates_per_episode=4, seed=0)
    net, _ = train(lambda seed: make_tiny_env(seed), cfg)

    record, _ = greedy_rollout(net, make_tiny_env(0))
    prefix = []
    for t in record.transitions:
        assert int(t.action) in tiny_optimal_actions(tuple(prefix)), (
            prefix, t.action)
        prefix.append(int(t.action))
    _, optimal_return = tiny_optimal_trajectory()
    assert record.total_reward == pytest.approx(optimal_return)


def test_gradient_check_100_random_settings():
    from test_network import test_gradient_matches_finite_differences

    test_gradient_matches_finite_differences()


def test_learning_signal_at_desk_scale(desk, trained):
    config, pool, profile = desk
    net, train_seconds = trained
    assert train_seconds < 14 * 60

    models = [("rsrl", lambda: NetPolicy(net)),
              ("random", lambda: RandomPolicy())]
    for plan in pool:
        models.append((f"fixed_{format_strategy(plan)}",
                       lambda p=plan: FixedPlanPolicy(p)))
    spec = ComparisonSpec(models=tuple(models), tracks=("BHR",),
                          configs={"BHR": config}, pools={"BHR": pool},
                          profile=profile, n_races=500, master_seed=42)
    table = run_comparison(spec)
    rsrl = table.cell("rsrl", "BHR").mean_finish
    random_mean = table.cell("random", "BHR").mean_finish
    fixed_means = {m: c.mean_finish for (m, _), c in table.cells.items()
                   if m.startswith("fixed_")}
    best_fixed = min(fixed_means.values())
    print(f"\nrsrl {rsrl:.3f} random {random_mean:.3f} "
          f"best fixed {best_fixed:.3f} ({min(fixed_means, key=fixed_means.get)}) "
          f"train {train_seconds:.0f}s")
    assert random_mean - rsrl >= 1.0
    assert rsrl <= best_fixed + 0.5


def test_epsilon_schedule_buffer_cap_and_target_cadence():
    cfg = TrainingConfig()
    for t in (0, 1, 7, 100, 1000, 5000, 10**6):
        assert epsilon_at(cfg, t) == max(0.005, 0.999 ** t)

    buffer = ReplayBuffer(1000)
    x = np.zeros(2)
    for i in range(1500):
        buffer.add(EpisodeRecord([Transition(x, Action.NO_PIT, 1.0, x, True)],
                                 5, i))
        assert len(buffer) <= 1000
    assert len(buffer) == 1000
    assert buffer.episodes[0].race_seed == 500  # oldest 500 evicted

    from test_agent import test_target_network_constant_between_copies

    test_target_network_constant_between_copies()


# ---- explanations ----

def test_shapley_efficiency_and_sampling_fidelity(desk, trained):
    config, pool, profile = desk
    net, _ = trained

    def factory(seed):
        return RaceEnv(config, profile, seed, opponent_pool=pool,
                       model_key="explain")

    baseline = np.asarray(profile.baseline, dtype=float)
    assert len(COARSE_GROUPS) <= 12
    exact = attribution_fidelity(net, factory, baseline, n_timesteps=100,
                                 n_sims=20, groups=COARSE_GROUPS, seed=0)
    assert exact.method == "exact"
    assert exact.n_timesteps == 100
    assert max(exact.errors) < 1e-6

    # with all 14 fine-grained groups the budget forces sampling mode
    sampled = attribution_fidelity(net, factory, baseline, n_timesteps=100,
                                   n_sims=20, budget=2000,
                                   groups=FEATURE_GROUPS, seed=0)
    print(f"\nexact MAE {exact.mae:.2e}; sampled normalised MAE "
          f"{sampled.normalised_mae:.4f} at budget 2000")
    assert sampled.method == "sampling"
    assert sampled.normalised_mae <= 0.05


@pytest.fixture(scope="module")
def distilled(desk, trained):
    config, pool, profile = desk
    net, _ = trained

    def factory(seed):
        return RaceEnv(config, profile, seed, opponent_pool=pool,
                       model_key="distill")

    tree, log = viper_distill(net, factory, iterations=25,
                              samples_per_iter=10, max_depth=5, seed=1)
    return tree, log, factory, net


def test_viper_fidelity_and_depth_study(distilled):
    tree, log, factory, net = distilled
    assert tree.metadata["heldout_fidelity"] >= 0.90
    report = surrogate_fidelity(tree, net, factory, n_sims=100, seed=2)
    print(f"\nheld-out fidelity {tree.metadata['heldout_fidelity']:.3f} "
          f"simulation accuracy {report.accuracy:.3f} "
          f"macro F1 {report.macro_f1:.3f}")

    # depth-versus-fidelity curve: rises from depth 1 and plateaus by 4-6
    rows = []
    for depth in (1, 2, 3, 4, 5, 6):
        t, _ = viper_distill(net, factory, iterations=8, samples_per_iter=10,
                             max_depth=depth, seed=3)
        rows.append((depth, t.metadata["heldout_fidelity"], t.n_leaves))
    ARTIFACTS.mkdir(exist_ok=True)
    with open(ARTIFACTS / "depth_study.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["max_depth", "heldout_fidelity", "n_leaves"])
        w.writerows(rows)
    fidelities = {d: f for d, f, _ in rows}
    print("depth study:", rows)
    assert max(fidelities[d] for d in (4, 5, 6)) >= fidelities[1]
    assert max(fidelities[d] for d in (4, 5, 6)) >= fidelities[2]


def _leaf_paths(tree):
    """(action, [(feature, op, threshold), ...]) per leaf, by path walking."""
    paths = []

    def walk(node, constraints):
        if node.is_leaf:
            paths.append((node.action, list(constraints)))
            return
        walk(node.left, constraints + [(node.feature, "<=", node.threshold)])
        walk(node.right, constraints + [(node.feature, ">", node.threshold)])

    walk(tree.root, [])
    return paths


def _brute_force_distance(tree, x, target, norm, immutable):
    """Independent minimum: per target leaf, intervals from the raw path
    constraints, exhaustive candidate settings for one-hot blocks, coordinate
    clamps elsewhere. Returns None when no leaf is reachable."""
    from racestrat.state import FEATURE_GROUPS as FG, FEATURE_NAMES as FN
    from racestrat.state import ONE_HOT_GROUPS as OHG
    from racestrat.xai.counterfactual import EPS_CF

    block_of = {}
    if tree.n_features == len(FN):
        for g in OHG:
            for i in FG[g]:
                block_of[i] = tuple(FG[g])

    def dist(a, b):
        d = np.abs(np.asarray(a) - np.asarray(b))
        return float(d.sum()) if norm == "l1" else float(np.sqrt((d**2).sum()))

    best = None
    for action, constraints in _leaf_paths(tree):
        if action != target:
            continue
        lo = np.full(tree.n_features, -np.inf)
        hi = np.full(tree.n_features, np.inf)
        for f, op, thr in constraints:
            if op == "<=":
                hi[f] = min(hi[f], thr)
            else:
                lo[f] = max(lo[f], thr)

        def inside(i, v):
            return lo[i] < v <= hi[i]

        z = x.astype(float).copy()
        feasible = True
        done_blocks = set()
        for f in range(tree.n_features):
            if f in done_blocks:
                continue
            if f in block_of:
                idx = block_of[f]
                done_blocks.update(idx)
                candidates = []
                if all(inside(i, x[i]) for i in idx):
                    candidates.append({i: x[i] for i in idx})
                if not any(i in immutable for i in idx):
                    for hot in idx:
                        setting = {i: (1.0 if i == hot else 0.0) for i in idx}
                        if all(inside(i, setting[i]) for i in idx):
                            candidates.append(setting)
                if not candidates:
                    feasible = False
                    break
                pick = min(candidates,
                           key=lambda s: dist([x[i] for i in idx],
                                              [s[i] for i in idx]))
                for i, v in pick.items():
                    z[i] = v
                continue
            if f in immutable:
                if not inside(f, x[f]):
                    feasible = False
                    break
                continue
            low = lo[f] + EPS_CF if np.isfinite(lo[f]) else -np.inf
            if low > hi[f]:
                feasible = False
                break
            z[f] = min(max(x[f], low), hi[f])
        if not feasible:
            continue
        d = dist(x, z)
        if best is None or d < best:
            best = d
    return best


def test_counterfactual_validity_and_brute_force_distance(distilled):
    tree, _, factory, _ = distilled
    rng = np.random.default_rng(7)

    # states drawn from real episodes, hold-out from the distillation seeds
    states = []
    while len(states) < 100:
        env = factory(int(rng.integers(10**6, 2 * 10**6)))
        x = env.reset()
        done = False
        while not done:
            states.append(x)
            x, _, done, _ = env.step(tree.predict(x))

    returned = 0
    for i in range(100):
        x = states[i]
        pred = tree.predict(x)
        target = int(rng.choice([a for a in range(4) if a != pred]))
        expected = _brute_force_distance(tree, x, target, "l1", frozenset())
        try:
            cf = counterfactual(tree, x, target, immutable=frozenset())
        except ValueError:
            assert expected is None
            continue
        assert tree.predict(cf.modified) == target
        assert expected is not None
        assert cf.distance == pytest.approx(expected, abs=1e-12)
        returned += 1
    # Non-vacuity guard. A target is unreachable when no leaf carries it, and
    # a concentrated policy can leave the tree with only two actions, so most
    # random targets verify the None path. Enough must still go through the
    # real search for the validity and optimality assertions to mean anything.
    assert returned >= 25

    mean_changed, mean_distance = counterfactual_proximity(
        tree, factory, n_sims=100, rng=np.random.default_rng(8),
        immutable=frozenset())
    print(f"\ncounterfactual proximity: {mean_changed:.3f} features changed, "
          f"mean distance {mean_distance:.4f}")


# ---- strategy language ----

def test_strategy_parser_round_trip_and_errors():
    plan = parse_strategy("S[10, 20]M")
    assert format_strategy(plan) == "S[10,20]M"
    assert plan.stints[0].compound is Compound.SOFT
    assert plan.stints[0].pit_window == (10, 20)

    plan = parse_strategy("M[3]S[44]H[46]M")
    assert format_strategy(plan) == "M[3]S[44]H[46]M"
    assert [s.compound for s in plan.stints] == [
        Compound.MEDIUM, Compound.SOFT, Compound.HARD, Compound.MEDIUM]
    assert [s.pit_window for s in plan.stints] == [(3, 3), (44, 44), (46, 46),
                                                   None]

    for text in ("S", "S[5]", "S[9,5]M", "SSS", "S[5]S", "S[5,", "[5]M",
                 "S[5]M[4]H", "Q[5]M", ""):
        with pytest.raises(ValueError):
            parse_strategy(text)

    round_trips = ("S[14]M", "S[10,20]M", "M[3]S[44]H[46]M", "H[30]S",
                   "S[5,9]M[12,18]H")
    for text in round_trips:
        assert format_strategy(parse_strategy(text)) == text


# ---- paired seeds ----

def test_paired_seed_fairness_opponents_identical(desk):
    config, pool, profile = desk
    traces = {}
    for model_key, policy in (("alpha", HeuristicPolicy()),
                              ("beta", FixedPlanPolicy("S[5,9]H"))):
        env = RaceEnv(config, profile, seed=123, opponent_pool=pool,
                      model_key=model_key)
        x = env.reset()
        policy.start(env)
        done = False
        while not done:
            x, _, done, _ = env.step(policy.act(x, env))
        controlled = env.controlled_id
        # drop the position column: the classification interleaves the
        # controlled car, but opponent lap times and safety-car draws and
        # everything else must be identical draw for draw
        traces[model_key] = [row[:2] + row[3:] for row in env.sim.trace
                             if row[1] != controlled]
    assert traces["alpha"] == traces["beta"]
