"""RL environment over the simulator: one controlled car, plan-driven opponents.

Opponent plans, opponent pit laps and the controlled car's starting compound
are all drawn from streams keyed by the race seed only, so two different
policies evaluated on the same seed race against an identical field.
"""

from __future__ import annotations

import numpy as np

from .basetypes import Action, Compound
from .baselines import FixedStrategyDriver, StrategyPlan, fixed_policy
from .rewards import DEFAULT_REWARD, RewardSpec, reward
from .sim import CONTROLLED_TAG, SimState, init_race, step_lap
from .state import ScalingProfile, UnifiedRaceState, scale, translate
from .track import TrackConfig

OPPONENT_STREAM_KEY = 424242


class RaceEnv:
    """Gym-style episodic environment; observations are scaled feature vectors."""

    def __init__(
        self,
        config: TrackConfig,
        profile: ScalingProfile,
        seed: int,
        opponent_pool: list[StrategyPlan] | None = None,
        opponent_plans: list[StrategyPlan] | None = None,
        n_cars: int = 10,
        controlled_delta: float = 0.0,
        start_compound: Compound | None = None,
        model_key: str = "model",
        reward_spec: RewardSpec = DEFAULT_REWARD,
    ):
        if opponent_pool is None and opponent_plans is None:
            raise ValueError("need an opponent pool or explicit opponent plans")
        self.config = config
        self.profile = profile
        self.seed = seed
        self.pool = opponent_pool
        self.fixed_plans = opponent_plans
        self.n_cars = n_cars
        self.controlled_delta = controlled_delta
        self.start_compound = start_compound
        self.model_key = model_key
        self.reward_spec = reward_spec
        self.sim: SimState | None = None
        self.prev_state: UnifiedRaceState | None = None

    # ---- episode lifecycle ----

    def reset(self) -> np.ndarray:
        rng_opp = np.random.default_rng(np.random.SeedSequence([self.seed, OPPONENT_STREAM_KEY]))
        n_opp = self.n_cars - 1
        if self.fixed_plans is not None:
            plans = list(self.fixed_plans)[:n_opp]
        else:
            plans = [self.pool[int(rng_opp.integers(len(self.pool)))] for _ in range(n_opp)]
        if len(plans) != n_opp:
            raise ValueError("not enough opponent plans for the grid")

        start = self.start_compound
        if start is None:
            start = (Compound.SOFT, Compound.MEDIUM)[int(rng_opp.integers(2))]

        deltas = np.linspace(-1.0, 1.0, max(n_opp, 1))
        self.controlled_slot = self.n_cars // 2
        grid, opp = [], 0
        self.drivers: dict[int, FixedStrategyDriver] = {}
        for slot in range(self.n_cars):
            if slot == self.controlled_slot:
                grid.append((self.controlled_delta, start, CONTROLLED_TAG))
            else:
                plan = plans[opp]
                grid.append((float(deltas[opp]), plan.stints[0].compound, "opponent"))
                opp += 1
        self.sim = init_race(self.config, grid, self.seed, self.model_key)
        for car in self.sim.cars:
            if not car.controlled:
                idx = car.car_id if car.car_id < self.controlled_slot else car.car_id - 1
                self.drivers[car.car_id] = fixed_policy(
                    plans[idx], rng_opp, self.config.total_laps
                )
        self.controlled_id = next(c.car_id for c in self.sim.cars if c.controlled)
        self.prev_state = translate(self.sim, self.config, self.controlled_id)
        self.pit_events: list[tuple[int, Compound]] = []
        self.start_used = start
        return scale(self.prev_state, self.profile)

    def availability(self) -> tuple[bool, bool, bool]:
        s = self.prev_state
        return (s.soft_available, s.medium_available, s.hard_available)

    def opponent_actions(self) -> dict[int, Action]:
        lap_about_to_run = self.sim.lap + 1
        actions = {}
        for car_id, driver in self.drivers.items():
            action = driver.action_for_lap(lap_about_to_run)
            if action is not Action.NO_PIT:
                if not self.sim.car(car_id).compound_available(action.compound):
                    action = Action.NO_PIT  # plans never burn a set they don't have
            actions[car_id] = action
        return actions

    def step(self, action: Action):
        if self.sim is None or self.sim.terminal:
            raise RuntimeError("call reset() before step()")
        action = Action(action)
        prev_pits = self.sim.car(self.controlled_id).pit_count
        actions = self.opponent_actions()
        actions[self.controlled_id] = action
        step_lap(self.sim, self.config, actions)
        car = self.sim.car(self.controlled_id)
        if car.pit_count > prev_pits:
            self.pit_events.append((self.sim.lap, car.current_compound))
        next_state = translate(self.sim, self.config, self.controlled_id)
        r = reward(self.prev_state, action, next_state, self.reward_spec)
        done = next_state.terminal
        info = {"race_seed": self.seed}
        if done:
            if car.invalid_pit and not self.sim.terminal:
                self._finish_race()
            info.update(
                finish_position=self.sim.position_of(self.controlled_id),
                pit_count=car.pit_count,
                strategy=self.strategy_string(),
                failed=car.invalid_pit or not next_state.valid_finish,
            )
        self.prev_state = next_state
        return scale(next_state, self.profile), r, done, info

    def _finish_race(self) -> None:
        """Complete the race after an episode failure to get a classification."""
        while not self.sim.terminal:
            actions = self.opponent_actions()
            actions[self.controlled_id] = Action.NO_PIT
            step_lap(self.sim, self.config, actions)

    def strategy_string(self) -> str:
        parts = [self.start_used.short]
        for lap, compound in self.pit_events:
            parts.append(f"[{lap}]{compound.short}")
        return "".join(parts)


class PolicyEnvAdapter:
    """Drives a RaceEnv with a UnifiedRaceState-based policy callable."""

    def __init__(self, env: RaceEnv):
        self.env = env

    def run(self, policy) -> dict:
        self.env.reset()
        done, info, total = False, {}, 0.0
        while not done:
            action = policy(self.env.prev_state, self.env)
            _, r, done, info = self.env.step(action)
            total += r
        info["total_reward"] = total
        return info


# ---- tiny deterministic environment (oracle-checkable) ----

def tiny_track() -> TrackConfig:
    """5-lap, noise-free, SC-free micro track with two usable compounds."""
    from .track import load_track

    return load_track("BHR").replace(
        total_laps=5,
        reference_lap_time=60.0,
        pit_loss=4.0,
        compound_offset={Compound.SOFT: 0.0, Compound.MEDIUM: 0.8, Compound.HARD: 1.6},
        deg_rate={Compound.SOFT: 0.7, Compound.MEDIUM: 0.2, Compound.HARD: 0.1},
        cliff_age={Compound.SOFT: 2, Compound.MEDIUM: 10, Compound.HARD: 10},
        fuel_effect=0.0,
        sc_deploy_prob=0.0,
        lap_noise_sigma=0.0,
        tyre_allocation={Compound.SOFT: 2, Compound.MEDIUM: 2, Compound.HARD: 0},
    )


def tiny_profile() -> "ScalingProfile":
    from .state import ScalingProfile

    return ScalingProfile(
        bounds={
            "scaled_position": (1.0, 20.0, 0.0, 1.0),
            "scaled_tyre_degradation": (0.0, 4.0, 0.0, 1.0),
            "scaled_gap_ahead": (0.0, 30.0, -1.0, 1.0),
            "scaled_gap_behind": (0.0, 30.0, -1.0, 1.0),
            "scaled_gap_to_leader": (0.0, 60.0, -1.0, 1.0),
            "last_lap_to_reference": (0.0, 2.0, 0.0, 2.0),
        },
        baseline=_tiny_baseline(),
    )


def _tiny_baseline() -> list[float]:
    """Fixed mid-race baseline instance for explanation code on the tiny track."""
    from .state import FEATURE_NAMES

    values = dict.fromkeys(FEATURE_NAMES, 0.0)
    values.update({
        "track_BHR": 1.0,
        "safety_car_none": 1.0,
        "scaled_position": 0.5,
        "race_progress": 0.5,
        "tyre_soft": 1.0,
        "scaled_tyre_degradation": 0.25,
        "soft_available": 1.0,
        "medium_available": 1.0,
        "last_lap_to_reference": 1.0,
    })
    return [values[n] for n in FEATURE_NAMES]


def make_tiny_env(seed: int = 0, model_key: str = "model") -> RaceEnv:
    """Deterministic 3-car, 5-lap environment: ideal for value-iteration checks."""
    from .baselines import parse_strategy

    return RaceEnv(
        config=tiny_track(),
        profile=tiny_profile(),
        seed=seed,
        opponent_plans=[parse_strategy("S[2]M"), parse_strategy("M[3]S")],
        n_cars=3,
        controlled_delta=-0.3,
        start_compound=Compound.SOFT,
        model_key=model_key,
    )
