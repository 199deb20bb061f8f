"""Lap-by-lap Monte Carlo race simulator.

Additive lap-time model: reference pace + driver delta + compound offset +
tyre degradation + fuel load + noise, with pit stops, a safety-car process
and traffic for the controlled car. The whole race trace is a pure function
of (config, grid, seed, action sequence).

Randomness is split into two streams so paired-seed comparisons stay fair:
the environment stream (opponents, safety car) is keyed by the race seed
only, while the controlled car's noise comes from a second stream keyed by
seed + model. Opponents never interact with the controlled car, so their
traces are identical across models on the same seed.
"""

from __future__ import annotations

import copy
import csv
import io
import zlib
from dataclasses import dataclass, field

import numpy as np

from .basetypes import Action, Compound, SafetyCarStatus
from .track import TrackConfig

CONTROLLED_TAG = "agent"
SC_GAP_INTERVAL = 1.0  # seconds between cars after safety-car bunching
PASS_MARGIN = 0.5      # seconds a blocked car is held behind the car ahead


@dataclass
class CarState:
    car_id: int
    pace_delta: float
    current_compound: Compound
    tyre_age: int
    compounds_used: set[Compound]
    remaining_sets: dict[Compound, int]
    cumulative_time: float = 0.0
    pit_count: int = 0
    policy_tag: str = "opponent"
    last_lap_time: float = 0.0
    invalid_pit: bool = False

    @property
    def controlled(self) -> bool:
        return self.policy_tag == CONTROLLED_TAG

    def compound_available(self, compound: Compound) -> bool:
        return self.remaining_sets.get(compound, 0) > 0


@dataclass
class SimState:
    lap: int
    cars: list[CarState]
    sc_status: SafetyCarStatus
    sc_laps_remaining: int
    rng_env: np.random.Generator
    rng_car: np.random.Generator
    classification: list[int]  # car ids ordered P1..PN
    total_laps: int
    trace: list[tuple] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.lap >= self.total_laps

    def car(self, car_id: int) -> CarState:
        for car in self.cars:
            if car.car_id == car_id:
                return car
        raise KeyError(f"unknown car id {car_id}")

    def position_of(self, car_id: int) -> int:
        return self.classification.index(car_id) + 1

    def clone(self) -> "SimState":
        return copy.deepcopy(self)


def _model_stream_seed(seed: int, model_key: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(model_key.encode())])


def init_race(
    config: TrackConfig,
    grid: list[tuple[float, Compound, str]],
    seed: int,
    model_key: str = "default",
) -> SimState:
    """Set up a race; grid entries are (pace_delta, starting_compound, policy_tag)."""
    if not 1 <= len(grid) <= 20:
        raise ValueError("grid must have 1..20 cars")
    cars = []
    for car_id, (pace_delta, compound, tag) in enumerate(grid):
        if config.tyre_allocation.get(compound, 0) < 1:
            raise ValueError(f"car {car_id} starts on {compound.value} with zero allocation")
        remaining = dict(config.tyre_allocation)
        remaining[compound] -= 1
        cars.append(
            CarState(
                car_id=car_id,
                pace_delta=pace_delta,
                current_compound=compound,
                tyre_age=0,
                compounds_used={compound},
                remaining_sets=remaining,
                policy_tag=tag,
            )
        )
    return SimState(
        lap=0,
        cars=cars,
        sc_status=SafetyCarStatus.NONE,
        sc_laps_remaining=0,
        rng_env=np.random.Generator(np.random.PCG64(seed)),
        rng_car=np.random.Generator(np.random.PCG64(_model_stream_seed(seed, model_key))),
        classification=[c.car_id for c in cars],
        total_laps=config.total_laps,
    )


def default_grid(
    n_cars: int = 10,
    controlled_delta: float = 0.0,
    controlled_slot: int = 0,
    start_compound: Compound = Compound.SOFT,
) -> list[tuple[float, Compound, str]]:
    """Grid with evenly spread opponent pace and one controlled car."""
    if not 1 <= n_cars <= 20:
        raise ValueError("n_cars must be 1..20")
    deltas = np.linspace(-1.0, 1.0, max(n_cars - 1, 1))
    grid: list[tuple[float, Compound, str]] = []
    opp = 0
    for slot in range(n_cars):
        if slot == controlled_slot:
            grid.append((controlled_delta, start_compound, CONTROLLED_TAG))
        else:
            compound = Compound.SOFT if opp % 2 == 0 else Compound.MEDIUM
            grid.append((float(deltas[opp]), compound, "opponent"))
            opp += 1
    return grid


def pace_multiplier(status: SafetyCarStatus, config: TrackConfig) -> float:
    if status is SafetyCarStatus.FULL:
        return config.sc_pace_factor
    if status is SafetyCarStatus.VIRTUAL:
        return config.vsc_pace_factor
    return 1.0


def pit_loss_factor(status: SafetyCarStatus, config: TrackConfig) -> float:
    if status is SafetyCarStatus.FULL:
        return config.pit_loss_sc_factor
    if status is SafetyCarStatus.VIRTUAL:
        return config.pit_loss_vsc_factor
    return 1.0


def lap_time(
    car: CarState,
    sim: SimState,
    config: TrackConfig,
    rng: np.random.Generator,
    held_up: bool = False,
) -> float:
    """Green-flag lap time for the car's current tyres, scaled under SC/VSC."""
    laps_remaining = sim.total_laps - sim.lap
    base = (
        config.reference_lap_time
        + car.pace_delta
        + config.compound_offset[car.current_compound]
        + config.degradation(car.current_compound, car.tyre_age)
        + config.fuel_effect * laps_remaining
    )
    if config.lap_noise_sigma > 0:
        base += rng.normal(0.0, config.lap_noise_sigma)
    if held_up:
        base += config.traffic_penalty
    return base * pace_multiplier(sim.sc_status, config)


def _update_safety_car(sim: SimState, config: TrackConfig) -> bool:
    """Advance the SC process; returns True when a new deployment happened.

    Three uniforms are consumed from the environment stream every lap so the
    draw sequence is independent of what actually happens in the race.
    """
    u_deploy, u_virtual, u_duration = sim.rng_env.uniform(size=3)
    if sim.sc_status is not SafetyCarStatus.NONE:
        sim.sc_laps_remaining -= 1
        if sim.sc_laps_remaining <= 0:
            sim.sc_status = SafetyCarStatus.NONE
            sim.sc_laps_remaining = 0
        return False
    if u_deploy < config.sc_deploy_prob:
        sim.sc_status = (
            SafetyCarStatus.VIRTUAL if u_virtual < config.vsc_share else SafetyCarStatus.FULL
        )
        p = min(1.0, 1.0 / max(config.sc_duration_mean, 1.0))
        duration = int(np.ceil(np.log1p(-u_duration) / np.log1p(-p))) if p < 1.0 else 1
        sim.sc_laps_remaining = max(1, duration)
        return True
    return False


def _compress_field(sim: SimState) -> None:
    """Bunch the field to fixed intervals behind the leader (full SC only)."""
    leader_time = sim.car(sim.classification[0]).cumulative_time
    for pos, car_id in enumerate(sim.classification):
        if pos == 0:
            continue
        car = sim.car(car_id)
        car.cumulative_time = min(car.cumulative_time, leader_time + pos * SC_GAP_INTERVAL)


def step_lap(sim: SimState, config: TrackConfig, actions: dict[int, Action]) -> SimState:
    """Advance the whole field by one lap, applying pit actions; mutates sim."""
    if sim.terminal:
        raise RuntimeError("race already finished")
    known = {c.car_id for c in sim.cars}
    unknown = set(actions) - known
    if unknown:
        raise KeyError(f"actions for unknown car ids {sorted(unknown)}")

    prev_end = {c.car_id: c.cumulative_time for c in sim.cars}

    deployed = _update_safety_car(sim, config)
    if deployed and sim.sc_status is SafetyCarStatus.FULL:
        _compress_field(sim)

    pre_classification = list(sim.classification)
    pre_cum = {c.car_id: c.cumulative_time for c in sim.cars}

    # Raw lap times and pit execution, opponents first (fixed draw order).
    increments: dict[int, float] = {}
    executed_pits: dict[int, Compound] = {}
    for car in sim.cars:
        rng = sim.rng_car if car.controlled else sim.rng_env
        action = actions.get(car.car_id, Action.NO_PIT)
        increment = lap_time(car, sim, config, rng)
        target = action.compound
        if target is not None:
            if car.compound_available(target):
                increment += config.pit_loss * pit_loss_factor(sim.sc_status, config)
                executed_pits[car.car_id] = target
            else:
                car.invalid_pit = True
        increments[car.car_id] = increment

    # Traffic: a controlled car that catches the car positionally ahead without
    # enough pace advantage is held behind it. Opponents run unimpeded so their
    # traces never depend on the controlled car.
    if sim.sc_status is SafetyCarStatus.NONE:
        for car in sim.cars:
            if not car.controlled:
                continue
            pos = pre_classification.index(car.car_id)
            if pos == 0:
                continue
            ahead_id = pre_classification[pos - 1]
            if ahead_id in executed_pits or car.car_id in executed_pits:
                continue
            my_new = pre_cum[car.car_id] + increments[car.car_id]
            ahead_new = pre_cum[ahead_id] + increments[ahead_id]
            advantage = increments[ahead_id] - increments[car.car_id]
            if my_new < ahead_new and advantage < config.overtake_threshold:
                held = max(
                    my_new + config.traffic_penalty,
                    ahead_new + PASS_MARGIN,
                )
                increments[car.car_id] = held - pre_cum[car.car_id]

    # Commit lap results.
    for car in sim.cars:
        inc = increments[car.car_id]
        car.last_lap_time = inc
        # keeps cumulative time strictly increasing even after SC compression
        car.cumulative_time = max(pre_cum[car.car_id] + inc, prev_end[car.car_id] + 1e-3)
        if car.car_id in executed_pits:
            target = executed_pits[car.car_id]
            car.remaining_sets[target] -= 1
            car.current_compound = target
            car.compounds_used.add(target)
            car.tyre_age = 0
            car.pit_count += 1
        else:
            car.tyre_age += 1

    order = sorted(sim.cars, key=lambda c: (c.cumulative_time, c.car_id))
    sim.classification = [c.car_id for c in order]
    sim.lap += 1

    for car in sim.cars:
        action = actions.get(car.car_id, Action.NO_PIT)
        sim.trace.append(
            (
                sim.lap,
                car.car_id,
                sim.position_of(car.car_id),
                car.current_compound.short,
                car.tyre_age,
                round(car.last_lap_time, 6),
                round(car.cumulative_time, 6),
                sim.sc_status.value,
                action.short,
            )
        )
    return sim


def gaps(sim: SimState) -> dict[int, tuple[float, float, float]]:
    """Positional gaps per car: (gap_ahead, gap_behind, gap_to_leader)."""
    result: dict[int, tuple[float, float, float]] = {}
    times = [sim.car(cid).cumulative_time for cid in sim.classification]
    for pos, car_id in enumerate(sim.classification):
        ahead = times[pos] - times[pos - 1] if pos > 0 else 0.0
        behind = times[pos + 1] - times[pos] if pos + 1 < len(times) else 0.0
        leader = times[pos] - times[0]
        result[car_id] = (ahead, behind, leader)
    return result


TRACE_COLUMNS = (
    "lap", "car", "position", "compound", "tyre_age",
    "lap_time", "cumulative_time", "sc_status", "action",
)


def trace_csv(sim: SimState) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(sim.trace)
    return buf.getvalue()


def write_trace(sim: SimState, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv(sim))
