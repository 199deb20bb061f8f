"""Translator layer: simulator snapshot -> per-lap observation -> model features.

The raw observation carries everything the reward needs; the feature vector
the network sees is the scaled/one-hot subset. Scaling bounds come from a
calibration run over baseline races and are persisted next to checkpoints:
a model may only run with the profile it was trained with.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .basetypes import COMPOUNDS, Compound, SC_STATUSES, SafetyCarStatus, TRACK_IDS
from .sim import SimState, gaps as sim_gaps, init_race, step_lap
from .basetypes import Action
from .track import TrackConfig


@dataclass(frozen=True)
class UnifiedRaceState:
    terminal: bool
    track: str
    safety_car: SafetyCarStatus
    position: int
    race_progress: float
    current_tyre: Compound
    tyre_degradation: float
    soft_available: bool
    medium_available: bool
    hard_available: bool
    gap_ahead: float
    gap_behind: float
    gap_to_leader: float
    last_lap_to_reference: float
    valid_finish: bool

    def available(self, compound: Compound) -> bool:
        return {
            Compound.SOFT: self.soft_available,
            Compound.MEDIUM: self.medium_available,
            Compound.HARD: self.hard_available,
        }[compound]


# Frozen feature-vector layout: track one-hot, SC one-hot, then scalars/one-hots.
FEATURE_NAMES: tuple[str, ...] = tuple(
    [f"track_{t}" for t in TRACK_IDS]
    + [f"safety_car_{s.value}" for s in SC_STATUSES]
    + ["scaled_position", "race_progress"]
    + [f"tyre_{c.value}" for c in COMPOUNDS]
    + [
        "scaled_tyre_degradation",
        "soft_available",
        "medium_available",
        "hard_available",
        "scaled_gap_ahead",
        "scaled_gap_behind",
        "scaled_gap_to_leader",
        "last_lap_to_reference",
        "valid_finish",
    ]
)

FEATURE_COUNT = len(FEATURE_NAMES)


def _block(prefix: str) -> tuple[int, ...]:
    return tuple(i for i, n in enumerate(FEATURE_NAMES) if n.startswith(prefix))


def _index(name: str) -> int:
    return FEATURE_NAMES.index(name)


# Feature groups for explanations: one-hot blocks are atomic.
FEATURE_GROUPS: dict[str, tuple[int, ...]] = {
    "Track": _block("track_"),
    "Safety Car": _block("safety_car_"),
    "Position": (_index("scaled_position"),),
    "Race Progress": (_index("race_progress"),),
    "Current Tyre": _block("tyre_"),
    "Tyre Degradation": (_index("scaled_tyre_degradation"),),
    "Soft Available": (_index("soft_available"),),
    "Medium Available": (_index("medium_available"),),
    "Hard Available": (_index("hard_available"),),
    "Gap Ahead": (_index("scaled_gap_ahead"),),
    "Gap Behind": (_index("scaled_gap_behind"),),
    "Gap To Leader": (_index("scaled_gap_to_leader"),),
    "Last Lap To Reference": (_index("last_lap_to_reference"),),
    "Valid Finish": (_index("valid_finish"),),
}

# Coarser grouping (12 groups) keeps exact Shapley enumeration tractable.
COARSE_GROUPS: dict[str, tuple[int, ...]] = {
    **{k: v for k, v in FEATURE_GROUPS.items()
       if k not in ("Soft Available", "Medium Available", "Hard Available")},
    "Tyres Available": (
        _index("soft_available"),
        _index("medium_available"),
        _index("hard_available"),
    ),
}

ONE_HOT_GROUPS = ("Track", "Safety Car", "Current Tyre")

# Human-facing labels for single features; one-hot members keep their raw name.
DISPLAY_NAMES = {
    "scaled_position": "Position",
    "race_progress": "Race Progress",
    "scaled_tyre_degradation": "Tyre Degradation",
    "soft_available": "Soft Available",
    "medium_available": "Medium Available",
    "hard_available": "Hard Available",
    "scaled_gap_ahead": "Gap Ahead",
    "scaled_gap_behind": "Gap Behind",
    "scaled_gap_to_leader": "Gap To Leader",
    "last_lap_to_reference": "Last Lap To Reference",
    "valid_finish": "Valid Finish",
}

# Scaled features and their target intervals; position/progress/llr are analytic.
SCALED_SPECS = {
    "scaled_position": (0.0, 1.0),
    "scaled_tyre_degradation": (0.0, 1.0),
    "scaled_gap_ahead": (-1.0, 1.0),
    "scaled_gap_behind": (-1.0, 1.0),
    "scaled_gap_to_leader": (-1.0, 1.0),
    "last_lap_to_reference": (0.0, 2.0),
}


def feature_ordering_hash() -> str:
    return hashlib.sha256("|".join(FEATURE_NAMES).encode()).hexdigest()[:16]


@dataclass
class ScalingProfile:
    """Per-feature linear scaling with clipping, plus a baseline instance."""

    bounds: dict[str, tuple[float, float, float, float]]  # name -> (lo, hi, lo_t, hi_t)
    n_calibration_sims: int = 0
    calibration_seed: int = 0
    baseline: list[float] = field(default_factory=list)  # scaled-space baseline vector

    def __post_init__(self):
        for name, (lo, hi, lo_t, hi_t) in self.bounds.items():
            if lo >= hi:
                raise ValueError(f"degenerate bounds for {name}: ({lo}, {hi})")
            if (lo_t, hi_t) != SCALED_SPECS[name]:
                raise ValueError(f"target interval for {name} must be {SCALED_SPECS[name]}")

    def scale_value(self, name: str, raw: float) -> float:
        lo, hi, lo_t, hi_t = self.bounds[name]
        clipped = min(max(raw, lo), hi)
        return lo_t + (clipped - lo) * (hi_t - lo_t) / (hi - lo)

    def unscale_value(self, name: str, scaled: float) -> float:
        lo, hi, lo_t, hi_t = self.bounds[name]
        return lo + (scaled - lo_t) * (hi - lo) / (hi_t - lo_t)


def _one_hot(value, ordering) -> list[float]:
    return [1.0 if value == v else 0.0 for v in ordering]


def translate(sim: SimState, config: TrackConfig, car_id: int) -> UnifiedRaceState:
    """Build the per-lap observation of one car from the simulator state."""
    car = sim.car(car_id)  # raises KeyError on unknown car
    gap_ahead, gap_behind, gap_leader = sim_gaps(sim)[car_id]
    reference = config.reference_lap_time
    if sim.lap == 0:
        llr = 1.0  # no lap completed yet
    else:
        llr = min(max(car.last_lap_time / reference, 0.0), 2.0)
    return UnifiedRaceState(
        terminal=sim.terminal or car.invalid_pit,
        track=config.track_id,
        safety_car=sim.sc_status,
        position=sim.position_of(car_id),
        race_progress=sim.lap / sim.total_laps,
        current_tyre=car.current_compound,
        tyre_degradation=config.degradation(car.current_compound, car.tyre_age),
        soft_available=car.compound_available(Compound.SOFT),
        medium_available=car.compound_available(Compound.MEDIUM),
        hard_available=car.compound_available(Compound.HARD),
        gap_ahead=gap_ahead,
        gap_behind=gap_behind,
        gap_to_leader=gap_leader,
        last_lap_to_reference=llr,
        valid_finish=len(car.compounds_used) >= 2,
    )


def scale(state: UnifiedRaceState, profile: ScalingProfile) -> np.ndarray:
    """Encode the observation as the frozen-order feature vector."""
    values = _one_hot(state.track, TRACK_IDS)
    values += _one_hot(state.safety_car, SC_STATUSES)
    values.append(profile.scale_value("scaled_position", float(state.position)))
    values.append(state.race_progress)
    values += _one_hot(state.current_tyre, COMPOUNDS)
    values.append(profile.scale_value("scaled_tyre_degradation", state.tyre_degradation))
    values += [
        float(state.soft_available),
        float(state.medium_available),
        float(state.hard_available),
        profile.scale_value("scaled_gap_ahead", state.gap_ahead),
        profile.scale_value("scaled_gap_behind", state.gap_behind),
        profile.scale_value("scaled_gap_to_leader", state.gap_to_leader),
        profile.scale_value("last_lap_to_reference", state.last_lap_to_reference),
        float(state.valid_finish),
    ]
    return np.asarray(values, dtype=np.float64)


def _calibration_races(config: TrackConfig, n_sims: int, seed: int):
    """Roll simple one-stop races and yield the controlled car's observations."""
    from .sim import default_grid  # local to avoid import-order knots

    for i in range(n_sims):
        race_seed = seed * 100003 + i
        grid = default_grid(n_cars=min(20, 10), controlled_delta=0.0)
        sim = init_race(config, grid, race_seed, model_key="calibration")
        rng = np.random.default_rng(race_seed)
        pit_laps = {
            car.car_id: int(rng.integers(config.total_laps // 3, max(2 * config.total_laps // 3, config.total_laps // 3 + 1)))
            for car in sim.cars
        }
        controlled = next(c.car_id for c in sim.cars if c.controlled)
        while not sim.terminal:
            actions = {}
            for car in sim.cars:
                if sim.lap == pit_laps[car.car_id]:
                    target = Compound.MEDIUM if car.current_compound is not Compound.MEDIUM else Compound.HARD
                    actions[car.car_id] = {
                        Compound.MEDIUM: Action.PIT_MEDIUM,
                        Compound.HARD: Action.PIT_HARD,
                    }[target]
            step_lap(sim, config, actions)
            yield translate(sim, config, controlled)


def calibrate_scaling(config: TrackConfig, n_sims: int, seed: int = 0) -> ScalingProfile:
    """Estimate scaling bounds from baseline races (1st/99th percentiles)."""
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    observed = {"scaled_tyre_degradation": [], "scaled_gap_ahead": [],
                "scaled_gap_behind": [], "scaled_gap_to_leader": []}
    states = list(_calibration_races(config, n_sims, seed))
    for s in states:
        observed["scaled_tyre_degradation"].append(s.tyre_degradation)
        observed["scaled_gap_ahead"].append(s.gap_ahead)
        observed["scaled_gap_behind"].append(s.gap_behind)
        observed["scaled_gap_to_leader"].append(s.gap_to_leader)

    bounds: dict[str, tuple[float, float, float, float]] = {
        "scaled_position": (1.0, 20.0, 0.0, 1.0),
        "last_lap_to_reference": (0.0, 2.0, 0.0, 2.0),
    }
    for name, values in observed.items():
        lo = float(np.percentile(values, 1))
        hi = float(np.percentile(values, 99))
        if hi - lo < 1e-9:
            hi = lo + 1.0  # degenerate observations; keep the map well defined
        bounds[name] = (lo, hi, *SCALED_SPECS[name])

    profile = ScalingProfile(bounds=bounds, n_calibration_sims=n_sims, calibration_seed=seed)
    profile.baseline = baseline_vector(states, profile).tolist()
    return profile


def baseline_vector(states: list[UnifiedRaceState], profile: ScalingProfile) -> np.ndarray:
    """Reference instance for attributions: per-feature median, modal one-hots."""
    matrix = np.stack([scale(s, profile) for s in states])
    base = np.median(matrix, axis=0)
    for group in ONE_HOT_GROUPS:
        idx = list(FEATURE_GROUPS[group])
        counts = matrix[:, idx].sum(axis=0)
        block = np.zeros(len(idx))
        block[int(np.argmax(counts))] = 1.0
        base[idx] = block
    # availability / validity flags snap to the majority value
    for name in ("soft_available", "medium_available", "hard_available", "valid_finish"):
        i = _index(name)
        base[i] = 1.0 if matrix[:, i].mean() >= 0.5 else 0.0
    return base


def save_profile(profile: ScalingProfile, path: str | Path) -> None:
    payload = {
        "version": 1,
        "bounds": {k: list(v) for k, v in profile.bounds.items()},
        "n_calibration_sims": profile.n_calibration_sims,
        "calibration_seed": profile.calibration_seed,
        "baseline": list(profile.baseline),
        "feature_ordering_hash": feature_ordering_hash(),
    }
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=False))


def load_profile(path: str | Path) -> ScalingProfile:
    payload = yaml.safe_load(Path(path).read_text())
    if payload.get("feature_ordering_hash") != feature_ordering_hash():
        raise ValueError("profile was calibrated for a different feature ordering")
    return ScalingProfile(
        bounds={k: tuple(v) for k, v in payload["bounds"].items()},
        n_calibration_sims=payload["n_calibration_sims"],
        calibration_seed=payload["calibration_seed"],
        baseline=payload["baseline"],
    )
