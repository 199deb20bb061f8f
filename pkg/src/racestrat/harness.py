"""Evaluation harness: paired-seed comparisons, generalisability, calibration.

Every model in a comparison sees the same derived seed sequence, and opponent
randomness comes from a stream keyed by the race seed alone, so differences in
aggregate results are attributable to the controlled car's policy and nothing
else.
"""

from __future__ import annotations

import csv
import warnings
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import QNetwork, derive_seed, greedy_action
from .baselines import (FixedStrategyDriver, HeuristicParams, StrategyPlan,
                        heuristic_policy, parse_strategy)
from .basetypes import Action, Compound, COMPOUNDS
from .env import RaceEnv
from .state import ScalingProfile
from .track import TrackConfig

# ---- policies ----


class NetPolicy:
    """Greedy policy of a trained Q-network (recurrent state kept per race)."""

    def __init__(self, net: QNetwork):
        self.net = net
        self.hidden = net.zero_hidden()

    def start(self, env: RaceEnv) -> None:
        self.hidden = self.net.zero_hidden()

    def act(self, x: np.ndarray, env: RaceEnv) -> Action:
        q, self.hidden = self.net.forward(x, self.hidden)
        return greedy_action(q, env.availability())


class RandomPolicy:
    """Uniform random actions, seeded from the race seed and model name."""

    def __init__(self, name: str = "random"):
        self.name = name
        self.rng = np.random.default_rng(0)

    def start(self, env: RaceEnv) -> None:
        key = np.random.SeedSequence([env.seed, zlib.crc32(self.name.encode())])
        self.rng = np.random.default_rng(key)

    def act(self, x: np.ndarray, env: RaceEnv) -> Action:
        return Action(int(self.rng.integers(len(Action))))


class FixedPlanPolicy:
    """Follows one strategy plan, drawing pit laps per race."""

    def __init__(self, plan: StrategyPlan | str):
        self.plan = parse_strategy(plan) if isinstance(plan, str) else plan
        self.start_compound = self.plan.stints[0].compound
        self.driver: FixedStrategyDriver | None = None

    def start(self, env: RaceEnv) -> None:
        rng = np.random.default_rng(np.random.SeedSequence([env.seed, 777001]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.driver = FixedStrategyDriver(self.plan, rng, env.config.total_laps)

    def act(self, x: np.ndarray, env: RaceEnv) -> Action:
        action = self.driver.action_for_lap(env.sim.lap + 1)
        if action != Action.NO_PIT and not env.prev_state.available(action.compound):
            return Action.NO_PIT
        return action


class HeuristicPolicy:
    def __init__(self, params: HeuristicParams | None = None):
        self.params = params or HeuristicParams()

    def start(self, env: RaceEnv) -> None:
        pass

    def act(self, x: np.ndarray, env: RaceEnv) -> Action:
        return heuristic_policy(env.prev_state, self.params)


# ---- comparison plumbing ----


@dataclass(frozen=True)
class ComparisonSpec:
    models: tuple[tuple[str, object], ...]      # (name, policy factory () -> policy)
    tracks: tuple[str, ...]
    configs: dict[str, TrackConfig]
    pools: dict[str, list[StrategyPlan]]
    profile: ScalingProfile
    n_races: int = 500
    master_seed: int = 0
    controlled_delta: float = 0.0
    n_cars: int = 10

    def __post_init__(self):
        if self.n_races < 1:
            raise ValueError("n_races must be >= 1")
        if not self.models:
            raise ValueError("need at least one model")


@dataclass
class RaceRecord:
    model: str
    track: str
    seed: int
    finish: int
    total_reward: float
    pit_count: int
    strategy: str
    failed: bool
    pit_events: list[tuple[int, str]] = field(default_factory=list)
    start_compound: str = "S"
    total_laps: int = 0


@dataclass
class CellStats:
    mean_finish: float
    std_finish: float
    median_finish: float
    finish_distribution: dict[int, int]
    failure_rate: float
    mean_pit_count: float
    n: int
    seen: bool | None = None


@dataclass
class ResultsTable:
    cells: dict[tuple[str, str], CellStats]
    records: list[RaceRecord]

    def cell(self, model: str, track: str) -> CellStats:
        return self.cells[(model, track)]


def _aggregate(records: list[RaceRecord]) -> CellStats:
    finishes = np.array([r.finish for r in records], dtype=float)
    return CellStats(
        mean_finish=float(finishes.mean()),
        std_finish=float(finishes.std()),
        median_finish=float(np.median(finishes)),
        finish_distribution=dict(sorted(Counter(int(f) for f in finishes).items())),
        failure_rate=sum(r.failed for r in records) / len(records),
        mean_pit_count=float(np.mean([r.pit_count for r in records])),
        n=len(records),
    )


def _run_one(name: str, policy, track: str, spec: ComparisonSpec, seed: int) -> RaceRecord:
    config = spec.configs[track]
    env = RaceEnv(
        config,
        spec.profile,
        seed,
        opponent_pool=spec.pools[track],
        n_cars=spec.n_cars,
        controlled_delta=spec.controlled_delta,
        start_compound=getattr(policy, "start_compound", None),
        model_key=name,
    )
    x = env.reset()
    policy.start(env)
    done, info, total = False, {}, 0.0
    while not done:
        x, r, done, info = env.step(policy.act(x, env))
        total += r
    return RaceRecord(
        model=name,
        track=track,
        seed=seed,
        finish=info["finish_position"],
        total_reward=total,
        pit_count=info["pit_count"],
        strategy=info["strategy"],
        failed=info["failed"],
        pit_events=[(lap, c.short) for lap, c in env.pit_events],
        start_compound=env.start_used.short,
        total_laps=config.total_laps,
    )


def run_comparison(spec: ComparisonSpec) -> ResultsTable:
    """Paired-seed evaluation of every model over every track."""
    records: list[RaceRecord] = []
    cells: dict[tuple[str, str], CellStats] = {}
    for name, factory in spec.models:
        for track in spec.tracks:
            batch = []
            for i in range(spec.n_races):
                seed = derive_seed(spec.master_seed, i)
                batch.append(_run_one(name, factory(), track, spec, seed))
            cells[(name, track)] = _aggregate(batch)
            records.extend(batch)
    return ResultsTable(cells=cells, records=records)


def generalisability_matrix(
    models: dict[str, tuple[object, set[str]]],    # name -> (factory, training tracks)
    spec: ComparisonSpec,
) -> tuple[ResultsTable, dict[str, dict[str, float | None]]]:
    """Per-track means plus seen/unseen averages for each model."""
    table = run_comparison(ComparisonSpec(
        models=tuple((name, factory) for name, (factory, _) in models.items()),
        tracks=spec.tracks,
        configs=spec.configs,
        pools=spec.pools,
        profile=spec.profile,
        n_races=spec.n_races,
        master_seed=spec.master_seed,
        controlled_delta=spec.controlled_delta,
        n_cars=spec.n_cars,
    ))
    summary: dict[str, dict[str, float | None]] = {}
    for name, (_, trained_on) in models.items():
        for track in spec.tracks:
            table.cells[(name, track)].seen = track in trained_on
        seen = [table.cells[(name, t)].mean_finish for t in spec.tracks if t in trained_on]
        unseen = [table.cells[(name, t)].mean_finish for t in spec.tracks if t not in trained_on]
        summary[name] = {
            "seen_mean": float(np.mean(seen)) if seen else None,
            "unseen_mean": float(np.mean(unseen)) if unseen else None,
        }
    return table, summary


# ---- strategy summaries ----


@dataclass
class StrategySummary:
    modal_sequence: str                 # compounds only, e.g. "SM"
    rendered: str                       # with observed pit windows, e.g. "S[10,20]M"
    n_races: int
    n_failed: int
    flags: list[str] = field(default_factory=list)


def _render_windows(sequence: str, windows: list[tuple[int, int]]) -> str:
    parts = [sequence[0]]
    for compound, (lo, hi) in zip(sequence[1:], windows):
        parts.append(f"[{lo}]" if lo == hi else f"[{lo},{hi}]")
        parts.append(compound)
    return "".join(parts)


_HARDNESS = {c.short: i for i, c in enumerate(COMPOUNDS)}  # S < M < H


def strategy_summary(records: list[RaceRecord]) -> StrategySummary:
    """Modal compound sequence with observed pit windows and sanity flags."""
    clean = [r for r in records if not r.failed]
    if not clean:
        return StrategySummary("", "", len(records), len(records),
                               flags=["no successful races"])
    sequences = Counter(
        r.start_compound + "".join(c for _, c in r.pit_events) for r in clean
    )
    modal, _ = max(sequences.items(), key=lambda kv: (kv[1], kv[0]))
    matching = [r for r in clean
                if r.start_compound + "".join(c for _, c in r.pit_events) == modal]
    n_stops = len(modal) - 1
    windows = []
    for stop in range(n_stops):
        laps = [r.pit_events[stop][0] for r in matching]
        windows.append((min(laps), max(laps)))

    flags = []
    if not 1 <= n_stops <= 3:
        flags.append(f"{n_stops} stops outside the reasonable 1-3 range")
    # mean stint length per compound, softest to hardest, from the modal races
    lengths: dict[str, list[int]] = {}
    for r in matching:
        boundaries = [0] + [lap for lap, _ in r.pit_events] + [r.total_laps]
        for i, compound in enumerate(modal):
            lengths.setdefault(compound, []).append(boundaries[i + 1] - boundaries[i])
    means = {c: float(np.mean(v)) for c, v in lengths.items()}
    for a in means:
        for b in means:
            if _HARDNESS[a] < _HARDNESS[b] and means[a] > means[b]:
                flags.append(f"softer compound {a} ran longer than {b} "
                             f"({means[a]:.1f} vs {means[b]:.1f} laps)")
    return StrategySummary(
        modal_sequence=modal,
        rendered=_render_windows(modal, windows),
        n_races=len(records),
        n_failed=len(records) - len(clean),
        flags=flags,
    )


# ---- pace calibration ----


def _mean_finish_at(delta: float, spec: ComparisonSpec, plan: StrategyPlan,
                    track: str, n_races: int) -> float:
    probe = ComparisonSpec(
        models=(("calibration", lambda: FixedPlanPolicy(plan)),),
        tracks=(track,),
        configs=spec.configs,
        pools=spec.pools,
        profile=spec.profile,
        n_races=n_races,
        master_seed=spec.master_seed,
        controlled_delta=delta,
        n_cars=spec.n_cars,
    )
    return run_comparison(probe).cell("calibration", track).mean_finish


def calibrate_pace(
    spec: ComparisonSpec,
    plan: StrategyPlan | str,
    track: str | None = None,
    target: float = 5.5,
    tolerance: float = 0.15,
    n_races: int = 500,
    lo: float = -3.0,
    hi: float = 3.0,
    max_iter: int = 24,
) -> tuple[float, float]:
    """Bisect pace_delta until the fixed baseline's mean finish hits target.

    Mean finish is monotonically non-decreasing in pace_delta (slower cars
    finish worse), which is what makes bisection applicable.
    """
    plan = parse_strategy(plan) if isinstance(plan, str) else plan
    track = track if track is not None else spec.tracks[0]
    f_lo = _mean_finish_at(lo, spec, plan, track, n_races)
    f_hi = _mean_finish_at(hi, spec, plan, track, n_races)
    if target <= f_lo:
        warnings.warn(f"target {target} at or below fastest bound (mean {f_lo:.2f}); "
                      "returning the bound", UserWarning, stacklevel=2)
        return lo, f_lo
    if target >= f_hi:
        warnings.warn(f"target {target} at or above slowest bound (mean {f_hi:.2f}); "
                      "returning the bound", UserWarning, stacklevel=2)
        return hi, f_hi
    mid, f_mid = lo, f_lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = _mean_finish_at(mid, spec, plan, track, n_races)
        if abs(f_mid - target) <= tolerance:
            return mid, f_mid
        if f_mid < target:
            lo = mid
        else:
            hi = mid
    return mid, f_mid


# ---- report emission ----

RACE_CSV_COLUMNS = ("model", "track", "seed", "finish", "total_reward",
                    "pit_count", "strategy", "failed")


def write_race_csv(records: list[RaceRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RACE_CSV_COLUMNS)
        for r in records:
            writer.writerow([r.model, r.track, r.seed, r.finish, r.total_reward,
                             r.pit_count, r.strategy, int(r.failed)])


def write_aggregate_csv(table: ResultsTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "track", "n", "mean_finish", "std_finish",
                         "median_finish", "failure_rate", "mean_pit_count", "seen"])
        for (model, track), c in sorted(table.cells.items()):
            writer.writerow([model, track, c.n, f"{c.mean_finish:.4f}",
                             f"{c.std_finish:.4f}", f"{c.median_finish:.1f}",
                             f"{c.failure_rate:.4f}", f"{c.mean_pit_count:.4f}",
                             "" if c.seen is None else int(c.seen)])


def write_matrix_csv(table: ResultsTable,
                     summary: dict[str, dict[str, float | None]],
                     tracks: tuple[str, ...], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", *tracks, "seen_mean", "unseen_mean"])
        for model, sums in summary.items():
            row = [model]
            row += [f"{table.cells[(model, t)].mean_finish:.3f}" for t in tracks]
            for key in ("seen_mean", "unseen_mean"):
                v = sums[key]
                row.append("" if v is None else f"{v:.3f}")
            writer.writerow(row)


def write_distribution_csv(table: ResultsTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "track", "finish", "count"])
        for (model, track), c in sorted(table.cells.items()):
            for finish, count in c.finish_distribution.items():
                writer.writerow([model, track, finish, count])
