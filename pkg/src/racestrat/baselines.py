"""Non-learning comparison policies.

Fixed strategies are written in a compact notation: "S[10,20]M" is a
soft-medium plan whose single stop happens on a lap drawn from [10, 20];
"M[3]S[44]H[46]M" pits at exactly laps 3, 44 and 46. The heuristic policy is
a documented rule-based stand-in for an industry pit wall: it watches tyre
degradation and jumps at cheap stops under safety cars.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .basetypes import Action, Compound
from .state import UnifiedRaceState

_TOKEN = re.compile(r"([SMH])|\[\s*(\d+)\s*(?:,\s*(\d+)\s*)?\]")


@dataclass(frozen=True)
class Stint:
    compound: Compound
    pit_window: tuple[int, int] | None  # inclusive lap interval; None for the final stint


@dataclass(frozen=True)
class StrategyPlan:
    stints: tuple[Stint, ...]

    def __post_init__(self):
        if len(self.stints) < 2:
            raise ValueError("a plan needs at least one pit stop (two stints)")
        prev_hi = 0
        for stint in self.stints[:-1]:
            if stint.pit_window is None:
                raise ValueError("only the final stint may lack a pit window")
            lo, hi = stint.pit_window
            if lo > hi:
                raise ValueError(f"inverted pit window [{lo}, {hi}]")
            if lo <= prev_hi:
                raise ValueError("pit windows must be strictly increasing")
            prev_hi = hi
        if self.stints[-1].pit_window is not None:
            raise ValueError("final stint must not have a pit window")
        if len({s.compound for s in self.stints}) < 2:
            raise ValueError("plan must use at least two distinct compounds")

    @property
    def n_stops(self) -> int:
        return len(self.stints) - 1


def parse_strategy(text: str) -> StrategyPlan:
    if not text or not text.strip():
        raise ValueError("empty strategy string")
    pos, compounds, windows = 0, [], []
    text = text.strip()
    expect_compound = True
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ValueError(f"malformed strategy near {text[pos:]!r}")
        if m.group(1):
            if not expect_compound:
                raise ValueError(f"expected pit window before {m.group(1)!r}")
            compounds.append(Compound.from_short(m.group(1)))
            expect_compound = False
        else:
            if expect_compound:
                raise ValueError("pit window without a preceding compound")
            lo = int(m.group(2))
            hi = int(m.group(3)) if m.group(3) is not None else lo
            windows.append((lo, hi))
            expect_compound = True
        pos = m.end()
    if expect_compound or len(compounds) != len(windows) + 1:
        raise ValueError(f"incomplete strategy {text!r}")
    stints = tuple(
        Stint(c, windows[i] if i < len(windows) else None)
        for i, c in enumerate(compounds)
    )
    return StrategyPlan(stints)


def format_strategy(plan: StrategyPlan) -> str:
    parts = []
    for stint in plan.stints:
        parts.append(stint.compound.short)
        if stint.pit_window is not None:
            lo, hi = stint.pit_window
            parts.append(f"[{lo}]" if lo == hi else f"[{lo},{hi}]")
    return "".join(parts)


def scale_plan(plan: StrategyPlan, from_laps: int, to_laps: int) -> StrategyPlan:
    """Rescale pit windows proportionally, e.g. for shortened desk races."""
    def scale_lap(lap: int) -> int:
        return max(1, min(to_laps - 1, round(lap * to_laps / from_laps)))

    stints = []
    prev_hi = 0
    for stint in plan.stints:
        if stint.pit_window is None:
            stints.append(stint)
            continue
        lo, hi = (scale_lap(l) for l in stint.pit_window)
        lo = max(lo, prev_hi + 1)
        hi = max(hi, lo)
        prev_hi = hi
        stints.append(Stint(stint.compound, (lo, hi)))
    return StrategyPlan(tuple(stints))


class FixedStrategyDriver:
    """Executes a plan: pit laps drawn uniformly within each window at start."""

    def __init__(self, plan: StrategyPlan, rng: np.random.Generator, total_laps: int):
        self.plan = plan
        self.pit_laps: dict[int, Compound] = {}
        for i, stint in enumerate(plan.stints[:-1]):
            lo, hi = stint.pit_window
            if hi >= total_laps:
                warnings.warn(
                    f"pit window [{lo},{hi}] extends past lap {total_laps}; clamped"
                )
                hi = total_laps - 1
                lo = min(lo, hi)
            lap = int(rng.integers(lo, hi + 1))
            self.pit_laps[lap] = plan.stints[i + 1].compound

    def action_for_lap(self, lap: int) -> Action:
        """Action for the 1-based lap about to be run; pit executes at its end."""
        target = self.pit_laps.get(lap)
        if target is None:
            return Action.NO_PIT
        return {
            Compound.SOFT: Action.PIT_SOFT,
            Compound.MEDIUM: Action.PIT_MEDIUM,
            Compound.HARD: Action.PIT_HARD,
        }[target]


def fixed_policy(plan: StrategyPlan, rng: np.random.Generator, total_laps: int) -> FixedStrategyDriver:
    return FixedStrategyDriver(plan, rng, total_laps)


@dataclass(frozen=True)
class HeuristicParams:
    deg_pit_threshold: float = 1.2       # s/lap of degradation that forces a stop
    earliest_pit_fraction: float = 0.15
    latest_pit_fraction: float = 0.85
    sc_opportunism: bool = True
    target_stint_fraction: dict[Compound, float] = field(
        default_factory=lambda: {Compound.SOFT: 0.30, Compound.MEDIUM: 0.45, Compound.HARD: 0.65}
    )

    def __post_init__(self):
        if self.deg_pit_threshold <= 0:
            raise ValueError("deg_pit_threshold must be positive")
        for f in (self.earliest_pit_fraction, self.latest_pit_fraction):
            if not 0.0 < f < 1.0:
                raise ValueError("pit-lap fractions must be in (0, 1)")


def _preferred_compound(state: UnifiedRaceState, params: HeuristicParams) -> Compound | None:
    """Hardest available compound whose target stint covers the remaining race."""
    remaining = 1.0 - state.race_progress
    order = [Compound.HARD, Compound.MEDIUM, Compound.SOFT]
    fitting = [
        c for c in order
        if state.available(c) and params.target_stint_fraction[c] >= remaining - 1e-9
    ]
    for c in fitting[::-1]:  # softest among those that reach the end
        if c is not state.current_tyre or state.available(c):
            return c
    for c in order:  # nothing reaches the end: take the hardest available
        if state.available(c):
            return c
    return None


def heuristic_policy(state: UnifiedRaceState, params: HeuristicParams | None = None) -> Action:
    """Rule-based pit wall: never requests an unavailable compound."""
    params = params or HeuristicParams()
    if state.terminal:
        return Action.NO_PIT
    in_window = params.earliest_pit_fraction <= state.race_progress <= params.latest_pit_fraction
    stop_pending = not state.valid_finish

    want_stop = False
    if in_window and state.tyre_degradation >= params.deg_pit_threshold:
        want_stop = True
    if (
        params.sc_opportunism
        and state.safety_car.value != "none"
        and in_window
        and stop_pending
        and (not state.valid_finish or state.tyre_degradation >= params.deg_pit_threshold / 2)
    ):
        want_stop = True
    # forced: last chance to satisfy the two-compound rule
    if stop_pending and state.race_progress >= params.latest_pit_fraction:
        want_stop = True
    if not want_stop:
        return Action.NO_PIT
    target = _preferred_compound(state, params)
    if target is None:
        return Action.NO_PIT
    # an extra stop onto the same compound achieves nothing
    if target is state.current_tyre and state.valid_finish:
        return Action.NO_PIT
    if target is state.current_tyre and stop_pending:
        # must switch compounds: pick any other available one
        for c in (Compound.HARD, Compound.MEDIUM, Compound.SOFT):
            if c is not state.current_tyre and state.available(c):
                target = c
                break
        else:
            return Action.NO_PIT
    return {
        Compound.SOFT: Action.PIT_SOFT,
        Compound.MEDIUM: Action.PIT_MEDIUM,
        Compound.HARD: Action.PIT_HARD,
    }[target]


def load_strategy_pool(track_id: str) -> list[StrategyPlan]:
    """Bundled per-track candidate plans, one strategy string per line."""
    ref = resources.files("racestrat") / "data" / "strategies" / f"{track_id}.txt"
    return parse_pool_text(ref.read_text())


def parse_pool_text(text: str) -> list[StrategyPlan]:
    plans = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            plans.append(parse_strategy(line))
    if not plans:
        raise ValueError("strategy pool is empty")
    return plans


def load_pool_file(path: str | Path) -> list[StrategyPlan]:
    return parse_pool_text(Path(path).read_text())
