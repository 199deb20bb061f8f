"""Per-lap reward: piecewise over pit validity, finish validity and position.

Cases are evaluated strictly in order, first match wins. Availability and the
already-valid flag are read from the state in which the action was chosen;
terminal status and finishing position from the resulting state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .basetypes import Action
from .state import UnifiedRaceState


@dataclass(frozen=True)
class RewardSpec:
    points: tuple[int, ...] = (25, 18, 15, 12, 10, 8, 6, 4, 2, 1)
    terminal_multiplier: int = 100
    step_reward: float = 1.0
    extraneous_pit_penalty: float = -10.0
    failure_penalty: float = -1000.0


DEFAULT_REWARD = RewardSpec()


def reward(
    prev: UnifiedRaceState,
    action: Action,
    next_state: UnifiedRaceState,
    spec: RewardSpec = DEFAULT_REWARD,
) -> float:
    target = action.compound
    if target is not None and not prev.available(target):
        return spec.failure_penalty
    if next_state.terminal and not next_state.valid_finish:
        return spec.failure_penalty
    if action is not Action.NO_PIT and prev.valid_finish:
        return spec.extraneous_pit_penalty
    if next_state.terminal and next_state.position <= 10:
        return float(spec.terminal_multiplier * spec.points[next_state.position - 1])
    if next_state.terminal and next_state.position > 10:
        return 0.0
    return spec.step_reward
