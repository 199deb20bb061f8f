"""Shared enums and constants used across the simulator, agent and explainers."""

from __future__ import annotations

from enum import Enum, IntEnum


class Compound(Enum):
    SOFT = "soft"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def short(self) -> str:
        return {"soft": "S", "medium": "M", "hard": "H"}[self.value]

    @classmethod
    def from_short(cls, letter: str) -> "Compound":
        table = {"S": cls.SOFT, "M": cls.MEDIUM, "H": cls.HARD}
        if letter not in table:
            raise ValueError(f"unknown compound letter {letter!r}")
        return table[letter]


COMPOUNDS = (Compound.SOFT, Compound.MEDIUM, Compound.HARD)


class SafetyCarStatus(Enum):
    FULL = "full"
    VIRTUAL = "virtual"
    NONE = "none"


SC_STATUSES = (SafetyCarStatus.FULL, SafetyCarStatus.VIRTUAL, SafetyCarStatus.NONE)


class Action(IntEnum):
    """Per-lap pit decision. Index order is frozen: Q-value heads depend on it."""

    NO_PIT = 0
    PIT_SOFT = 1
    PIT_MEDIUM = 2
    PIT_HARD = 3

    @property
    def compound(self) -> Compound | None:
        if self is Action.NO_PIT:
            return None
        return {
            Action.PIT_SOFT: Compound.SOFT,
            Action.PIT_MEDIUM: Compound.MEDIUM,
            Action.PIT_HARD: Compound.HARD,
        }[self]

    @property
    def short(self) -> str:
        return {0: "np", 1: "ps", 2: "pm", 3: "ph"}[int(self)]


ACTIONS = (Action.NO_PIT, Action.PIT_SOFT, Action.PIT_MEDIUM, Action.PIT_HARD)

# Supported track identifiers; one-hot width of the track block is frozen to this list.
TRACK_IDS = (
    "JPN", "BHR", "AZE", "GBR", "HUN", "ITA", "SGP",
    "QAT", "ABU", "SPN", "SAU", "AUT", "MEX", "USA",
)
