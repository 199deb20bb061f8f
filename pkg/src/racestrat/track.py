"""Track configuration: per-track simulator parameters, loaded from YAML files.

A bundled directory ships defaults for the 14 supported track ids; any field
can be overridden by loading a user-supplied file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .basetypes import Compound, TRACK_IDS


@dataclass(frozen=True)
class TrackConfig:
    track_id: str
    total_laps: int
    reference_lap_time: float          # seconds, clean lap on fresh soft
    pit_loss: float                    # seconds lost by pitting under green
    pit_loss_sc_factor: float = 0.5    # pit loss multiplier under full safety car
    pit_loss_vsc_factor: float = 0.75  # pit loss multiplier under virtual safety car
    compound_offset: dict[Compound, float] = field(
        default_factory=lambda: {Compound.SOFT: 0.0, Compound.MEDIUM: 0.6, Compound.HARD: 1.2}
    )
    deg_rate: dict[Compound, float] = field(
        default_factory=lambda: {Compound.SOFT: 0.12, Compound.MEDIUM: 0.08, Compound.HARD: 0.05}
    )
    cliff_age: dict[Compound, int] = field(
        default_factory=lambda: {Compound.SOFT: 14, Compound.MEDIUM: 22, Compound.HARD: 32}
    )
    fuel_effect: float = 0.04          # seconds per lap of fuel remaining
    sc_deploy_prob: float = 0.02       # per-lap Bernoulli deployment probability
    sc_duration_mean: float = 3.0      # mean laps (geometric)
    vsc_share: float = 0.4             # probability a deployment is virtual
    sc_pace_factor: float = 1.4
    vsc_pace_factor: float = 1.15
    overtake_threshold: float = 0.5    # s/lap pace advantage needed to pass
    traffic_penalty: float = 0.4       # seconds lost per lap when held up
    lap_noise_sigma: float = 0.25      # per-lap Gaussian noise std dev
    tyre_allocation: dict[Compound, int] = field(
        default_factory=lambda: {Compound.SOFT: 3, Compound.MEDIUM: 3, Compound.HARD: 2}
    )

    def __post_init__(self):
        if self.track_id not in TRACK_IDS:
            raise ValueError(f"unknown track id {self.track_id!r}")
        if self.total_laps < 1:
            raise ValueError("total_laps must be >= 1")
        if self.pit_loss <= 0:
            raise ValueError("pit_loss must be positive")
        if not 0.0 <= self.sc_deploy_prob <= 1.0:
            raise ValueError("sc_deploy_prob must be in [0, 1]")
        off, deg = self.compound_offset, self.deg_rate
        if not (off[Compound.SOFT] <= off[Compound.MEDIUM] <= off[Compound.HARD]):
            raise ValueError("compound offsets must be ordered soft <= medium <= hard")
        if not (deg[Compound.SOFT] >= deg[Compound.MEDIUM] >= deg[Compound.HARD]):
            raise ValueError("degradation rates must be ordered soft >= medium >= hard")
        if any(r < 0 for r in deg.values()):
            raise ValueError("degradation rates must be non-negative")
        if sum(1 for n in self.tyre_allocation.values() if n > 0) < 2:
            raise ValueError("tyre allocation must cover at least 2 compounds")

    def degradation(self, compound: Compound, age: int) -> float:
        """Lap-time loss from tyre wear; the rate doubles past the cliff age."""
        rate = self.deg_rate[compound]
        cliff = self.cliff_age[compound]
        if age <= cliff:
            return rate * age
        return rate * cliff + 2.0 * rate * (age - cliff)

    def replace(self, **changes) -> "TrackConfig":
        return dataclasses.replace(self, **changes)


def _to_mapping(config: TrackConfig) -> dict:
    def by_name(m):
        return {c.value: v for c, v in m.items()}

    raw = dataclasses.asdict(config)
    for key in ("compound_offset", "deg_rate", "cliff_age", "tyre_allocation"):
        raw[key] = by_name(getattr(config, key))
    return raw


def _from_mapping(raw: dict) -> TrackConfig:
    data = dict(raw)
    for key in ("compound_offset", "deg_rate", "cliff_age", "tyre_allocation"):
        if key in data:
            data[key] = {Compound(name): v for name, v in data[key].items()}
    return TrackConfig(**data)


def save_track(config: TrackConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(_to_mapping(config), sort_keys=False))


def load_track_file(path: str | Path) -> TrackConfig:
    with open(path) as fh:
        return _from_mapping(yaml.safe_load(fh))


def load_track(track_id: str) -> TrackConfig:
    """Load the bundled default configuration for one of the supported tracks."""
    if track_id not in TRACK_IDS:
        raise ValueError(f"unknown track id {track_id!r}")
    ref = resources.files("racestrat") / "data" / "tracks" / f"{track_id}.yaml"
    with ref.open() as fh:
        return _from_mapping(yaml.safe_load(fh))


def desk_track(track_id: str = "BHR", total_laps: int = 20) -> TrackConfig:
    """Shortened variant of a bundled track, used for fast desk-scale runs.

    The tyre model is rescaled with the lap count (cliff ages shrink, per-lap
    wear grows by the inverse ratio), so stint lengths, cliff timing and the
    pit-loss trade-off keep the same shape as the full-distance race. Without
    this a short race on full-distance tyres makes never pitting the fastest
    plan, which is not a race the full-length track ever poses.
    """
    full = load_track(track_id)
    ratio = total_laps / full.total_laps
    if ratio >= 1.0:
        return full.replace(total_laps=total_laps)
    return full.replace(
        total_laps=total_laps,
        deg_rate={c: r / ratio for c, r in full.deg_rate.items()},
        cliff_age={c: max(1, round(a * ratio)) for c, a in full.cliff_age.items()},
    )
