"""Recurrent Q-learning agent: behaviour policy, replay, TD training, evaluation.

The training loop mirrors the classic episodic recipe: epsilon-greedy rollouts
into an episode ring buffer, squared-TD-error updates against a periodically
copied target network, and multiplicative per-episode epsilon decay.
"""

from __future__ import annotations

import io
import json
import zlib
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basetypes import ACTIONS, Action, Compound
from .network import N_ACTIONS, QNetwork, WEIGHT_KEYS
from .state import ScalingProfile, feature_ordering_hash


@dataclass
class TrainingConfig:
    epsilon: float = 1.0
    epsilon_decay: float = 0.999
    min_epsilon: float = 0.005
    gamma: float = 0.99
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    replay_buffer_size: int = 1000       # episodes
    target_update_every: int = 100       # episodes
    episodes: int = 2000
    unroll_length: int | None = None     # None = full-episode unrolls
    batch_size: int = 8                  # episodes per update
    updates_per_episode: int = 1
    hidden_dim: int = 64
    output_scale: float = 1000.0
    max_grad_norm: float | None = 5.0
    mask_invalid: bool = False
    seed: int = 0


@dataclass
class Transition:
    x: np.ndarray
    action: Action
    reward: float
    x_next: np.ndarray
    terminal: bool


@dataclass
class EpisodeRecord:
    transitions: list[Transition]
    finish_position: int
    race_seed: int

    def __post_init__(self):
        terminals = [i for i, t in enumerate(self.transitions) if t.terminal]
        if terminals != [len(self.transitions) - 1]:
            raise ValueError("episode must have exactly one terminal transition, at the end")

    @property
    def total_reward(self) -> float:
        return sum(t.reward for t in self.transitions)


class ReplayBuffer:
    """Ring buffer of completed episodes."""

    def __init__(self, capacity: int):
        self.episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def add(self, episode: EpisodeRecord) -> None:
        self.episodes.append(episode)

    def sample(self, n: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        idx = rng.integers(0, len(self.episodes), size=min(n, len(self.episodes)))
        return [self.episodes[int(i)] for i in idx]

    def __len__(self):
        return len(self.episodes)


def epsilon_at(cfg: TrainingConfig, episode: int) -> float:
    return max(cfg.min_epsilon, cfg.epsilon * cfg.epsilon_decay ** episode)


def select_action(
    q: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    availability: tuple[bool, bool, bool] = (True, True, True),
    mask_invalid: bool = False,
) -> Action:
    """Epsilon-greedy over Q-values; ties broken by lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    candidates = list(range(N_ACTIONS))
    if mask_invalid:
        candidates = [0] + [i + 1 for i, ok in enumerate(availability) if ok]
    if epsilon > 0.0 and rng.uniform() < epsilon:
        return Action(candidates[int(rng.integers(len(candidates)))])
    best = max(candidates, key=lambda a: (q[a], -a))
    return Action(best)


def greedy_action(
    q: np.ndarray, availability: tuple[bool, bool, bool] = (True, True, True)
) -> Action:
    """Greedy choice restricted to actions that are legal right now.

    Deployment never offers a pit for a compound with no fresh set left, so
    the argmax runs over NO_PIT plus the available compounds only.
    """
    candidates = [0] + [i + 1 for i, ok in enumerate(availability) if ok]
    return Action(max(candidates, key=lambda a: (q[a], -a)))


def _episode_segment(ep: EpisodeRecord, unroll: int | None, rng: np.random.Generator):
    if unroll is None or len(ep.transitions) <= unroll:
        return ep.transitions
    start = int(rng.integers(0, len(ep.transitions) - unroll + 1))
    return ep.transitions[start:start + unroll]


def td_update(
    net: QNetwork,
    target_net: QNetwork,
    batch: list[list[Transition]],
    cfg: TrainingConfig,
) -> float:
    """One squared-TD-error gradient step over a batch of episode segments.

    Hidden states start at zero for every segment; returns the pre-step loss.
    """
    if not batch:
        raise ValueError("empty batch")
    grads = net.zero_grads()
    total = sum(len(seg) for seg in batch)
    scale_sq = net.output_scale * net.output_scale
    loss = 0.0
    # segments of equal length run through the vectorised sequence path in one
    # go; the gradient is identical to summing per-segment passes
    by_length: dict[int, list[list[Transition]]] = {}
    for segment in batch:
        by_length.setdefault(len(segment), []).append(segment)
    for segments in by_length.values():
        xs = np.array([[t.x for t in seg] for seg in segments]).swapaxes(0, 1)
        xs_next = np.array([[t.x_next for t in seg] for seg in segments]).swapaxes(0, 1)
        qs, caches = net.forward_sequence_batch(xs)          # (T, B, actions)
        target_qs, _ = target_net.forward_sequence_batch(xs_next)
        actions = np.array([[t.action for t in seg] for seg in segments]).T
        rewards = np.array([[t.reward for t in seg] for seg in segments]).T
        terminal = np.array([[t.terminal for t in seg] for seg in segments]).T
        y = rewards + np.where(terminal, 0.0, cfg.gamma * target_qs.max(axis=2))
        t_idx, b_idx = np.indices(actions.shape)
        err = qs[t_idx, b_idx, actions] - y
        loss += float((err * err).sum())
        dqs = np.zeros_like(qs)
        # descend on loss / output_scale^2 so the step size stays sane
        # regardless of the head's unit convention
        dqs[t_idx, b_idx, actions] = 2.0 * err / (total * scale_sq)
        net.backward_sequence_batch(caches, dqs, grads)
    net.sgd_step(grads, cfg.learning_rate, cfg.weight_decay, cfg.max_grad_norm)
    return loss / total


@dataclass
class TrainingLogRow:
    episode: int
    reward: float
    finish: int
    epsilon: float
    loss: float


def rollout(net: QNetwork, env, epsilon: float, rng: np.random.Generator,
            mask_invalid: bool = False) -> EpisodeRecord:
    """Play one race with the epsilon-greedy policy, recording transitions."""
    x = env.reset()
    hidden = net.zero_hidden()
    transitions = []
    done = False
    while not done:
        q, hidden = net.forward(x, hidden)
        action = select_action(q, epsilon, rng, env.availability(), mask_invalid)
        x_next, r, done, info = env.step(action)
        transitions.append(Transition(x, action, r, x_next, done))
        x = x_next
    return EpisodeRecord(transitions, info["finish_position"], info["race_seed"])


def train(env_factory, cfg: TrainingConfig, log_path: str | Path | None = None,
          seed_profile: ScalingProfile | None = None, verbose: bool = False):
    """Full training run; returns (network, training log rows)."""
    rng = np.random.default_rng(cfg.seed)
    probe_env = env_factory(cfg.seed)
    input_dim = probe_env.reset().shape[0]
    net = QNetwork.init(input_dim, cfg.hidden_dim, seed=cfg.seed,
                        output_scale=cfg.output_scale)
    target = net.copy()
    buffer = ReplayBuffer(cfg.replay_buffer_size)
    log: list[TrainingLogRow] = []

    for episode in range(cfg.episodes):
        eps = epsilon_at(cfg, episode)
        env = env_factory(int(rng.integers(2**31)))
        record = rollout(net, env, eps, rng, cfg.mask_invalid)
        buffer.add(record)

        loss = 0.0
        for _ in range(cfg.updates_per_episode):
            episodes = buffer.sample(cfg.batch_size, rng)
            segments = [_episode_segment(ep, cfg.unroll_length, rng) for ep in episodes]
            loss = td_update(net, target, segments, cfg)

        if (episode + 1) % cfg.target_update_every == 0:
            target = net.copy()

        log.append(TrainingLogRow(episode, record.total_reward,
                                  record.finish_position, eps, loss))
        if verbose and (episode + 1) % 100 == 0:
            recent = log[-100:]
            print(f"episode {episode + 1}: mean reward "
                  f"{np.mean([r.reward for r in recent]):.1f} "
                  f"mean finish {np.mean([r.finish for r in recent]):.2f} "
                  f"epsilon {eps:.3f}")

    if log_path is not None:
        write_training_log(log, log_path)
    return net, log


def write_training_log(log: list[TrainingLogRow], path: str | Path) -> None:
    lines = ["episode,reward,finish,epsilon,loss"]
    lines += [f"{r.episode},{r.reward},{r.finish},{r.epsilon},{r.loss}" for r in log]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class EvalMetrics:
    mean_finish: float
    median_finish: float
    std_finish: float
    finish_distribution: dict[int, int]
    strategy_histogram: dict[str, int]
    failure_rate: float
    mean_pit_count: float
    n_races: int


def greedy_rollout(net: QNetwork, env) -> tuple[EpisodeRecord, dict]:
    """Deterministic greedy episode; returns the record and env info."""
    x = env.reset()
    hidden = net.zero_hidden()
    transitions = []
    done = False
    info: dict = {}
    while not done:
        q, hidden = net.forward(x, hidden)
        action = greedy_action(q, env.availability())
        x_next, r, done, info = env.step(action)
        transitions.append(Transition(x, action, r, x_next, done))
        x = x_next
    return EpisodeRecord(transitions, info["finish_position"], info["race_seed"]), info


def evaluate(net: QNetwork, env_factory, n_races: int, seed: int) -> EvalMetrics:
    """Pure-greedy evaluation over deterministically derived per-race seeds."""
    if n_races < 1:
        raise ValueError("n_races must be >= 1")
    finishes, strategies, failures, pits = [], Counter(), 0, []
    for i in range(n_races):
        env = env_factory(derive_seed(seed, i))
        record, info = greedy_rollout(net, env)
        finishes.append(record.finish_position)
        pits.append(info.get("pit_count", 0))
        if record.total_reward <= -1000:
            failures += 1
        else:
            strategies[info.get("strategy", "?")] += 1
    arr = np.asarray(finishes, dtype=float)
    return EvalMetrics(
        mean_finish=float(arr.mean()),
        median_finish=float(np.median(arr)),
        std_finish=float(arr.std()),
        finish_distribution=dict(sorted(Counter(finishes).items())),
        strategy_histogram=dict(strategies.most_common()),
        failure_rate=failures / n_races,
        mean_pit_count=float(np.mean(pits)),
        n_races=n_races,
    )


def derive_seed(master: int, index: int) -> int:
    return zlib.crc32(f"{master}:{index}".encode()) & 0x7FFFFFFF


# ---- checkpoints ----
# A checkpoint is a single .npz archive: one array per network weight (keys as
# in WEIGHT_KEYS), plus a uint8 array "meta" holding a JSON document with the
# schema version, training config, feature ordering hash and scaling profile.

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, net: QNetwork, cfg: TrainingConfig,
                    profile: ScalingProfile, extra: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "input_dim": net.input_dim,
        "hidden_dim": net.hidden_dim,
        "output_scale": net.output_scale,
        "feature_ordering_hash": feature_ordering_hash(),
        "training_config": asdict(cfg),
        "scaling_profile": {
            "bounds": {k: list(v) for k, v in profile.bounds.items()},
            "n_calibration_sims": profile.n_calibration_sims,
            "calibration_seed": profile.calibration_seed,
            "baseline": list(profile.baseline),
        },
        "extra": extra or {},
    }
    meta_bytes = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    arrays = {k: net.params[k] for k in WEIGHT_KEYS}
    with open(path, "wb") as fh:
        np.savez(fh, meta=meta_bytes, **arrays)


def load_checkpoint(path: str | Path):
    """Returns (net, cfg, profile, extra)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        if meta["feature_ordering_hash"] != feature_ordering_hash():
            raise ValueError("checkpoint was trained with a different feature ordering")
        params = {k: data[k].copy() for k in WEIGHT_KEYS}
    net = QNetwork(meta["input_dim"], meta["hidden_dim"], params,
                   meta.get("output_scale", 1.0))
    cfg = TrainingConfig(**meta["training_config"])
    prof = meta["scaling_profile"]
    profile = ScalingProfile(
        bounds={k: tuple(v) for k, v in prof["bounds"].items()},
        n_calibration_sims=prof["n_calibration_sims"],
        calibration_seed=prof["calibration_seed"],
        baseline=prof["baseline"],
    )
    return net, cfg, profile, meta.get("extra", {})
