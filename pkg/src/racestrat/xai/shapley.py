"""Per-timestep Shapley attributions for the recurrent Q-network.

The value function perturbs features of the current timestep only: the hidden
state is replayed over the untouched prefix, then coalition members take their
true values while everything else drops to the baseline instance. Group counts
at or below EXACT_LIMIT use exact enumeration over all coalitions; larger
groupings fall back to permutation sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import factorial

import numpy as np

from ..network import QNetwork
from ..state import COARSE_GROUPS

EXACT_LIMIT = 12


@dataclass
class Attribution:
    values: dict[str, float]
    base_value: float
    explained_output: float
    chosen_action: int
    method: str                      # "exact" or "sampling"
    n_samples: int = 0
    timestep: int = 0

    @property
    def reconstruction(self) -> float:
        return self.base_value + sum(self.values.values())

    @property
    def reconstruction_error(self) -> float:
        return abs(self.reconstruction - self.explained_output)


def _replay_hidden(net: QNetwork, prefix, t: int) -> np.ndarray:
    h = net.zero_hidden()
    for i in range(t):
        _, h = net.forward(prefix[i], h)
    return h


def attribute(
    net: QNetwork,
    prefix,
    t: int,
    baseline: np.ndarray,
    budget: int = 2000,
    groups: dict[str, tuple[int, ...]] | None = None,
    rng: np.random.Generator | None = None,
) -> Attribution:
    """Shapley values of feature groups for the greedy action's Q at step t."""
    if not 0 <= t < len(prefix):
        raise IndexError(f"timestep {t} outside prefix of length {len(prefix)}")
    groups = dict(groups) if groups is not None else dict(COARSE_GROUPS)
    names = list(groups)
    x = np.asarray(prefix[t], dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    h_prev = _replay_hidden(net, prefix, t)

    q_full, _ = net.forward(x, h_prev)
    chosen = int(max(range(len(q_full)), key=lambda a: (q_full[a], -a)))

    cache: dict[int, float] = {}

    def value(mask: int) -> float:
        if mask not in cache:
            xs = baseline.copy()
            for bit, name in enumerate(names):
                if mask >> bit & 1:
                    idx = list(groups[name])
                    xs[idx] = x[idx]
            q, _ = net.forward(xs, h_prev)
            cache[mask] = float(q[chosen])
        return cache[mask]

    n = len(names)
    full = (1 << n) - 1
    phi = dict.fromkeys(names, 0.0)

    if n <= EXACT_LIMIT:
        method, n_samples = "exact", 1 << n
        # phi_i = sum over coalitions S without i of w(|S|)·(v(S+i) − v(S))
        weights = [factorial(s) * factorial(n - s - 1) / factorial(n) for s in range(n)]
        for bit, name in enumerate(names):
            others = [b for b in range(n) if b != bit]
            for size in range(n):
                w = weights[size]
                for combo in combinations(others, size):
                    mask = 0
                    for b in combo:
                        mask |= 1 << b
                    phi[name] += w * (value(mask | 1 << bit) - value(mask))
    else:
        method, n_samples = "sampling", budget
        rng = rng if rng is not None else np.random.default_rng(0)
        for _ in range(budget):
            order = rng.permutation(n)
            mask = 0
            prev = value(0)
            for b in order:
                mask |= 1 << int(b)
                cur = value(mask)
                phi[names[int(b)]] += (cur - prev) / budget
                prev = cur

    return Attribution(
        values=phi,
        base_value=value(0),
        explained_output=value(full),
        chosen_action=chosen,
        method=method,
        n_samples=n_samples,
        timestep=t,
    )


@dataclass
class FidelitySummary:
    mae: float
    normalised_mae: float
    n_timesteps: int
    budget: int
    method: str
    errors: list[float] = field(default_factory=list)


MAX_REWARD = 2500.0


def attribution_fidelity(
    net: QNetwork,
    env_factory,
    baseline: np.ndarray,
    n_timesteps: int = 100,
    n_sims: int = 10,
    budget: int = 2000,
    groups: dict[str, tuple[int, ...]] | None = None,
    seed: int = 0,
) -> FidelitySummary:
    """Mean absolute efficiency-reconstruction error over sampled timesteps."""
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n_sims):
        env = env_factory(int(rng.integers(2**31)))
        x = env.reset()
        h = net.zero_hidden()
        xs, done = [x], False
        while not done:
            q, h = net.forward(x, h)
            a = int(max(range(len(q)), key=lambda k: (q[k], -k)))
            x, _, done, _ = env.step(a)
            xs.append(x)
        episodes.append(xs)

    errors = []
    method = "exact"
    for _ in range(n_timesteps):
        ep = episodes[int(rng.integers(len(episodes)))]
        t = int(rng.integers(len(ep)))
        att = attribute(net, ep, t, baseline, budget=budget, groups=groups, rng=rng)
        method = att.method
        errors.append(att.reconstruction_error)
    mae = float(np.mean(errors))
    return FidelitySummary(
        mae=mae,
        normalised_mae=mae / MAX_REWARD,
        n_timesteps=n_timesteps,
        budget=budget,
        method=method,
        errors=errors,
    )
