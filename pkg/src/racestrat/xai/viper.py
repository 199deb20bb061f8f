"""Decision-tree distillation of the recurrent oracle (DAGGER with Q-gap weights).

Each iteration rolls out the current student tree (the oracle itself on
iteration 0), labels every visited state with the oracle's greedy action, and
aggregates. Training resamples the aggregate proportionally to the oracle's
Q-gap at each state, so laps where the action choice actually matters dominate
the fit. The tree with the best held-out fidelity across iterations wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..agent import greedy_action
from ..basetypes import ACTIONS, Action
from ..network import N_ACTIONS, QNetwork
from .cart import DecisionTreePolicy, fit_cart


def _availability(env) -> tuple[bool, bool, bool]:
    fn = getattr(env, "availability", None)
    return fn() if fn is not None else (True, True, True)


def _collect_episode(oracle: QNetwork, env, policy) -> tuple[list, list, list]:
    """Roll `policy` (callable x, q, env -> action) while tracking the oracle.

    Returns per-lap feature vectors, oracle labels and Q-gap weights. Labels
    are the oracle's greedy choice over the actions legal in that state, the
    same rule the deployed policy follows.
    """
    x = env.reset()
    h = oracle.zero_hidden()
    xs, labels, gaps = [], [], []
    done = False
    while not done:
        q, h = oracle.forward(x, h)
        xs.append(x)
        labels.append(int(greedy_action(q, _availability(env))))
        gaps.append(float(np.max(q) - np.min(q)))
        x, _, done, _ = env.step(policy(x, q, env))
    return xs, labels, gaps


def _fidelity(tree: DecisionTreePolicy, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.mean(tree.predict_batch(X) == y))


@dataclass
class DistillLogRow:
    iteration: int
    dataset_size: int
    train_fidelity: float
    heldout_fidelity: float
    n_leaves: int


def viper_distill(
    oracle: QNetwork,
    env_factory,
    iterations: int = 25,
    samples_per_iter: int = 10,
    max_depth: int = 5,
    heldout_episodes: int = 20,
    seed: int = 0,
) -> tuple[DecisionTreePolicy, list[DistillLogRow]]:
    """Distil the oracle into a decision tree; returns (best tree, log)."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)

    # Held-out oracle trajectories, never used for fitting.
    held_X, held_y = [], []
    for _ in range(heldout_episodes):
        env = env_factory(int(rng.integers(2**31)))
        xs, labels, _ = _collect_episode(
            oracle, env, lambda x, q, env: greedy_action(q, _availability(env)))
        held_X.extend(xs)
        held_y.extend(labels)
    held_X, held_y = np.array(held_X), np.array(held_y)

    data_X: list = []
    data_y: list = []
    data_w: list = []
    best_tree, best_fid, log = None, -1.0, []
    tree: DecisionTreePolicy | None = None

    for it in range(iterations):
        if tree is None:
            # iteration 0: oracle drives
            policy = lambda x, q, env: greedy_action(q, _availability(env))
        else:
            # student drives, oracle labels
            policy = lambda x, q, env, t=tree: t.predict(x)
        for _ in range(samples_per_iter):
            env = env_factory(int(rng.integers(2**31)))
            xs, labels, gaps = _collect_episode(oracle, env, policy)
            data_X.extend(xs)
            data_y.extend(labels)
            data_w.extend(gaps)

        X = np.array(data_X)
        y = np.array(data_y)
        w = np.array(data_w)
        probs = w / w.sum() if w.sum() > 0 else np.full(len(w), 1.0 / len(w))
        idx = rng.choice(len(y), size=len(y), replace=True, p=probs)
        tree = fit_cart(X[idx], y[idx], max_depth=max_depth,
                        metadata={"iteration": it, "dataset_size": len(y)})
        fid = _fidelity(tree, held_X, held_y)
        log.append(DistillLogRow(
            iteration=it,
            dataset_size=len(y),
            train_fidelity=_fidelity(tree, X, y),
            heldout_fidelity=fid,
            n_leaves=tree.n_leaves(),
        ))
        if fid > best_fid:
            best_tree, best_fid = tree, fid

    best_tree.metadata["heldout_fidelity"] = best_fid
    best_tree.metadata["iterations"] = iterations
    return best_tree, log


@dataclass
class FidelityReport:
    confusion: np.ndarray            # rows: oracle action, cols: tree prediction
    accuracy: float
    macro_f1: float
    n_sims: int
    action_order: tuple[str, ...] = tuple(a.short for a in ACTIONS)

    def to_mapping(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "n_sims": self.n_sims,
            "action_order": list(self.action_order),
        }


def surrogate_fidelity(
    tree: DecisionTreePolicy,
    oracle: QNetwork,
    env_factory,
    n_sims: int = 100,
    seed: int = 0,
) -> FidelityReport:
    """Lap-by-lap agreement along the oracle's own trajectories."""
    rng = np.random.default_rng(seed)
    confusion = np.zeros((N_ACTIONS, N_ACTIONS), dtype=int)
    for _ in range(n_sims):
        env = env_factory(int(rng.integers(2**31)))
        x = env.reset()
        h = oracle.zero_hidden()
        done = False
        while not done:
            q, h = oracle.forward(x, h)
            a = int(greedy_action(q, _availability(env)))
            confusion[a, tree.predict(x)] += 1
            x, _, done, _ = env.step(Action(a))
    total = confusion.sum()
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    f1s = []
    for a in range(N_ACTIONS):
        tp = confusion[a, a]
        fp = confusion[:, a].sum() - tp
        fn = confusion[a, :].sum() - tp
        if tp + fp + fn == 0:
            continue  # class absent entirely; skip rather than average in zeros
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    macro_f1 = float(np.mean(f1s)) if f1s else 0.0
    return FidelityReport(confusion=confusion, accuracy=accuracy,
                         macro_f1=macro_f1, n_sims=n_sims)
