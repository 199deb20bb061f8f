"""Closest-counterfactual search over the distilled tree's leaf boxes.

Every leaf of an axis-aligned tree is a box; projecting the query point onto a
target-class box coordinate-wise is the exact minimiser for both norms, so the
search is a plain enumeration over target leaves. One-hot blocks are treated
atomically (either left alone or flipped to another valid setting) and the
track block is immutable by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..basetypes import ACTIONS, Action
from ..state import DISPLAY_NAMES, FEATURE_GROUPS, FEATURE_NAMES, ONE_HOT_GROUPS
from .cart import DecisionTreePolicy, TreeNode

EPS_CF = 1e-6

DEFAULT_IMMUTABLE = frozenset(FEATURE_GROUPS["Track"])


@dataclass
class FeatureChange:
    feature: int
    name: str
    before: float
    after: float

    @property
    def delta(self) -> float:
        return self.after - self.before


@dataclass
class Counterfactual:
    original: np.ndarray
    target: int
    modified: np.ndarray
    changes: list[FeatureChange]
    distance: float
    norm: str
    feasibility: list[str] = field(default_factory=list)


def leaf_boxes(tree: DecisionTreePolicy) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """(action, lower, upper) per leaf; lower bounds are open, uppers closed."""
    boxes = []

    def walk(node: TreeNode, lo: np.ndarray, hi: np.ndarray):
        if node.is_leaf:
            boxes.append((node.action, lo.copy(), hi.copy()))
            return
        f, t = node.feature, node.threshold
        saved = hi[f]
        hi[f] = min(hi[f], t)
        walk(node.left, lo, hi)
        hi[f] = saved
        saved = lo[f]
        lo[f] = max(lo[f], t)
        walk(node.right, lo, hi)
        lo[f] = saved

    n = tree.n_features
    walk(tree.root, np.full(n, -np.inf), np.full(n, np.inf))
    return boxes


def _project_scalar(v: float, lo: float, hi: float) -> float | None:
    """Clamp into (lo, hi]; None when the interval is empty."""
    low = lo + EPS_CF if np.isfinite(lo) else -np.inf
    if low > hi:
        return None
    return float(min(max(v, low), hi))


def _onehot_members(n_features: int) -> dict[int, tuple[str, tuple[int, ...]]]:
    members = {}
    for group in ONE_HOT_GROUPS:
        idx = FEATURE_GROUPS[group]
        if max(idx) < n_features:
            for i in idx:
                members[i] = (group, idx)
    return members


def _distance(a: np.ndarray, b: np.ndarray, norm: str) -> float:
    diff = np.abs(a - b)
    if norm == "l1":
        return float(diff.sum())
    if norm == "l2":
        return float(np.sqrt((diff ** 2).sum()))
    raise ValueError(f"unknown norm {norm!r}")


def _project_to_box(
    x: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    immutable: frozenset[int],
    onehot: dict[int, tuple[str, tuple[int, ...]]],
    norm: str,
) -> np.ndarray | None:
    out = x.copy()
    handled: set[int] = set()
    for f in range(len(x)):
        if f in handled:
            continue
        if f in onehot:
            group, idx = onehot[f]
            handled.update(idx)
            if any(i in immutable for i in idx):
                # immutable block: feasible only if already inside the box
                if all(lo[i] < x[i] <= hi[i] for i in idx):
                    continue
                return None
            if all(lo[i] < x[i] <= hi[i] for i in idx):
                continue  # current setting already satisfies the box
            # enumerate valid one-hot settings of the block inside the box
            feasible = []
            for hot in idx:
                setting = {i: (1.0 if i == hot else 0.0) for i in idx}
                if all(lo[i] < setting[i] <= hi[i] for i in idx):
                    vec = np.array([setting[i] for i in idx])
                    cur = np.array([x[i] for i in idx])
                    feasible.append((_distance(cur, vec, norm), hot, setting))
            if not feasible:
                return None
            feasible.sort(key=lambda t: (t[0], t[1]))
            for i, v in feasible[0][2].items():
                out[i] = v
            continue
        if f in immutable:
            if lo[f] < x[f] <= hi[f]:
                continue
            return None
        v = _project_scalar(x[f], lo[f], hi[f])
        if v is None:
            return None
        out[f] = v
    return out


def _feasibility_notes(x: np.ndarray, changes: list[FeatureChange],
                       total_laps: int | None) -> list[str]:
    notes = []
    for ch in changes:
        if ch.name == "race_progress" and total_laps and ch.delta > 0:
            notes.append(f"complete {ch.delta * total_laps:.3f} more laps")
        elif ch.name.endswith("_available") or ch.name == "valid_finish":
            notes.append(f"{DISPLAY_NAMES.get(ch.name, ch.name)} would need to be "
                         f"{'set' if ch.after > 0.5 else 'clear'} (not directly actionable)")
        elif ch.name.startswith("tyre_"):
            notes.append("requires running a different compound")
        elif ch.name.startswith("safety_car_"):
            notes.append("depends on a safety-car deployment (not actionable)")
    return notes


def counterfactual(
    tree: DecisionTreePolicy,
    x: np.ndarray,
    target: Action | int,
    norm: str = "l1",
    immutable: frozenset[int] | None = None,
    total_laps: int | None = None,
) -> Counterfactual:
    """Smallest state change that flips the tree's prediction to `target`."""
    x = np.asarray(x, dtype=float)
    target = int(target)
    immutable = DEFAULT_IMMUTABLE if immutable is None else frozenset(immutable)
    if tree.predict(x) == target:
        raise ValueError("tree already predicts the target action")
    onehot = _onehot_members(tree.n_features) if tree.n_features == len(FEATURE_NAMES) else {}

    best: tuple[float, np.ndarray] | None = None
    for action, lo, hi in leaf_boxes(tree):
        if action != target:
            continue
        proj = _project_to_box(x, lo, hi, immutable, onehot, norm)
        if proj is None:
            continue
        d = _distance(x, proj, norm)
        if best is None or d < best[0]:
            best = (d, proj)
    if best is None:
        raise ValueError(f"no reachable leaf predicts {Action(target).short} "
                         "under the immutability constraints")

    dist, modified = best
    changes = [
        FeatureChange(feature=i,
                      name=FEATURE_NAMES[i] if i < len(FEATURE_NAMES) else str(i),
                      before=float(x[i]), after=float(modified[i]))
        for i in range(len(x)) if modified[i] != x[i]
    ]
    return Counterfactual(
        original=x,
        target=target,
        modified=modified,
        changes=changes,
        distance=dist,
        norm=norm,
        feasibility=_feasibility_notes(x, changes, total_laps),
    )


def counterfactual_proximity(
    tree: DecisionTreePolicy,
    env_factory,
    n_sims: int = 100,
    rng: np.random.Generator | None = None,
    norm: str = "l1",
    immutable: frozenset[int] | None = None,
) -> tuple[float, float]:
    """(mean changed-feature count, mean distance) over random states/targets."""
    rng = rng if rng is not None else np.random.default_rng(0)
    reachable = {a for a, _, _ in leaf_boxes(tree)}
    states: list[np.ndarray] = []
    for _ in range(n_sims):
        env = env_factory(int(rng.integers(2**31)))
        x = env.reset()
        done = False
        while not done:
            states.append(x)
            x, _, done, _ = env.step(tree.predict(x))
    changed, dists = [], []
    for _ in range(n_sims):
        x = states[int(rng.integers(len(states)))]
        options = sorted(reachable - {tree.predict(x)})
        if not options:
            continue
        target = int(options[int(rng.integers(len(options)))])
        try:
            cf = counterfactual(tree, x, target, norm=norm, immutable=immutable)
        except ValueError:
            continue
        changed.append(len(cf.changes))
        dists.append(cf.distance)
    if not changed:
        return 0.0, 0.0
    return float(np.mean(changed)), float(np.mean(dists))
