"""From-scratch CART classifier used as the distilled tree policy.

Axis-aligned binary splits chosen by weighted Gini gain; x[feature] <= threshold
goes left. The fit is fully deterministic for a given dataset: split ties break
on the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..basetypes import ACTIONS
from ..network import N_ACTIONS
from ..state import DISPLAY_NAMES, FEATURE_NAMES, SCALED_SPECS, ScalingProfile

TREE_FORMAT_VERSION = 1
MIN_LEAF = 5


@dataclass
class TreeNode:
    feature: int = -1                    # -1 marks a leaf
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    action: int = 0
    counts: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class DecisionTreePolicy:
    root: TreeNode
    max_depth: int
    n_features: int
    metadata: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> int:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.action

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict(row) for row in X], dtype=int)

    def leaf_for(self, x: np.ndarray) -> TreeNode:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def depth(self) -> int:
        def walk(node, d):
            if node.is_leaf:
                return d
            return max(walk(node.left, d + 1), walk(node.right, d + 1))
        return walk(self.root, 0)

    def n_leaves(self) -> int:
        def walk(node):
            if node.is_leaf:
                return 1
            return walk(node.left) + walk(node.right)
        return walk(self.root)


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.dot(p, p))


def _class_counts(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    counts = np.zeros(N_ACTIONS)
    np.add.at(counts, y, w)
    return counts


def _leaf(y: np.ndarray, w: np.ndarray) -> TreeNode:
    counts = _class_counts(y, w)
    action = int(max(range(N_ACTIONS), key=lambda a: (counts[a], -a)))
    raw = np.bincount(y, minlength=N_ACTIONS)
    return TreeNode(action=action, counts=tuple(int(c) for c in raw))


def _best_split(X, y, w, min_leaf):
    """Returns (gain, feature, threshold) or None when no split helps."""
    parent = _gini(_class_counts(y, w))
    total_w = w.sum()
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys, ws = X[order, f], y[order], w[order]
        left = np.zeros(N_ACTIONS)
        right = _class_counts(ys, ws)
        for i in range(len(xs) - 1):
            left[ys[i]] += ws[i]
            right[ys[i]] -= ws[i]
            if xs[i + 1] <= xs[i]:
                continue  # identical values can't be separated
            if i + 1 < min_leaf or len(xs) - i - 1 < min_leaf:
                continue
            lw, rw = left.sum(), right.sum()
            gain = parent - (lw * _gini(left) + rw * _gini(right)) / total_w
            threshold = 0.5 * (xs[i] + xs[i + 1])
            cand = (gain, -f, -threshold)
            if gain > 1e-12 and (best is None or cand > best[0]):
                best = (cand, f, threshold)
    if best is None:
        return None
    return best[0][0], best[1], best[2]


def fit_cart(
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
    max_depth: int = 5,
    min_leaf: int = MIN_LEAF,
    metadata: dict | None = None,
) -> DecisionTreePolicy:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise ValueError("empty training set")
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        ys, ws = y[idx], w[idx]
        if depth >= max_depth or len(idx) < 2 * min_leaf or len(np.unique(ys)) == 1:
            return _leaf(ys, ws)
        split = _best_split(X[idx], ys, ws, min_leaf)
        if split is None:
            return _leaf(ys, ws)
        _, feat, thr = split
        mask = X[idx, feat] <= thr
        node = TreeNode(feature=feat, threshold=float(thr))
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        node.action = _leaf(ys, ws).action
        node.counts = tuple(int(c) for c in np.bincount(ys, minlength=N_ACTIONS))
        return node

    root = build(np.arange(len(y)), 0)
    meta = {"dataset_size": len(y), **(metadata or {})}
    return DecisionTreePolicy(root=root, max_depth=max_depth,
                              n_features=X.shape[1], metadata=meta)


# ---- decision paths ----

@dataclass
class PathPredicate:
    feature: int
    op: str          # "<=" or ">"
    threshold: float
    formal: str
    display: str


def _display_threshold(name: str, threshold: float, profile: ScalingProfile | None):
    label = DISPLAY_NAMES.get(name, name)
    if profile is not None and name in SCALED_SPECS:
        raw = profile.unscale_value(name, threshold)
        return f"{label}* {{op}} {raw:.3f}", True
    return f"{label} {{op}} {threshold:.3f}", False


def decision_path(
    tree: DecisionTreePolicy,
    x: np.ndarray,
    profile: ScalingProfile | None = None,
) -> tuple[list[PathPredicate], int]:
    """Root-to-leaf predicates satisfied by x, plus the leaf action.

    Display strings invert the scaling profile for scaled features; those
    entries are starred to flag the unit change.
    """
    if len(x) != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {len(x)}")
    preds: list[PathPredicate] = []
    node = tree.root
    while not node.is_leaf:
        name = FEATURE_NAMES[node.feature] if node.feature < len(FEATURE_NAMES) else str(node.feature)
        template, _ = _display_threshold(name, node.threshold, profile)
        if x[node.feature] <= node.threshold:
            op, nxt = "<=", node.left
        else:
            op, nxt = ">", node.right
        preds.append(PathPredicate(
            feature=node.feature,
            op=op,
            threshold=node.threshold,
            formal=f"x[{node.feature}] {op} {node.threshold:.6f}",
            display=template.format(op=op),
        ))
        node = nxt
    return preds, node.action


# ---- serialization ----

def _node_to_mapping(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"leaf": True, "action": node.action, "counts": list(node.counts)}
    return {
        "leaf": False,
        "feature": node.feature,
        "threshold": node.threshold,
        "action": node.action,
        "counts": list(node.counts),
        "left": _node_to_mapping(node.left),
        "right": _node_to_mapping(node.right),
    }


def _node_from_mapping(m: dict) -> TreeNode:
    if m["leaf"]:
        return TreeNode(action=int(m["action"]), counts=tuple(m["counts"]))
    return TreeNode(
        feature=int(m["feature"]),
        threshold=float(m["threshold"]),
        action=int(m.get("action", 0)),
        counts=tuple(m.get("counts", ())),
        left=_node_from_mapping(m["left"]),
        right=_node_from_mapping(m["right"]),
    )


def tree_to_mapping(tree: DecisionTreePolicy) -> dict:
    return {
        "version": TREE_FORMAT_VERSION,
        "max_depth": tree.max_depth,
        "n_features": tree.n_features,
        "metadata": tree.metadata,
        "actions": [a.short for a in ACTIONS],
        "root": _node_to_mapping(tree.root),
    }


def tree_from_mapping(m: dict) -> DecisionTreePolicy:
    if m.get("version") != TREE_FORMAT_VERSION:
        raise ValueError(f"unsupported tree format version {m.get('version')}")
    return DecisionTreePolicy(
        root=_node_from_mapping(m["root"]),
        max_depth=int(m["max_depth"]),
        n_features=int(m["n_features"]),
        metadata=dict(m.get("metadata", {})),
    )


def save_tree(tree: DecisionTreePolicy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tree_to_mapping(tree), indent=2) + "\n")


def load_tree(path: str | Path) -> DecisionTreePolicy:
    return tree_from_mapping(json.loads(Path(path).read_text()))
