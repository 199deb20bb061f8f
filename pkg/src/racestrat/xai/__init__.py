"""Explanation toolkit: Shapley attributions, tree distillation, counterfactuals."""

from .shapley import Attribution, attribute, attribution_fidelity
from .cart import DecisionTreePolicy, TreeNode, fit_cart, decision_path, save_tree, load_tree
from .viper import viper_distill, surrogate_fidelity, FidelityReport
from .counterfactual import Counterfactual, counterfactual, counterfactual_proximity

__all__ = [
    "Attribution", "attribute", "attribution_fidelity",
    "DecisionTreePolicy", "TreeNode", "fit_cart", "decision_path",
    "save_tree", "load_tree",
    "viper_distill", "surrogate_fidelity", "FidelityReport",
    "Counterfactual", "counterfactual", "counterfactual_proximity",
]
