"""Tree-based (hierarchical Tucker) tensor formats over dimension partition trees."""

from .approx import ApproxResult, best_approx, als_refine, injective_norm, truncate
from .dense import contract, dematricize, elementary, matricize
from .dtree import DimensionTree, balanced_tree, build_tree, linear_tree, tucker_tree
from .minsub import RankTuple, in_FT, is_admissible, minimal_subspace, tree_rank
from .ttn import TreeTensor, core_ranks, evaluate, hsvd, orthogonalize, random_tree_tensor

__all__ = [
    "ApproxResult", "DimensionTree", "RankTuple", "TreeTensor",
    "als_refine", "balanced_tree", "best_approx", "build_tree", "contract", "core_ranks",
    "dematricize", "elementary", "evaluate", "hsvd", "in_FT", "injective_norm", "is_admissible",
    "linear_tree", "matricize", "minimal_subspace", "orthogonalize", "random_tree_tensor",
    "tree_rank", "truncate", "tucker_tree",
]
