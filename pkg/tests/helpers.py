"""测试用的小工具：构造典型树与暴力判定"""

from typing import Iterable, Set, Tuple

import numpy as np

from src.core.balance import build_balanced_tree
from src.core.nodes import generate_element_nodes
from src.core.octree import construct_constrained, refinement_seeds
from src.core.sfc import tree_sort
from src.geometry.shapes import Sphere, complement
from src.geometry.subdomain import Subdomain
from src.models.nodeset import NodeSet
from src.models.octant import OctantKey, Octants
from src.models.tree import IncompleteTree


def tree_from_cells(dim: int, cells: Iterable[Tuple[int, Tuple[int, ...]]]) -> IncompleteTree:
    """由 (level, cell) 种子得到不粗于种子的完整树"""
    subdomain = Subdomain(dim)
    seeds = tree_sort(Octants.from_keys([OctantKey.from_cell(level, cell) for level, cell in cells]))
    return construct_constrained(subdomain, seeds)


def random_carved(rng: np.random.Generator, dim: int, base_level: int = 1, level: int = 3):
    """随机球挖除（或只保留球内）的平衡树"""
    center = rng.uniform(0.3, 0.7, dim)
    radius = float(rng.uniform(0.2, 0.35))
    shape = Sphere(center, radius)
    if rng.random() < 0.5:
        shape = complement(shape)
    subdomain = Subdomain(dim, shape)
    tree = build_balanced_tree(subdomain, refinement_seeds(subdomain, base_level, level))
    return subdomain, tree


def brute_force_nodes(tree: IncompleteTree, order: int) -> Set[Tuple[int, ...]]:
    """
    非悬挂节点的暴力判定：某坐标只要落在任一叶子闭包内却不在其格点上，即为悬挂
    """
    leaves = tree.leaves
    coords = np.unique(generate_element_nodes(leaves, order).reshape(-1, tree.dim), axis=0)
    hanging = np.zeros(len(coords), dtype=bool)
    for i in range(len(leaves)):
        lo = order * leaves.anchors[i]
        side = int(leaves.sides[i])
        hi = lo + order * side
        inside = np.all((coords >= lo) & (coords <= hi), axis=1)
        off_lattice = np.any((coords - lo) % side != 0, axis=1)
        hanging |= inside & off_lattice
    return {tuple(int(v) for v in c) for c in coords[~hanging]}


def key_set(node_set: NodeSet) -> Set[Tuple[int, ...]]:
    return {tuple(int(v) for v in k) for k in node_set.keys}
