"""
2:1 平衡

自底向上为每个八分体的父节点补齐同层邻居作为种子（包括落在挖除区域中的邻居），
再用约束构造重建树。平衡按共享任意边界点（面、棱、角）判定。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.partition import DistributedTree, distributed_construct_constrained
from src.core.sfc import SfcOracle, is_ancestor_or_equal, level_linear_ids, morton_codes, tree_sort
from src.geometry.subdomain import Subdomain
from src.models.octant import ROOT_SIDE, Octants
from src.models.tree import IncompleteTree

# 暴力检查时每块的行数
_PAIR_CHUNK = 512


def _unique(octants: Octants) -> Octants:
    if len(octants) == 0:
        return octants
    _, first = np.unique(level_linear_ids(octants), return_index=True)
    return octants[np.sort(first)]


def neighbor_offsets(dim: int) -> np.ndarray:
    """{-1, 0, 1}^d 去掉零向量"""
    grid = np.stack(np.meshgrid(*([np.arange(-1, 2)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return grid[np.any(grid != 0, axis=1)]


def same_level_neighbors(octants: Octants) -> Octants:
    """同层 3^d - 1 邻居，只在根立方体壁处截断"""
    dim = octants.dim
    offsets = neighbor_offsets(dim)
    sides = octants.sides
    anchors = octants.anchors[:, None, :] + offsets[None, :, :] * sides[:, None, None]
    levels = np.repeat(octants.levels[:, None], len(offsets), axis=1)
    inside = np.all((anchors >= 0) & (anchors + sides[:, None, None] <= ROOT_SIDE), axis=2)
    return Octants(levels[inside], anchors[inside])


@dataclass
class SeedLadder:
    """按层分组的种子，细 → 粗，每层内无重复"""

    dim: int
    rungs: Dict[int, Octants] = field(default_factory=dict)

    def seeds(self) -> Octants:
        return Octants.concat([self.rungs[l] for l in sorted(self.rungs, reverse=True)], self.dim)


def bottom_up_constrain_neighbors(leaves: Octants) -> SeedLadder:
    """
    逐层向上：层 l 的每个八分体，其父节点的全部同层邻居加入层 l-1

    Args:
        leaves: 已排序的叶子

    Returns:
        种子阶梯（拼接后即为重建所需种子）
    """
    ladder = SeedLadder(leaves.dim)
    if len(leaves) == 0:
        return ladder
    for level in np.unique(leaves.levels):
        ladder.rungs[int(level)] = _unique(leaves[leaves.levels == level])
    for level in range(int(leaves.levels.max()), 0, -1):
        current = ladder.rungs.get(level)
        if current is None or len(current) == 0:
            continue
        parents = _unique(current.parents())
        added = same_level_neighbors(parents)
        below = ladder.rungs.get(level - 1, Octants.empty(leaves.dim))
        ladder.rungs[level - 1] = _unique(Octants.concat([below, added], leaves.dim))
    return ladder


def construct_balanced(
    subdomain: Subdomain,
    seeds: Octants,
    rank_count: int = 1,
    load_tol: float = 0.1,
    workers: int = 1,
    oracle: Optional[SfcOracle] = None,
) -> DistributedTree:
    """约束构造 → 自底向上补邻居（不做挖除分类） → 约束构造"""
    seeds = tree_sort(seeds, oracle) if len(seeds) else Octants.root(subdomain.dim)
    first = distributed_construct_constrained(seeds, subdomain, rank_count, load_tol, workers, oracle)
    ladder = bottom_up_constrain_neighbors(first.global_tree().leaves)
    refined_seeds = tree_sort(ladder.seeds(), oracle)
    return distributed_construct_constrained(refined_seeds, subdomain, rank_count, load_tol, workers, oracle)


def build_balanced_tree(subdomain: Subdomain, seeds: Octants, oracle: Optional[SfcOracle] = None) -> IncompleteTree:
    """单 rank 平衡树"""
    return construct_balanced(subdomain, seeds, oracle=oracle).global_tree()


def _closed_touch(a_lo: np.ndarray, a_hi: np.ndarray, b_lo: np.ndarray, b_hi: np.ndarray) -> np.ndarray:
    return np.all((a_lo <= b_hi) & (b_lo <= a_hi), axis=-1)


def is_balanced(tree: IncompleteTree) -> Tuple[bool, List[Tuple[int, int]]]:
    """
    暴力两两检查：共享任意边界点的叶子层级差不超过 1

    Returns:
        (是否平衡, 违规叶子对 (i, j)，i < j)
    """
    leaves = tree.leaves
    n = len(leaves)
    lo = leaves.anchors
    hi = leaves.anchors + leaves.sides[:, None]
    levels = leaves.levels
    violations: List[Tuple[int, int]] = []
    for start in range(0, n, _PAIR_CHUNK):
        stop = min(n, start + _PAIR_CHUNK)
        touch = _closed_touch(lo[start:stop, None, :], hi[start:stop, None, :], lo[None, :, :], hi[None, :, :])
        jump = np.abs(levels[start:stop, None] - levels[None, :]) > 1
        rows, cols = np.nonzero(touch & jump)
        rows = rows + start
        upper = rows < cols
        violations.extend(zip(rows[upper].tolist(), cols[upper].tolist()))
    return not violations, violations


def balance_violations(tree: IncompleteTree) -> List[Tuple[int, int]]:
    """
    基于曲线查找的快速检查

    对层级 l 的叶子 t，取与 t 接触的父节点同层邻居 n，
    查找覆盖 n 的叶子 u；若 level(u) < l - 1 则违规
    """
    leaves = tree.leaves
    if len(leaves) < 2:
        return []
    deep = np.flatnonzero(leaves.levels >= 2)
    if len(deep) == 0:
        return []
    codes = morton_codes(leaves.anchors)
    code_order = np.argsort(codes, kind="stable")
    sorted_codes = codes[code_order]

    parents = leaves[deep].parents()
    offsets = neighbor_offsets(leaves.dim)
    m = len(offsets)
    sides = parents.sides
    n_anchors = (parents.anchors[:, None, :] + offsets[None, :, :] * sides[:, None, None]).reshape(-1, leaves.dim)
    n_levels = np.repeat(parents.levels, m)
    n_sides = np.repeat(sides, m)
    owner = np.repeat(deep, m)
    t_lo = leaves.anchors[owner]
    t_hi = t_lo + leaves.sides[owner][:, None]
    valid = np.all((n_anchors >= 0) & (n_anchors + n_sides[:, None] <= ROOT_SIDE), axis=1)
    valid &= _closed_touch(n_anchors, n_anchors + n_sides[:, None], t_lo, t_hi)
    n_anchors, n_levels, owner = n_anchors[valid], n_levels[valid], owner[valid]

    pos = np.searchsorted(sorted_codes, morton_codes(n_anchors), side="right") - 1
    found = pos >= 0
    candidate = code_order[np.clip(pos, 0, None)]
    covers = found & is_ancestor_or_equal(
        leaves.levels[candidate], leaves.anchors[candidate], n_levels, n_anchors
    )
    bad = covers & (leaves.levels[candidate] < n_levels)
    pairs = {(min(int(a), int(b)), max(int(a), int(b))) for a, b in zip(owner[bad], candidate[bad])}
    return sorted(pairs)


def coarsening_audit(original: IncompleteTree, balanced: IncompleteTree, subdomain: Subdomain) -> Tuple[float, int]:
    """
    平衡引入的细化是否必要：把每组由平衡新增、可整体粗化的兄弟叶子恢复为父节点，
    统计粗化后失去平衡的比例

    Returns:
        (失衡比例, 检查的兄弟组数)
    """
    leaves = balanced.leaves
    original_ids = level_linear_ids(original.leaves)
    introduced = ~np.isin(level_linear_ids(leaves), original_ids) & (leaves.levels > 0)
    if not np.any(introduced):
        return 1.0, 0
    parents = leaves[introduced].parents()
    parent_ids = level_linear_ids(parents)
    unique_ids, first = np.unique(parent_ids, return_index=True)
    checked = 0
    unbalanced = 0
    all_parent_ids = np.full(len(leaves), -1, dtype=np.int64)
    nonroot = leaves.levels > 0
    all_parent_ids[nonroot] = level_linear_ids(leaves[nonroot].parents())
    for pid, idx in zip(unique_ids, first):
        family = np.flatnonzero(all_parent_ids == pid)
        if len(family) != 1 << leaves.dim:
            continue
        if np.any(leaves.levels[family] != leaves.levels[family[0]]):
            continue
        parent = parents[np.array([idx])]
        if not _inside_original(parent, original):
            continue
        keep = np.setdiff1d(np.arange(len(leaves)), family)
        coarse_leaves = Octants.concat([leaves[keep], parent], leaves.dim)
        coarse_tags = np.concatenate([balanced.tags[keep], subdomain.classify_octants(parent)])
        coarse = IncompleteTree(coarse_leaves, coarse_tags)
        checked += 1
        if balance_violations(coarse):
            unbalanced += 1
    return (unbalanced / checked if checked else 1.0), checked


def _inside_original(octant: Octants, original: IncompleteTree) -> bool:
    """octant 是否落在原树某个叶子内部"""
    mask = is_ancestor_or_equal(
        original.leaves.levels, original.leaves.anchors,
        np.repeat(octant.levels, len(original)), np.repeat(octant.anchors, len(original), axis=0),
    )
    return bool(np.any(mask))
