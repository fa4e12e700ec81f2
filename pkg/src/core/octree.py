"""
不完整八叉树构造

- construct_uniform：自顶向下到指定层级，挖除子树立即剪枝
- construct_constrained：不粗于种子集合的覆盖，种子按 Morton 区间计数分桶
- boundary_refined_tree / refinement_seeds / refine_by_flags：细化种子来源
- carved_cubes：极大挖除立方体（覆盖度检查用）
"""

from typing import List, Optional

import numpy as np

from src.core.console import log
from src.core.sfc import (
    SfcOracle,
    is_sfc_sorted,
    level_linear_ids,
    morton_codes,
    sfc_order,
    subtree_code_span,
    tree_sort,
)
from src.geometry.subdomain import Subdomain
from src.models.errors import TreeError
from src.models.octant import L_MAX, Octants, RegionClass
from src.models.tree import IncompleteTree


def _finish(parts: List[Octants], tag_parts: List[np.ndarray], dim: int,
            oracle: Optional[SfcOracle]) -> IncompleteTree:
    leaves = Octants.concat(parts, dim)
    tags = np.concatenate(tag_parts) if tag_parts else np.zeros(0, dtype=np.int8)
    if len(leaves) == 0:
        log("子域完全被挖除，得到空树")
        return IncompleteTree.empty(dim)
    order = sfc_order(leaves, oracle)
    return IncompleteTree(leaves[order], tags[order])


def construct_uniform(subdomain: Subdomain, level: int,
                      oracle: Optional[SfcOracle] = None) -> IncompleteTree:
    """
    层级 level 上所有未被挖除的八分体

    Args:
        subdomain: 挖除分类器
        level: 目标层级，0 ≤ level ≤ L_MAX
        oracle: 曲线预言机，默认 Morton

    Returns:
        带区域标签的不完整树
    """
    if not 0 <= level <= L_MAX:
        raise TreeError(f"层级越界: {level}")
    frontier = Octants.root(subdomain.dim)
    for _ in range(level):
        tags = subdomain.classify_octants(frontier)
        frontier = frontier[tags != RegionClass.CARVED]
        if len(frontier) == 0:
            break
        frontier = frontier.children()
    tags = subdomain.classify_octants(frontier)
    keep = tags != RegionClass.CARVED
    return _finish([frontier[keep]], [tags[keep]], subdomain.dim, oracle)


def construct_constrained(subdomain: Subdomain, seeds: Octants,
                          oracle: Optional[SfcOracle] = None) -> IncompleteTree:
    """
    不粗于种子的覆盖

    八分体 S 继续细分当且仅当 S 未被挖除且存在严格位于 S 内部（更细）的种子；
    每层用种子 Morton 码的 searchsorted 得到各 S 的种子计数与偏移

    Raises:
        TreeError: 种子未按曲线排序
    """
    dim = subdomain.dim
    if len(seeds) and seeds.dim != dim:
        raise TreeError("种子维度与子域不一致")
    if not is_sfc_sorted(seeds, oracle):
        raise TreeError("种子未按空间填充曲线排序")
    seed_codes = morton_codes(seeds.anchors) if len(seeds) else np.zeros(0, dtype=np.int64)
    seed_levels = seeds.levels

    parts: List[Octants] = []
    tag_parts: List[np.ndarray] = []
    frontier = Octants.root(dim)
    for level in range(L_MAX + 1):
        tags = subdomain.classify_octants(frontier)
        keep = tags != RegionClass.CARVED
        frontier, tags = frontier[keep], tags[keep]
        if len(frontier) == 0:
            break
        deep = np.sort(seed_codes[seed_levels > level])
        codes = morton_codes(frontier.anchors)
        start = np.searchsorted(deep, codes, side="left")
        stop = np.searchsorted(deep, codes + subtree_code_span(frontier.levels, dim), side="left")
        refine = stop > start
        parts.append(frontier[~refine])
        tag_parts.append(tags[~refine])
        if not np.any(refine):
            break
        frontier = frontier[refine].children()
    return _finish(parts, tag_parts, dim, oracle)


def coarsest_covering(tree: IncompleteTree, subdomain: Subdomain) -> np.ndarray:
    """重新计算每个叶子的区域标签并写回"""
    tags = subdomain.classify_octants(tree.leaves)
    tree.tags = tags.astype(np.int8)
    return tree.tags


def boundary_refined_tree(subdomain: Subdomain, level: int, base_level: int = 0,
                          oracle: Optional[SfcOracle] = None) -> IncompleteTree:
    """先均匀细化到 base_level，之后只细化截断（RetainBoundary）八分体直到 level"""
    if not 0 <= base_level <= level <= L_MAX:
        raise TreeError(f"层级非法: base_level={base_level}, level={level}")
    parts: List[Octants] = []
    tag_parts: List[np.ndarray] = []
    frontier = Octants.root(subdomain.dim)
    for current in range(level + 1):
        tags = subdomain.classify_octants(frontier)
        keep = tags != RegionClass.CARVED
        frontier, tags = frontier[keep], tags[keep]
        if len(frontier) == 0:
            break
        refine = (current < base_level) | ((tags == RegionClass.RETAIN_BOUNDARY) & (current < level))
        parts.append(frontier[~refine])
        tag_parts.append(tags[~refine])
        frontier = frontier[refine].children()
    return _finish(parts, tag_parts, subdomain.dim, oracle)


def refinement_seeds(subdomain: Subdomain, base_level: int, boundary_level: int,
                     extra: Optional[Octants] = None,
                     oracle: Optional[SfcOracle] = None) -> Octants:
    """均匀基础层八分体 ∪ 物体层截断八分体 ∪ 显式种子，排序去重"""
    parts = [construct_uniform(subdomain, base_level, oracle).leaves]
    if boundary_level > base_level:
        surface = boundary_refined_tree(subdomain, boundary_level, base_level, oracle)
        mask = (surface.leaves.levels == boundary_level) & surface.boundary_mask()
        parts.append(surface.leaves[mask])
    if extra is not None and len(extra):
        extra.validate()
        parts.append(extra)
    return tree_sort(Octants.concat(parts, subdomain.dim), oracle)


def refine_by_flags(tree: IncompleteTree, flags: np.ndarray,
                    oracle: Optional[SfcOracle] = None) -> Octants:
    """按调用方给出的细化标记生成种子：被标记叶子换成其子节点"""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape[0] != len(tree):
        raise TreeError("细化标记数量与叶子数不一致")
    refined = tree.leaves[flags].children() if np.any(flags) else Octants.empty(tree.dim)
    return tree_sort(Octants.concat([tree.leaves[~flags], refined], tree.dim), oracle)


def seeds_from_cells(records: List[List[int]], dim: int) -> Octants:
    """配置中的 [level, i0, i1(, i2)] 记录 → 八分体"""
    if not records:
        return Octants.empty(dim)
    arr = np.asarray(records, dtype=np.int64).reshape(len(records), dim + 1)
    levels = arr[:, 0]
    if levels.min() < 0 or levels.max() > L_MAX:
        raise TreeError("种子层级越界")
    cells = arr[:, 1:]
    if cells.min() < 0 or np.any(cells >= np.left_shift(np.int64(1), levels)[:, None]):
        raise TreeError("种子单元编号越界")
    anchors = cells * np.left_shift(np.int64(1), L_MAX - levels)[:, None]
    return Octants(levels, anchors)


def carved_cubes(tree: IncompleteTree) -> Octants:
    """极大挖除立方体：叶子各级真祖先的子节点中既非祖先也非叶子者"""
    dim = tree.dim
    if tree.is_empty:
        return Octants.root(dim)
    ancestors = []
    current = tree.leaves[tree.leaves.levels > 0]
    while len(current):
        current = current.parents()
        ids = level_linear_ids(current)
        _, first = np.unique(ids, return_index=True)
        current = current[np.sort(first)]
        ancestors.append(current)
        current = current[current.levels > 0]
    internal = Octants.concat(ancestors, dim)
    internal = internal[np.unique(level_linear_ids(internal), return_index=True)[1]]
    children = internal.children()
    occupied = np.union1d(level_linear_ids(internal), level_linear_ids(tree.leaves))
    carved = ~np.isin(level_linear_ids(children), occupied)
    return tree_sort(children[carved])


def coverage_measure(tree: IncompleteTree) -> float:
    """叶子体积 + 极大挖除立方体体积（单位立方体下应为 1）"""
    return float(tree.leaves.unit_volumes().sum() + carved_cubes(tree).unit_volumes().sum())
