"""
节点枚举与悬挂节点约束

- 单元节点：闭单元上间距 side/p 的 (p+1)^d 格点
- 抵消节点：单元边界上子层格点（间距 side/(2p)）中不是单元节点的点，
  即假想更细邻居的悬挂节点坐标
- 枚举：全部单元节点与抵消节点按坐标排序去重，出现过抵消实例的坐标视为悬挂并丢弃
- 约束：悬挂格点的值由父单元张量积 Lagrange 基插值，链式悬挂逐层向上展开
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from src.core.balance import balance_violations
from src.core.basis import check_order, child_interpolation_table, local_offsets
from src.core.partition import DistributedTree, run_ranks
from src.core.sfc import interleave_bits
from src.core.traversal import TraversalPlan, build_plan
from src.geometry.subdomain import Subdomain
from src.models.errors import TreeError
from src.models.nodeset import NodeSet, node_lattice_side, node_linear_keys
from src.models.octant import L_MAX, OctantKey, Octants
from src.models.tree import IncompleteTree

# 节点格点坐标最多 22 位，拆成高低两段做比特交错
_LOW_BITS = 11


def _as_octants(leaves) -> Octants:
    if isinstance(leaves, OctantKey):
        return Octants.from_keys([leaves])
    return leaves


def generate_element_nodes(leaves, order: int) -> np.ndarray:
    """
    单元节点格点坐标

    Args:
        leaves: Octants 或单个 OctantKey
        order: 单元阶数 p

    Returns:
        (n, m, d)；单个 OctantKey 时为 (m, d)
    """
    check_order(order)
    single = isinstance(leaves, OctantKey)
    octs = _as_octants(leaves)
    offsets = local_offsets(octs.dim, order)
    nodes = order * octs.anchors[:, None, :] + offsets[None, :, :] * octs.sides[:, None, None]
    return nodes[0] if single else nodes


def cancellation_offsets(dim: int, order: int) -> np.ndarray:
    """半间距偏移 k ∈ {0..2p}^d：位于边界且不全为偶数"""
    check_order(order)
    grid = np.stack(np.unravel_index(np.arange((2 * order + 1) ** dim), (2 * order + 1,) * dim)[::-1], axis=1)
    on_boundary = np.any((grid == 0) | (grid == 2 * order), axis=1)
    all_even = np.all(grid % 2 == 0, axis=1)
    return grid[on_boundary & ~all_even]


def generate_cancellation_nodes(leaves, order: int) -> np.ndarray:
    """抵消节点格点坐标，形状约定同 generate_element_nodes"""
    single = isinstance(leaves, OctantKey)
    octs = _as_octants(leaves)
    if len(octs) and octs.levels.max() >= L_MAX:
        raise TreeError(f"层级 {L_MAX} 的单元没有更细的抵消格点")
    offsets = cancellation_offsets(octs.dim, order)
    half = (octs.sides >> 1)[:, None, None]
    nodes = order * octs.anchors[:, None, :] + offsets[None, :, :] * half
    return nodes[0] if single else nodes


def node_sfc_order(keys: np.ndarray) -> np.ndarray:
    """节点格点坐标的 Morton 序置换"""
    keys = np.asarray(keys, dtype=np.int64)
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64)
    high = interleave_bits(keys >> _LOW_BITS, _LOW_BITS + 1)
    low = interleave_bits(keys & ((1 << _LOW_BITS) - 1), _LOW_BITS)
    return np.lexsort((low, high))


def _decode_linear(linear: np.ndarray, dim: int, order: int) -> np.ndarray:
    base = np.uint64(node_lattice_side(order) + 1)
    keys = np.zeros((len(linear), dim), dtype=np.int64)
    rest = linear.copy()
    for axis in range(dim):
        keys[:, axis] = (rest % base).astype(np.int64)
        rest = rest // base
    return keys


def _coordinate_summary(leaves: Octants, order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(唯一坐标编号, 是否有单元实例, 是否有抵消实例)"""
    dim = leaves.dim
    if len(leaves) == 0:
        empty = np.zeros(0, dtype=bool)
        return np.zeros(0, dtype=np.uint64), empty, empty
    element = generate_element_nodes(leaves, order).reshape(-1, dim)
    cancel = generate_cancellation_nodes(leaves, order).reshape(-1, dim)
    linear = node_linear_keys(np.concatenate([element, cancel]), order)
    unique, inverse = np.unique(linear, return_inverse=True)
    has_element = np.zeros(len(unique), dtype=bool)
    cancelled = np.zeros(len(unique), dtype=bool)
    has_element[inverse[: len(element)]] = True
    cancelled[inverse[len(element):]] = True
    return unique, has_element, cancelled


def _finish_nodes(unique: np.ndarray, has_element: np.ndarray, cancelled: np.ndarray,
                  dim: int, order: int, subdomain: Optional[Subdomain]) -> NodeSet:
    keys = _decode_linear(unique[has_element & ~cancelled], dim, order)
    keys = keys[node_sfc_order(keys)]
    side = node_lattice_side(order)
    wall = np.any((keys == 0) | (keys == side), axis=1)
    carved = np.zeros(len(keys), dtype=bool)
    if subdomain is not None and len(keys):
        carved = subdomain.carved_points(keys.astype(np.float64) / side)
    return NodeSet(dim, order, keys, wall | carved)


def _check_balanced(tree: IncompleteTree) -> None:
    violations = balance_violations(tree)
    if violations:
        i, j = violations[0]
        raise TreeError(
            f"树不满足 2:1 平衡（{len(violations)} 对违规，例如叶子 {i} 与 {j}）"
        )


def enumerate_nodes(tree: IncompleteTree, order: int, subdomain: Optional[Subdomain] = None,
                    check_balance: bool = True) -> NodeSet:
    """
    唯一、非悬挂节点

    Args:
        tree: 2:1 平衡树
        order: 单元阶数 p
        subdomain: 边界标记用的分类器，None 时只标记根立方体壁面
        check_balance: 是否先检查平衡

    Raises:
        TreeError: 树不平衡
    """
    check_order(order)
    if check_balance:
        _check_balanced(tree)
    unique, has_element, cancelled = _coordinate_summary(tree.leaves, order)
    return _finish_nodes(unique, has_element, cancelled, tree.dim, order, subdomain)


def enumerate_nodes_distributed(dtree: DistributedTree, order: int,
                                subdomain: Optional[Subdomain] = None,
                                workers: int = 1, check_balance: bool = True) -> NodeSet:
    """各 rank 先汇总本地坐标，再按坐标合并标记（或运算）"""
    check_order(order)
    if check_balance:
        _check_balanced(dtree.global_tree())
    parts = run_ranks(lambda r: _coordinate_summary(dtree.parts[r].leaves, order),
                      dtree.rank_count, workers)
    linear = np.concatenate([p[0] for p in parts])
    unique, inverse = np.unique(linear, return_inverse=True)
    has_element = np.zeros(len(unique), dtype=bool)
    cancelled = np.zeros(len(unique), dtype=bool)
    has_element[inverse[np.concatenate([p[1] for p in parts])]] = True
    cancelled[inverse[np.concatenate([p[2] for p in parts])]] = True
    return _finish_nodes(unique, has_element, cancelled, dtree.dim, order, subdomain)


@dataclass
class HangingGovernance:
    """
    单元局部节点 → 全局非悬挂节点的插值

    element_map 的第 (leaf * m + j) 行：非悬挂节点为单位行，
    悬挂节点为父单元（必要时逐层向上）插值得到的权重
    """

    dim: int
    order: int
    plan: TraversalPlan
    element_map: sparse.csr_matrix  # (n_leaves * m, N)
    hanging: np.ndarray  # (n_leaves, m) bool

    @property
    def nodes_per_element(self) -> int:
        return (self.order + 1) ** self.dim

    @property
    def hanging_count(self) -> int:
        return int(self.hanging.sum())

    def stencil(self, leaf: int, local: int) -> Tuple[np.ndarray, np.ndarray]:
        """(全局编号, 权重)"""
        row = self.element_map.getrow(leaf * self.nodes_per_element + local)
        return row.indices.copy(), row.data.copy()

    def gather(self, u: np.ndarray) -> np.ndarray:
        """全局向量 → 各单元局部值 (n_leaves, m)"""
        return (self.element_map @ u).reshape(-1, self.nodes_per_element)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        return self.element_map.T @ np.asarray(local).reshape(-1)

    def incident_nodes(self, leaves: np.ndarray) -> np.ndarray:
        """给定叶子（含其悬挂节点约束）涉及的全局节点，升序"""
        m = self.nodes_per_element
        leaves = np.asarray(leaves, dtype=np.int64)
        rows = (leaves[:, None] * m + np.arange(m)[None, :]).reshape(-1)
        return np.unique(self.element_map[rows].indices)


def _level_interpolation(plan: TraversalPlan, k: int, weights: np.ndarray) -> sparse.csr_matrix:
    """层 k 缺失格点由层 k-1 父格点插值的稀疏矩阵 (n_k m, n_{k-1} m)"""
    lp = plan.levels[k]
    prev = plan.levels[k - 1]
    m = lp.node_ids.shape[1]
    oct_idx, slot = np.nonzero(lp.missing)
    table = weights[lp.child_digit[oct_idx], slot]  # (h, m)
    rows = np.repeat(oct_idx * m + slot, m)
    cols = (lp.parent[oct_idx][:, None] * m + np.arange(m)[None, :]).reshape(-1)
    data = table.reshape(-1)
    nz = data != 0.0
    return sparse.csr_matrix((data[nz], (rows[nz], cols[nz])), shape=(len(lp.octants) * m, len(prev.octants) * m))


def build_hanging_governance(tree: IncompleteTree, order: int, node_set: NodeSet,
                             plan: Optional[TraversalPlan] = None) -> HangingGovernance:
    """
    逐层构造单元局部节点的插值矩阵

    Raises:
        TreeError: 悬挂节点的插值链落到根单元上不存在的格点
    """
    if node_set.order != order:
        raise TreeError(f"节点集合阶数 {node_set.order} 与 {order} 不一致")
    plan = plan or build_plan(tree, node_set)
    dim = tree.dim
    m = (order + 1) ** dim
    n_nodes = len(node_set)
    if tree.is_empty:
        return HangingGovernance(dim, order, plan, sparse.csr_matrix((0, n_nodes)), np.zeros((0, m), dtype=bool))
    weights = child_interpolation_table(dim, order)

    rows_per_level: List[sparse.csr_matrix] = []
    undefined_prev: Optional[np.ndarray] = None
    leaf_rows: List[sparse.csr_matrix] = []
    leaf_order: List[np.ndarray] = []
    for k, lp in enumerate(plan.levels):
        n = len(lp.octants)
        present = np.flatnonzero(~lp.missing.reshape(-1))
        own = sparse.csr_matrix(
            (np.ones(len(present)), (present, lp.node_ids.reshape(-1)[present])), shape=(n * m, n_nodes)
        )
        if k == 0:
            current = own
            undefined = lp.missing.reshape(-1).copy()
        else:
            interp = _level_interpolation(plan, k, weights)
            current = (own + interp @ rows_per_level[-1]).tocsr()
            undefined = lp.missing.reshape(-1) & ((abs(interp) @ undefined_prev.astype(np.float64)) > 0)
        rows_per_level.append(current)
        undefined_prev = undefined

        leaf_local = lp.leaf_rows
        if len(leaf_local):
            idx = (leaf_local[:, None] * m + np.arange(m)[None, :]).reshape(-1)
            if np.any(undefined[idx]):
                raise TreeError(f"层级 {k} 的悬挂节点插值引用了不存在的节点")
            leaf_rows.append(current[idx])
            leaf_order.append(lp.leaf_index[leaf_local])

    stacked = sparse.vstack(leaf_rows).tocsr()
    order_idx = np.concatenate(leaf_order)
    perm = np.empty(len(order_idx), dtype=np.int64)
    perm[order_idx] = np.arange(len(order_idx))
    element_rows = (perm[:, None] * m + np.arange(m)[None, :]).reshape(-1)
    element_map = stacked[element_rows]
    element_map.eliminate_zeros()
    element_map.sort_indices()

    hanging = np.zeros((len(tree), m), dtype=bool)
    for lp in plan.levels:
        rows = lp.leaf_rows
        hanging[lp.leaf_index[rows]] = lp.missing[rows]
    return HangingGovernance(dim, order, plan, element_map.tocsr(), hanging)
