"""
有限元算子

- elemental_matrix：Poisson 刚度 / 质量单元矩阵（按层级缓存，单元都是立方体）
- TraversalMatvec / matvec：基于树遍历的无矩阵乘
- assemble：同一套编号分桶得到的三元组装配，重复项求和
- apply_dirichlet / DirichletOperator：矩阵形式与无矩阵形式的 Dirichlet 约束
"""

import time
from dataclasses import dataclass
from functools import lru_cache, reduce
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import io as sio
from scipy import sparse

from src.core.basis import check_order, reference_1d
from src.core.console import log
from src.core.nodes import HangingGovernance
from src.core.traversal import Traversal, TraversalPlan
from src.models.errors import PartitionError, SolverError
from src.models.nodeset import NodeSet
from src.models.octant import OctantKey
from src.models.tree import DomainMapping, IncompleteTree

OPERATOR_KINDS = ("stiffness", "mass")


@dataclass(frozen=True)
class ElementalOperator:
    """
    单元算子

    kind: stiffness（Poisson 刚度）或 mass
    stretch: 各轴拉伸系数，空表示各向同性（只影响单元矩阵的度量项）
    """

    kind: str = "stiffness"
    stretch: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise SolverError(f"未知单元算子: {self.kind}")
        if any(s <= 0 for s in self.stretch):
            raise SolverError(f"拉伸系数必须为正: {self.stretch}")

    def sides(self, level: int, dim: int, mapping: DomainMapping) -> Tuple[float, ...]:
        h = mapping.element_side(level)
        stretch = self.stretch or (1.0,) * dim
        if len(stretch) != dim:
            raise SolverError(f"拉伸系数个数 {len(stretch)} 与维度 {dim} 不符")
        return tuple(h * s for s in stretch)


STIFFNESS = ElementalOperator("stiffness")
MASS = ElementalOperator("mass")


@lru_cache(maxsize=256)
def _cached_matrix(kind: str, order: int, sides: Tuple[float, ...]) -> np.ndarray:
    mass_1d, stiff_1d = reference_1d(order)
    dim = len(sides)
    jac = float(np.prod([h / 2.0 for h in sides]))

    def kron_axes(factors):
        # 局部编号 x 轴最快，最后一个 kron 因子对应 x 轴
        return reduce(np.kron, factors[::-1])

    if kind == "mass":
        matrix = jac * kron_axes([mass_1d] * dim)
    else:
        matrix = np.zeros(((order + 1) ** dim,) * 2)
        for axis in range(dim):
            factors = [stiff_1d if a == axis else mass_1d for a in range(dim)]
            matrix += jac * (2.0 / sides[axis]) ** 2 * kron_axes(factors)
    matrix = 0.5 * (matrix + matrix.T)
    matrix.setflags(write=False)
    return matrix


def elemental_matrix(op: ElementalOperator, leaf, order: int,
                     mapping: Optional[DomainMapping] = None, dim: Optional[int] = None) -> np.ndarray:
    """
    单元矩阵 (m, m)

    Args:
        op: 单元算子
        leaf: OctantKey，或层级（此时需给出 dim）
        order: 单元阶数
        mapping: 物理映射
    """
    check_order(order)
    mapping = mapping or DomainMapping()
    if isinstance(leaf, OctantKey):
        level, dim = leaf.level, leaf.dim
    else:
        level = int(leaf)
        if dim is None:
            raise SolverError("按层级取单元矩阵时需要给出维度")
    return _cached_matrix(op.kind, order, op.sides(level, dim, mapping))


class TraversalMatvec:
    """绑定一棵树与单元算子的无矩阵乘"""

    def __init__(self, plan: TraversalPlan, tree: IncompleteTree, op: ElementalOperator,
                 mapping: Optional[DomainMapping] = None):
        if plan.leaf_count != len(tree):
            raise PartitionError(f"遍历计划叶子数 {plan.leaf_count} 与树 {len(tree)} 不一致")
        self.traversal = Traversal(plan)
        self.node_count = plan.node_count
        levels = tree.leaves.levels
        self._groups = [
            (np.flatnonzero(levels == level), elemental_matrix(op, int(level), plan.order, mapping, plan.dim))
            for level in np.unique(levels)
        ]

    @classmethod
    def from_governance(cls, tree: IncompleteTree, governance: HangingGovernance, op: ElementalOperator,
                        mapping: Optional[DomainMapping] = None) -> "TraversalMatvec":
        return cls(governance.plan, tree, op, mapping)

    @property
    def timings(self) -> Dict[str, float]:
        return self.traversal.timings

    def reset_timings(self) -> None:
        self.traversal.timings.clear()

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        buffers = self.traversal.allocate()
        values = self.traversal.top_down(u)
        local = self.traversal.leaf_values(values)
        start = time.perf_counter()
        result = np.empty_like(local)
        for idx, matrix in self._groups:
            result[idx] = local[idx] @ matrix
        self.traversal.timings["leaf_matvec"] = self.traversal.timings.get("leaf_matvec", 0.0) + (
            time.perf_counter() - start
        )
        return self.traversal.bottom_up(result, buffers)


def _check_sizes(tree: IncompleteTree, node_set: NodeSet, governance: HangingGovernance) -> None:
    if governance.hanging.shape[0] != len(tree):
        raise PartitionError(f"约束叶子数 {governance.hanging.shape[0]} 与树 {len(tree)} 不一致")
    if governance.plan.node_count != len(node_set):
        raise PartitionError(f"约束节点数 {governance.plan.node_count} 与节点集合 {len(node_set)} 不一致")


def matvec(tree: IncompleteTree, node_set: NodeSet, governance: HangingGovernance,
           op: ElementalOperator, u: np.ndarray, mapping: Optional[DomainMapping] = None) -> np.ndarray:
    """
    无矩阵乘 y = A u（不含 Dirichlet 处理）

    Raises:
        PartitionError: 向量长度与节点数不一致
    """
    _check_sizes(tree, node_set, governance)
    if np.asarray(u).shape[0] != len(node_set):
        raise PartitionError(f"向量长度 {np.asarray(u).shape[0]} 与节点数 {len(node_set)} 不一致")
    return TraversalMatvec.from_governance(tree, governance, op, mapping)(u)


def assemble(tree: IncompleteTree, node_set: NodeSet, governance: HangingGovernance,
             op: ElementalOperator, mapping: Optional[DomainMapping] = None) -> sparse.csr_matrix:
    """
    三元组装配

    每个叶子按其局部节点的插值行展开为 (行, 列, 值)，悬挂节点的行列经约束权重分摊，
    重复三元组在转 CSR 时求和
    """
    _check_sizes(tree, node_set, governance)
    n = len(node_set)
    if tree.is_empty:
        return sparse.csr_matrix((n, n))
    m = governance.nodes_per_element
    coo = governance.element_map.tocoo()
    leaf = coo.row // m
    local = coo.row % m
    ids = coo.col
    w = coo.data

    levels = tree.leaves.levels
    unique_levels, level_idx = np.unique(levels, return_inverse=True)
    stack = np.stack([elemental_matrix(op, int(l), governance.order, mapping, tree.dim) for l in unique_levels])

    counts = np.bincount(leaf, minlength=len(tree))
    starts = np.cumsum(counts) - counts
    reps = counts[leaf]
    first = np.repeat(np.arange(len(leaf)), reps)
    block_start = np.repeat(np.cumsum(reps) - reps, reps)
    second = starts[leaf[first]] + (np.arange(len(first)) - block_start)

    values = w[first] * stack[level_idx[leaf[first]], local[first], local[second]] * w[second]
    matrix = sparse.coo_matrix((values, (ids[first], ids[second])), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def export_matrix_market(matrix: sparse.spmatrix, path: Path, comment: str = "") -> Path:
    """MatrixMarket 坐标格式导出"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sio.mmwrite(str(path), sparse.coo_matrix(matrix), comment=comment)
    log(f"矩阵已导出: {path} ({matrix.shape[0]}×{matrix.shape[1]}, nnz={matrix.nnz})")
    return path


def _boundary_vector(n: int, boundary_ids: np.ndarray, values) -> Tuple[np.ndarray, np.ndarray]:
    boundary_ids = np.asarray(boundary_ids, dtype=np.int64)
    if len(boundary_ids) and (boundary_ids.min() < 0 or boundary_ids.max() >= n):
        raise SolverError(f"边界节点编号越界 [0, {n})")
    g = np.zeros(n)
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), boundary_ids.shape)
    g[boundary_ids] = values
    return boundary_ids, g


def apply_dirichlet(matrix: sparse.spmatrix, boundary_ids: np.ndarray, values, rhs: np.ndarray,
                    symmetric: bool = True) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """
    矩阵形式的 Dirichlet 约束

    symmetric=True：边界行列清零、对角置 1，右端项减去边界列贡献；
    symmetric=False：只把边界行换成单位行

    Returns:
        (约束后矩阵, 约束后右端项)
    """
    n = matrix.shape[0]
    boundary_ids, g = _boundary_vector(n, boundary_ids, values)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != n:
        raise SolverError(f"右端项长度 {rhs.shape[0]} 与矩阵阶数 {n} 不一致")
    mask = np.zeros(n)
    mask[boundary_ids] = 1.0
    keep = sparse.diags(1.0 - mask)
    fixed = sparse.diags(mask)
    matrix = sparse.csr_matrix(matrix)
    if symmetric:
        constrained = keep @ matrix @ keep + fixed
        new_rhs = rhs - matrix @ g
    else:
        constrained = keep @ matrix + fixed
        new_rhs = rhs.copy()
    new_rhs[boundary_ids] = g[boundary_ids]
    constrained = sparse.csr_matrix(constrained)
    constrained.sort_indices()
    return constrained, new_rhs


class DirichletOperator:
    """
    无矩阵形式的对称消去：输入的边界分量冻结（按 0 参与乘法），输出的边界分量等于输入

    与 apply_dirichlet(symmetric=True) 的矩阵逐项一致
    """

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray], boundary_ids: np.ndarray, size: int):
        self._apply = apply
        self.size = size
        self.boundary_ids, _ = _boundary_vector(size, boundary_ids, 0.0)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        frozen = np.array(u, dtype=np.float64, copy=True)
        frozen[self.boundary_ids] = 0.0
        result = self._apply(frozen)
        result[self.boundary_ids] = np.asarray(u)[self.boundary_ids]
        return result

    def constrained_rhs(self, rhs: np.ndarray, values) -> np.ndarray:
        """b - A g，边界分量替换为 g"""
        _, g = _boundary_vector(self.size, self.boundary_ids, values)
        result = np.asarray(rhs, dtype=np.float64) - self._apply(g)
        result[self.boundary_ids] = g[self.boundary_ids]
        return result

    def residual(self, u: np.ndarray, rhs: np.ndarray, values) -> np.ndarray:
        """约束系统残差 A_c u - b_c；边界分量为 u - g"""
        return self(u) - self.constrained_rhs(rhs, values)

    def diagonal(self, diagonal: np.ndarray) -> np.ndarray:
        diagonal = np.array(diagonal, dtype=np.float64, copy=True)
        diagonal[self.boundary_ids] = 1.0
        return diagonal
