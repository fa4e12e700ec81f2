"""
Poisson 求解

- cg_solve：共轭梯度（可选 Jacobi 预条件），相对 / 绝对残差任一满足即收敛
- PoissonProblem / ManufacturedSolution：人造解与右端项 f = -Δu*
- solve_poisson：节点 → 约束 → 右端项 → 求解 → 误差
- error_norms：逐单元 Gauss 积分的 L2 误差与积分点 / 节点上的 L∞ 误差
- condition_estimate：1-范数（稠密精确或 onenormest + 稀疏 LU）与 2-范数（幂迭代 / 反迭代）
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from src.core.basis import gauss_legendre, tensor_points, tensor_values, tensor_weights
from src.core.console import log
from src.core.femops import (
    MASS,
    STIFFNESS,
    DirichletOperator,
    TraversalMatvec,
    apply_dirichlet,
    assemble,
)
from src.core.ghost import DistributedMatvec
from src.core.nodes import HangingGovernance
from src.core.partition import DistributedTree
from src.geometry.subdomain import Subdomain
from src.models.errors import SolverError
from src.models.nodeset import NodeSet
from src.models.octant import ROOT_SIDE
from src.models.report import CgReport, SolveReport
from src.models.tree import DomainMapping, IncompleteTree

LinearMap = Callable[[np.ndarray], np.ndarray]


def cg_solve(
    apply: Union[LinearMap, sparse.spmatrix],
    rhs: np.ndarray,
    rel_tol: float = 1e-6,
    abs_tol: float = 1e-6,
    max_iter: int = 10000,
    x0: Optional[np.ndarray] = None,
    diagonal: Optional[np.ndarray] = None,
    raise_on_failure: bool = False,
) -> Tuple[np.ndarray, CgReport]:
    """
    共轭梯度

    Args:
        apply: 对称正定算子（函数或稀疏矩阵）
        rhs: 右端项
        rel_tol: ‖r‖/‖r0‖ 容差
        abs_tol: ‖r‖ 容差
        max_iter: 最大迭代次数
        x0: 初值，默认 0
        diagonal: Jacobi 预条件用的对角元
        raise_on_failure: 未收敛时抛 SolverError，否则返回 converged=False 的报告

    Returns:
        (解, 迭代报告)
    """
    if sparse.issparse(apply):
        matrix = apply
        apply = lambda v: matrix @ v  # noqa: E731
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if x.shape != rhs.shape:
        raise SolverError(f"初值长度 {x.shape} 与右端项 {rhs.shape} 不一致")
    inv_diag = None
    if diagonal is not None:
        diagonal = np.asarray(diagonal, dtype=np.float64)
        if np.any(diagonal <= 0):
            raise SolverError("Jacobi 预条件要求对角元为正")
        inv_diag = 1.0 / diagonal

    r = rhs - apply(x) if x0 is not None else rhs.copy()
    r0 = float(np.linalg.norm(r))
    history = [r0]
    norm = r0
    if norm <= abs_tol or r0 == 0.0:
        return x, CgReport(0, 0.0 if r0 == 0.0 else 1.0, norm, True, history)
    z = r * inv_diag if inv_diag is not None else r
    p = z.copy()
    rz = float(np.dot(r, z))
    iterations = 0
    converged = False
    while iterations < max_iter:
        ap = apply(p)
        pap = float(np.dot(p, ap))
        if pap <= 0:
            raise SolverError(f"算子非正定（第 {iterations} 步 pᵀAp = {pap:.3e}）")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        iterations += 1
        norm = float(np.linalg.norm(r))
        history.append(norm)
        if norm <= rel_tol * r0 or norm <= abs_tol:
            converged = True
            break
        z = r * inv_diag if inv_diag is not None else r
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    report = CgReport(iterations, norm / r0, norm, converged, history)
    if not converged:
        message = f"CG 在 {max_iter} 步内未收敛（相对残差 {norm / r0:.3e}）"
        if raise_on_failure:
            raise SolverError(message)
        log(message)
    return x, report


@dataclass(frozen=True)
class ManufacturedSolution:
    """人造解：sine = Π sin(π x_i)，quadratic = Σ x_i²（物理坐标）"""

    kind: str = "sine"

    def __post_init__(self):
        if self.kind not in ("sine", "quadratic"):
            raise SolverError(f"未知人造解: {self.kind}")

    def exact(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if self.kind == "sine":
            return np.prod(np.sin(np.pi * points), axis=1)
        return np.sum(points ** 2, axis=1)

    def forcing(self, points: np.ndarray) -> np.ndarray:
        """f = -Δu*"""
        points = np.asarray(points, dtype=np.float64)
        dim = points.shape[1]
        if self.kind == "sine":
            return dim * np.pi ** 2 * self.exact(points)
        return np.full(len(points), -2.0 * dim)


@dataclass
class PoissonProblem:
    """-Δu = f，边界节点上 u = g"""

    subdomain: Subdomain
    order: int = 1
    solution: ManufacturedSolution = field(default_factory=ManufacturedSolution)
    dirichlet_mode: str = "node"  # node：g = u*(节点)；projected：g = u*(∂C 上最近点)

    def __post_init__(self):
        if self.dirichlet_mode not in ("node", "projected"):
            raise SolverError(f"未知 Dirichlet 模式: {self.dirichlet_mode}")

    @property
    def mapping(self) -> DomainMapping:
        return self.subdomain.mapping

    def dirichlet_values(self, node_set: NodeSet) -> Tuple[np.ndarray, np.ndarray]:
        """(边界节点编号, 边界值)"""
        ids = node_set.boundary_ids()
        points = node_set.physical_coordinates(self.mapping)[ids]
        if self.dirichlet_mode == "projected" and self.subdomain.shape is not None and len(ids):
            unit = node_set.unit_coordinates()[ids]
            carved = self.subdomain.carved_points(unit)
            if np.any(carved):
                try:
                    points[carved] = self.subdomain.shape.closest_boundary_point(points[carved])
                except NotImplementedError as exc:
                    raise SolverError(f"投影 Dirichlet 数据不可用: {exc}") from exc
        return ids, self.solution.exact(points)


def _operator(tree: IncompleteTree, governance: HangingGovernance, op, mapping: DomainMapping,
              dtree: Optional[DistributedTree], node_set: NodeSet, workers: int) -> LinearMap:
    if dtree is not None and dtree.rank_count > 1:
        return DistributedMatvec(dtree, node_set, governance, op, mapping, workers)
    return TraversalMatvec.from_governance(tree, governance, op, mapping)


def solve_poisson(
    problem: PoissonProblem,
    tree: IncompleteTree,
    node_set: NodeSet,
    governance: HangingGovernance,
    rel_tol: float = 1e-6,
    abs_tol: float = 1e-6,
    max_iter: int = 10000,
    jacobi: bool = False,
    solve_mode: str = "matvec",
    dtree: Optional[DistributedTree] = None,
    workers: int = 1,
    raise_on_failure: bool = False,
) -> Tuple[np.ndarray, SolveReport]:
    """
    完整求解流程

    右端项 b = M f_h（f 的节点插值乘以质量矩阵），边界节点按 Dirichlet 值消去

    Args:
        solve_mode: matvec（遍历无矩阵乘）或 assembled（装配 CSR）
        dtree: 多 rank 分区，给出时无矩阵乘走 ghost 交换

    Returns:
        (节点解, 求解报告)
    """
    mapping = problem.mapping
    n = len(node_set)
    if n == 0:
        raise SolverError("节点集合为空，无法求解")
    points = node_set.physical_coordinates(mapping)
    mass = _operator(tree, governance, MASS, mapping, dtree, node_set, workers)
    rhs = mass(problem.solution.forcing(points))
    ids, values = problem.dirichlet_values(node_set)

    diagonal = None
    if solve_mode == "assembled":
        matrix = assemble(tree, node_set, governance, STIFFNESS, mapping)
        constrained, b = apply_dirichlet(matrix, ids, values, rhs, symmetric=True)
        if jacobi:
            diagonal = constrained.diagonal()
        u, cg = cg_solve(constrained, b, rel_tol, abs_tol, max_iter, diagonal=diagonal,
                         raise_on_failure=raise_on_failure)
    elif solve_mode == "matvec":
        stiffness = _operator(tree, governance, STIFFNESS, mapping, dtree, node_set, workers)
        operator = DirichletOperator(stiffness, ids, n)
        b = operator.constrained_rhs(rhs, values)
        if jacobi:
            diagonal = operator.diagonal(assemble(tree, node_set, governance, STIFFNESS, mapping).diagonal())
        u, cg = cg_solve(operator, b, rel_tol, abs_tol, max_iter, diagonal=diagonal,
                         raise_on_failure=raise_on_failure)
    else:
        raise SolverError(f"未知求解模式: {solve_mode}")

    l2, linf = error_norms(u, problem, tree, node_set, governance)
    h = mapping.element_side(tree.max_level)
    report = SolveReport(
        iterations=cg.iterations,
        relative_residual=cg.relative_residual,
        converged=cg.converged,
        l2_error=l2,
        linf_error=linf,
        dofs=n,
        elements=len(tree),
        h=h,
        rank_count=dtree.rank_count if dtree is not None else 1,
        order=problem.order,
    )
    log(f"求解完成: {n} 个节点, {cg.iterations} 步, L2 = {l2:.3e}, L∞ = {linf:.3e}")
    return u, report


def error_norms(u_h: np.ndarray, problem: PoissonProblem, tree: IncompleteTree, node_set: NodeSet,
                governance: HangingGovernance, extra_points: int = 3) -> Tuple[float, float]:
    """
    (L2, L∞) 误差

    每个保留单元用 (p + extra_points)^d 点 Gauss 积分；悬挂节点值由约束重建；
    L∞ 取积分点与节点上的最大值
    """
    u_h = np.asarray(u_h, dtype=np.float64)
    if u_h.shape[0] != len(node_set):
        raise SolverError(f"解向量长度 {u_h.shape[0]} 与节点数 {len(node_set)} 不一致")
    if tree.is_empty:
        return 0.0, 0.0
    dim, order = tree.dim, governance.order
    mapping = problem.mapping
    xi, w = gauss_legendre(order + extra_points)
    ref_points = tensor_points(dim, xi)
    ref_weights = tensor_weights(dim, w)
    phi = tensor_values(dim, order, ref_points)

    local = governance.gather(u_h)
    lo = mapping.to_physical(tree.leaves.anchors.astype(np.float64) / ROOT_SIDE)
    sides = np.array([mapping.element_side(int(l)) for l in tree.leaves.levels])
    quad = lo[:, None, :] + (ref_points[None, :, :] + 1.0) / 2.0 * sides[:, None, None]
    exact = problem.solution.exact(quad.reshape(-1, dim)).reshape(len(tree), -1)
    diff = local @ phi.T - exact
    jac = (sides / 2.0) ** dim
    l2 = math.sqrt(float(np.sum(jac[:, None] * ref_weights[None, :] * diff ** 2)))
    node_diff = np.abs(u_h - problem.solution.exact(node_set.physical_coordinates(mapping)))
    linf = max(float(np.abs(diff).max()), float(node_diff.max()) if len(node_diff) else 0.0)
    return l2, linf


@dataclass
class ConditionEstimate:
    kappa: float
    norm: str  # "1" / "2"
    method: str  # dense / onenormest / power-inverse
    singular: bool = False


def condition_estimate(matrix: sparse.spmatrix, norm: str = "1", dense_limit: int = 5000,
                       tol: float = 1e-6, max_iter: int = 20000, seed: int = 0) -> ConditionEstimate:
    """
    条件数估计

    norm="1"：阶数不超过 dense_limit 时用稠密逆精确计算，否则 onenormest + 稀疏 LU；
    norm="2"：幂迭代求 λ_max、内层 CG 的反迭代求 λ_min（要求对称）
    """
    matrix = sparse.csr_matrix(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if n == 0:
        raise SolverError("空矩阵没有条件数")
    if norm == "1":
        return _condition_one_norm(matrix, dense_limit)
    if norm == "2":
        return _condition_two_norm(matrix, tol, max_iter, seed)
    raise SolverError(f"未知范数: {norm}")


def _condition_one_norm(matrix: sparse.csr_matrix, dense_limit: int) -> ConditionEstimate:
    n = matrix.shape[0]
    if n <= dense_limit:
        dense = matrix.toarray()
        try:
            inverse = np.linalg.inv(dense)
        except np.linalg.LinAlgError:
            return ConditionEstimate(math.inf, "1", "dense", True)
        kappa = float(np.abs(dense).sum(axis=0).max() * np.abs(inverse).sum(axis=0).max())
        return ConditionEstimate(kappa, "1", "dense", not math.isfinite(kappa))
    try:
        lu = spla.splu(matrix.tocsc())
    except RuntimeError:
        return ConditionEstimate(math.inf, "1", "onenormest", True)
    inverse = spla.LinearOperator(
        (n, n),
        matvec=lambda v: lu.solve(np.asarray(v, dtype=np.float64)),
        rmatvec=lambda v: lu.solve(np.asarray(v, dtype=np.float64), trans="T"),
        dtype=np.float64,
    )
    a_norm = float(abs(matrix).sum(axis=0).max())
    kappa = a_norm * float(spla.onenormest(inverse))
    return ConditionEstimate(kappa, "1", "onenormest", not math.isfinite(kappa))


def _condition_two_norm(matrix: sparse.csr_matrix, tol: float, max_iter: int, seed: int) -> ConditionEstimate:
    asym = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
    scale = abs(matrix).max() if matrix.nnz else 1.0
    if asym > 1e-12 * max(scale, 1e-300):
        raise SolverError("2-范数估计要求对称矩阵")
    rng = np.random.default_rng(seed)
    start = rng.standard_normal(matrix.shape[0])

    def iterate(step: LinearMap) -> float:
        x = start / np.linalg.norm(start)
        value = 0.0
        for _ in range(max_iter):
            y = step(x)
            norm = float(np.linalg.norm(y))
            if norm == 0.0:
                return 0.0
            x = y / norm
            new_value = float(x @ (matrix @ x))
            if abs(new_value - value) <= tol * abs(new_value):
                return new_value
            value = new_value
        log(f"特征值迭代在 {max_iter} 步内未达到容差")
        return value

    lam_max = iterate(lambda v: matrix @ v)

    def inverse_step(v: np.ndarray) -> np.ndarray:
        solution, report = cg_solve(matrix, v, rel_tol=1e-12, abs_tol=0.0, max_iter=10 * matrix.shape[0])
        if not report.converged:
            raise SolverError("反迭代内层 CG 未收敛")
        return solution

    try:
        lam_min = iterate(inverse_step)
    except SolverError:
        return ConditionEstimate(math.inf, "2", "power-inverse", True)
    if lam_min < 1e-14 * lam_max:
        return ConditionEstimate(math.inf, "2", "power-inverse", True)
    return ConditionEstimate(lam_max / lam_min, "2", "power-inverse", False)
