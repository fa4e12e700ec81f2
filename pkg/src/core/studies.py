"""
数值研究

- condition_study：通道长宽比下不完整树与拉伸完整网格的条件数
- convergence_study：人造解在多层网格上的误差与拟合阶数
- dof_element_comparison：挖除网格与浸入网格的单元 / 自由度对比
- voxelization_error_study：体素化边界节点的最大符号距离
- matvec_bench：遍历无矩阵乘的分阶段计时
"""

import math
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil

from src.core.balance import build_balanced_tree, construct_balanced
from src.core.console import log
from src.core.femops import STIFFNESS, ElementalOperator, TraversalMatvec, apply_dirichlet, assemble
from src.core.ghost import DistributedMatvec
from src.core.nodes import HangingGovernance, build_hanging_governance, enumerate_nodes
from src.core.octree import construct_uniform, refinement_seeds
from src.core.partition import DistributedTree
from src.core.solver import ManufacturedSolution, PoissonProblem, condition_estimate, solve_poisson
from src.geometry.shapes import Sphere, complement, retained_box
from src.geometry.subdomain import Subdomain
from src.models.errors import SolverError, TreeError
from src.models.nodeset import NodeSet, node_lattice_side
from src.models.report import (
    F_DOF_RANGE,
    F_ELEM_MIN,
    BenchPhase,
    ConditionRow,
    ConvergenceRow,
    ConvergenceTable,
    DofComparison,
    SdfRow,
)
from src.models.tree import DomainMapping, IncompleteTree

BENCH_PHASES = ("top_down", "leaf_matvec", "bottom_up", "ghost_exchange", "alloc")


@dataclass
class Discretization:
    """树 + 节点 + 约束"""

    tree: IncompleteTree
    node_set: NodeSet
    governance: HangingGovernance


def discretize(tree: IncompleteTree, order: int, subdomain: Optional[Subdomain] = None) -> Discretization:
    node_set = enumerate_nodes(tree, order, subdomain)
    return Discretization(tree, node_set, build_hanging_governance(tree, order, node_set))


def fitted_order(h: Sequence[float], errors: Sequence[float]) -> float:
    """log(误差) 对 log(h) 的最小二乘斜率"""
    h = np.asarray(h, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    ok = (errors > 0) & np.isfinite(errors)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(errors[ok]), 1)[0])


def channel_subdomain(length: int) -> Subdomain:
    """保留 [0, 1] × [0, 1/length] 的二维通道"""
    return Subdomain(2, retained_box([0.0, 0.0], [1.0, 1.0 / length]))


def disk_subdomain(radius: float = 0.25, center: Sequence[float] = (0.5, 0.5)) -> Subdomain:
    """保留圆盘，挖除盘外"""
    return Subdomain(2, complement(Sphere(center, radius)))


def _condition_of(tree: IncompleteTree, subdomain: Optional[Subdomain], op: ElementalOperator,
                  norm: str, symmetric: bool) -> Tuple[int, float]:
    disc = discretize(tree, 1, subdomain)
    matrix = assemble(tree, disc.node_set, disc.governance, op)
    ids = disc.node_set.boundary_ids()
    constrained, _ = apply_dirichlet(matrix, ids, 0.0, np.zeros(len(disc.node_set)), symmetric=symmetric)
    estimate = condition_estimate(constrained, norm=norm)
    if estimate.singular:
        log(f"条件数估计判定矩阵奇异（{len(disc.node_set)} 个节点）")
    return len(disc.node_set), estimate.kappa


def condition_study(lengths: Sequence[int] = (1, 2, 4, 8, 16), level: int = 5,
                    norm: str = "1") -> List[ConditionRow]:
    """
    通道长宽比研究

    incomplete：保留通道的不完整树，单元保持正方形；
    stretched：完整树，单元沿 y 方向压缩为 1/length；
    边界节点（壁面与挖除边界）全部作为单位行的 Dirichlet 约束。
    1-范数使用非对称单位行（只替换行），2-范数使用对称消去
    """
    rows: List[ConditionRow] = []
    symmetric = norm == "2"
    for length in lengths:
        if length < 1:
            raise SolverError(f"通道长度必须 ≥ 1: {length}")
        channel = channel_subdomain(length)
        tree = construct_uniform(channel, level)
        dofs, kappa = _condition_of(tree, channel, STIFFNESS, norm, symmetric)
        rows.append(ConditionRow(length, "incomplete", dofs, kappa))

        full = Subdomain(2)
        stretched = ElementalOperator("stiffness", (1.0, 1.0 / length))
        dofs, kappa = _condition_of(construct_uniform(full, level), full, stretched, norm, symmetric)
        rows.append(ConditionRow(length, "stretched", dofs, kappa))
        log(f"通道长度 {length}: incomplete κ = {rows[-2].kappa:.1f} ({rows[-2].dofs} 自由度), "
            f"stretched κ = {kappa:.1f}")
    return rows


def condition_trends(rows: Sequence[ConditionRow]) -> Dict[str, float]:
    """
    条件数随通道长度的走势

    incomplete_decreasing：不完整树 κ 严格递减；
    stretched_nondecreasing：拉伸网格 κ 不减；
    stretched_jump：拉伸网格最后两个长度的 κ 之比
    """
    incomplete = [r.kappa for r in sorted(rows, key=lambda r: r.length) if r.variant == "incomplete"]
    stretched = [r.kappa for r in sorted(rows, key=lambda r: r.length) if r.variant == "stretched"]
    return {
        "incomplete_decreasing": all(b < a for a, b in zip(incomplete[:-1], incomplete[1:])),
        "stretched_nondecreasing": all(b >= a for a, b in zip(stretched[:-1], stretched[1:])),
        "stretched_jump": stretched[-1] / stretched[-2] if len(stretched) > 1 else math.nan,
    }


def convergence_study(subdomain: Subdomain, levels: Sequence[int], order: int = 1,
                      manufactured: str = "sine", dirichlet_mode: str = "node",
                      rel_tol: float = 1e-10, abs_tol: float = 1e-14, max_iter: int = 50000,
                      jacobi: bool = False) -> ConvergenceTable:
    """
    逐层均匀网格求解人造解，拟合 L2 / L∞ 阶数

    任一层求解失败时中止，返回已完成的部分并记录 aborted_at
    """
    if len(levels) < 3:
        raise SolverError(f"收敛研究至少需要 3 个层级: {list(levels)}")
    problem = PoissonProblem(subdomain, order, ManufacturedSolution(manufactured), dirichlet_mode)
    table = ConvergenceTable(rows=[])
    for level in levels:
        tree = construct_uniform(subdomain, level)
        if tree.is_empty:
            raise TreeError("子域完全被挖除，无法做收敛研究")
        disc = discretize(tree, order, subdomain)
        try:
            _, report = solve_poisson(problem, tree, disc.node_set, disc.governance, rel_tol, abs_tol,
                                      max_iter, jacobi, raise_on_failure=True)
        except SolverError as exc:
            log(f"层级 {level} 求解失败，中止收敛研究: {exc}")
            table.aborted_at = int(level)
            break
        table.rows.append(ConvergenceRow(int(level), report.h, report.dofs, report.l2_error, report.linf_error))
    hs = [r.h for r in table.rows]
    table.l2_order = fitted_order(hs, [r.l2 for r in table.rows])
    table.linf_order = fitted_order(hs, [r.linf for r in table.rows])
    log(f"收敛阶: L2 = {table.l2_order:.2f}, L∞ = {table.linf_order:.2f}")
    return table


def _tree_and_dofs(subdomain: Subdomain, base_level: int, object_level: int, order: int,
                   max_elements: int) -> Tuple[int, int]:
    seeds = refinement_seeds(subdomain, base_level, object_level)
    if len(seeds) > max_elements:
        raise TreeError(f"种子数 {len(seeds)} 超过单元上限 {max_elements}")
    tree = build_balanced_tree(subdomain, seeds)
    if len(tree) > max_elements:
        raise TreeError(f"单元数 {len(tree)} 超过上限 {max_elements}")
    return len(tree), len(enumerate_nodes(tree, order, subdomain, check_balance=False))


def dof_element_comparison(subdomain: Subdomain, base_level: int, object_level: int, order: int = 1,
                           max_elements: int = 2_000_000) -> DofComparison:
    """
    同一细化流程下挖除网格与浸入（不挖除）网格的规模对比

    Raises:
        TreeError: 浸入网格超过单元上限
    """
    carved_elements, carved_dofs = _tree_and_dofs(subdomain, base_level, object_level, order, max_elements)
    immersed_elements, immersed_dofs = _tree_and_dofs(
        subdomain.immersed(), base_level, object_level, order, max_elements
    )
    result = DofComparison(object_level, carved_elements, carved_dofs, immersed_elements, immersed_dofs)
    log(f"物体层级 {object_level}: f_elem = {result.f_elem:.3f}, f_DOF = {result.f_dof:.3f}")
    if not result.in_band():
        log(f"物体层级 {object_level}: 比例不在目标区间内 (f_elem ≥ {F_ELEM_MIN}, f_DOF ∈ {F_DOF_RANGE})")
    return result


def boundary_node_distance(subdomain: Subdomain, node_set: NodeSet) -> float:
    """挖除边界节点（不含根立方体壁面）的最大 |φ|"""
    side = node_lattice_side(node_set.order)
    wall = np.any((node_set.keys == 0) | (node_set.keys == side), axis=1)
    unit = node_set.unit_coordinates()
    carved = node_set.boundary & ~wall & subdomain.carved_points(unit)
    if not np.any(carved):
        return 0.0
    return float(np.abs(subdomain.signed_distance(unit[carved])).max())


def voxelization_error_study(subdomain: Subdomain, levels: Sequence[int],
                             base_level: int = 2) -> List[SdfRow]:
    """每个层级：截断八分体细化到该层级 → 平衡 → 节点 → 边界节点最大符号距离"""
    rows: List[SdfRow] = []
    for level in levels:
        base = min(base_level, level)
        tree = build_balanced_tree(subdomain, refinement_seeds(subdomain, base, level))
        node_set = enumerate_nodes(tree, 1, subdomain, check_balance=False)
        rows.append(SdfRow(int(level), len(tree), boundary_node_distance(subdomain, node_set)))
        log(f"层级 {level}: {len(tree)} 个单元, max|φ| = {rows[-1].max_abs_distance:.4e}")
    return rows


def _mean_std(samples: List[float]) -> Tuple[float, float]:
    if not samples:
        return 0.0, 0.0
    arr = np.asarray(samples)
    return float(arr.mean()), float(arr.std())


def matvec_bench(
    dtree: DistributedTree,
    node_set: NodeSet,
    governance: HangingGovernance,
    op: ElementalOperator = STIFFNESS,
    mapping: Optional[DomainMapping] = None,
    iterations: int = 100,
    warmup: int = 5,
    workers: int = 1,
    seed: int = 0,
) -> Tuple[List[BenchPhase], Dict[str, float]]:
    """
    预热后计时 iterations 次无矩阵乘，按阶段统计均值与标准差

    Returns:
        (各阶段统计, 元信息：单元数、节点数、rank 数、进程常驻内存)
    """
    if iterations < 1:
        raise SolverError(f"计时次数必须 ≥ 1: {iterations}")
    tree = dtree.global_tree()
    if dtree.rank_count > 1:
        engine = DistributedMatvec(dtree, node_set, governance, op, mapping, workers)
    else:
        engine = TraversalMatvec.from_governance(tree, governance, op, mapping)
    u = np.random.default_rng(seed).standard_normal(len(node_set))
    for _ in range(warmup):
        engine(u)
    samples: Dict[str, List[float]] = {phase: [] for phase in BENCH_PHASES + ("total",)}
    for _ in range(iterations):
        engine.reset_timings()
        start = time.perf_counter()
        engine(u)
        total = time.perf_counter() - start
        timings = engine.timings
        for phase in BENCH_PHASES:
            samples[phase].append(timings.get(phase, 0.0))
        samples["total"].append(total)
    phases = [BenchPhase(name, *_mean_std(values)) for name, values in samples.items()]
    meta = {
        "elements": float(len(tree)),
        "nodes": float(len(node_set)),
        "rank_count": float(dtree.rank_count),
        "workers": float(workers),
        "order": float(governance.order),
        "rss_mb": psutil.Process(os.getpid()).memory_info().rss / 2 ** 20,
    }
    log(f"matvec 平均耗时 {phases[-1].mean_s * 1e3:.3f} ms（{len(tree)} 个单元, {len(node_set)} 个节点）")
    return phases, meta


def build_distributed(subdomain: Subdomain, seeds, order: int, rank_count: int, load_tol: float,
                      workers: int = 1) -> Tuple[DistributedTree, Discretization]:
    """平衡树构造 + 节点 + 约束（多 rank 流水线）"""
    dtree = construct_balanced(subdomain, seeds, rank_count, load_tol, workers)
    tree = dtree.global_tree()
    if tree.is_empty:
        raise TreeError("子域完全被挖除（domain fully carved）")
    return dtree, discretize(tree, order, subdomain)


def sweep_ratio(values: Sequence[float]) -> float:
    """相邻比值的平均（用于一阶收敛检查）"""
    values = [v for v in values if v > 0]
    if len(values) < 2:
        return math.nan
    return float(np.mean([b / a for a, b in zip(values[:-1], values[1:])]))
