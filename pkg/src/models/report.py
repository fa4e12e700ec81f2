"""
结果报告数据模型
每个报告行都能转换为 CSV 行（键与列名一致）
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

# 挖除相对浸入的目标比例：f_elem 下限与 f_DOF 区间
F_ELEM_MIN = 1.5
F_DOF_RANGE = (1.2, 1.5)


@dataclass
class CgReport:
    """共轭梯度迭代结果"""

    iterations: int  # 迭代次数
    relative_residual: float  # 最终 ‖r‖/‖r0‖
    absolute_residual: float  # 最终 ‖r‖
    converged: bool  # 是否满足容差
    residual_history: List[float] = field(default_factory=list)  # 每步 ‖r‖


@dataclass
class SolveReport:
    """Poisson 求解报告"""

    iterations: int
    relative_residual: float
    converged: bool
    l2_error: float  # L2(Ω) 误差
    linf_error: float  # L∞(Ω) 误差
    dofs: int  # 非悬挂节点数
    elements: int  # 保留单元数
    h: float  # 最细单元物理边长
    rank_count: int = 1
    order: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    l2: float
    linf: float

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ConvergenceTable:
    """收敛表 + 拟合阶数"""

    rows: List[ConvergenceRow]
    l2_order: float = float("nan")
    linf_order: float = float("nan")
    aborted_at: Optional[int] = None  # 求解失败时的层级

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [r.to_row() for r in self.rows],
            "l2_order": self.l2_order,
            "linf_order": self.linf_order,
            "aborted_at": self.aborted_at,
        }


@dataclass
class ConditionRow:
    length: int  # 通道长度（长宽比）
    variant: str  # incomplete / stretched
    dofs: int
    kappa: float

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class DofComparison:
    """挖除网格与浸入（完整）网格的单元 / 自由度对比"""

    level: int  # 物体表面细化层级
    carved_elements: int
    carved_dofs: int
    immersed_elements: int
    immersed_dofs: int

    @property
    def f_elem(self) -> float:
        return self.immersed_elements / max(self.carved_elements, 1)

    @property
    def f_dof(self) -> float:
        return self.immersed_dofs / max(self.carved_dofs, 1)

    def in_band(self) -> bool:
        """f_elem 与 f_DOF 是否落在目标比例内"""
        return self.f_elem >= F_ELEM_MIN and F_DOF_RANGE[0] <= self.f_dof <= F_DOF_RANGE[1]

    def to_rows(self) -> List[Dict[str, Any]]:
        return [
            {"level": self.level, "variant": "carved",
             "elements": self.carved_elements, "dofs": self.carved_dofs},
            {"level": self.level, "variant": "immersed",
             "elements": self.immersed_elements, "dofs": self.immersed_dofs},
        ]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(f_elem=self.f_elem, f_dof=self.f_dof, in_band=self.in_band())
        return data


@dataclass
class SdfRow:
    level: int
    elements: int
    max_abs_distance: float

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class BenchPhase:
    phase: str  # top_down / leaf_matvec / bottom_up / ghost_exchange / alloc / total
    mean_s: float
    std_s: float

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RankStats:
    rank: int
    elements: int
    owned_nodes: int
    ghost_nodes: int
    eta: float  # N_G / N_L

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)
