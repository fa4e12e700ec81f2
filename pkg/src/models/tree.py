"""
不完整八叉树与物理域映射
"""

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from src.models.errors import ConfigError
from src.models.octant import Octants, RegionClass


@dataclass(frozen=True)
class DomainMapping:
    """单位立方体到物理域的各向同性映射：x_phys = origin + scale * x_unit"""

    scale: float = 1.0  # 每单位立方体边长对应的物理长度
    origin: Tuple[float, ...] = field(default_factory=tuple)  # 物理原点，留空视为 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"mapping.scale 必须为正数: {self.scale}")

    def origin_array(self, dim: int) -> np.ndarray:
        if not self.origin:
            return np.zeros(dim)
        if len(self.origin) != dim:
            raise ConfigError(f"mapping.origin 维度 {len(self.origin)} 与 dimension {dim} 不符")
        return np.asarray(self.origin, dtype=np.float64)

    def to_physical(self, unit_points: np.ndarray) -> np.ndarray:
        unit_points = np.asarray(unit_points, dtype=np.float64)
        return self.origin_array(unit_points.shape[-1]) + self.scale * unit_points

    def to_unit(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.origin_array(points.shape[-1])) / self.scale

    def element_side(self, level: int) -> float:
        """层级 level 单元的物理边长"""
        return float(np.ldexp(self.scale, -int(level)))


@dataclass
class IncompleteTree:
    """
    不完整八叉树（线性存储）

    叶子按 SFC 严格排序、无重复、互不为祖先；每个叶子带区域分类标签
    """

    leaves: Octants
    tags: np.ndarray  # (n,) RegionClass 取值

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.int8).reshape(-1)
        if self.tags.shape[0] != len(self.leaves):
            raise ValueError("标签数量与叶子数量不一致")

    @classmethod
    def empty(cls, dim: int) -> "IncompleteTree":
        return cls(Octants.empty(dim), np.zeros(0, dtype=np.int8))

    def __len__(self) -> int:
        return len(self.leaves)

    @property
    def dim(self) -> int:
        return self.leaves.dim

    @property
    def is_empty(self) -> bool:
        return len(self.leaves) == 0

    @property
    def max_level(self) -> int:
        return int(self.leaves.levels.max()) if len(self.leaves) else 0

    def subset(self, index: Sequence[int]) -> "IncompleteTree":
        index = np.asarray(index)
        return IncompleteTree(self.leaves[index], self.tags[index])

    def boundary_mask(self) -> np.ndarray:
        return self.tags == RegionClass.RETAIN_BOUNDARY

    def same_leaves(self, other: "IncompleteTree") -> bool:
        return self.leaves.same_as(other.leaves)
