"""
子域分类器
把物理坐标下的挖除形状映射到单位立方体格点：八分体区域分类、格点节点分类
"""

from typing import Optional

import numpy as np

from src.geometry.shapes import SignedDistanceShape
from src.models.errors import MeshError
from src.models.octant import Octants, RegionClass
from src.models.tree import DomainMapping


class Subdomain:
    """挖除分类器 F"""

    def __init__(
        self,
        dim: int,
        shape: Optional[SignedDistanceShape] = None,
        mapping: Optional[DomainMapping] = None,
        carve: bool = True,
    ):
        """
        初始化子域

        Args:
            dim: 维度
            shape: 挖除形状（物理坐标），None 表示全部保留
            mapping: 单位立方体 → 物理域映射
            carve: False 时为“浸入”模式：截断单元仍标记为边界，其余一律保留
        """
        if shape is not None and shape.dim != dim:
            raise MeshError(f"形状维度 {shape.dim} 与子域维度 {dim} 不符")
        self.dim = dim
        self.shape = shape
        self.mapping = mapping or DomainMapping()
        self.carve = carve

    def immersed(self) -> "Subdomain":
        """同一几何、不做挖除的分类器"""
        return Subdomain(self.dim, self.shape, self.mapping, carve=False)

    def classify_octants(self, octants: Octants) -> np.ndarray:
        """八分体闭包的区域分类（RegionClass 取值）"""
        if self.shape is None:
            return np.full(len(octants), RegionClass.RETAIN_INTERNAL, dtype=np.int8)
        if len(octants) == 0:
            return np.zeros(0, dtype=np.int8)
        lo, hi = octants.unit_boxes()
        tags = self.shape.classify_boxes(self.mapping.to_physical(lo), self.mapping.to_physical(hi))
        if not self.carve:
            tags = np.where(tags == RegionClass.CARVED, RegionClass.RETAIN_INTERNAL, tags).astype(np.int8)
        return tags

    def signed_distance(self, unit_points: np.ndarray) -> np.ndarray:
        """物理符号距离（内正）"""
        if self.shape is None:
            return np.full(len(unit_points), -np.inf)
        return self.shape.evaluate(self.mapping.to_physical(unit_points))

    def carved_points(self, unit_points: np.ndarray) -> np.ndarray:
        """点是否被挖除（φ ≥ 0）"""
        unit_points = np.asarray(unit_points, dtype=np.float64)
        if self.shape is None or not self.carve or len(unit_points) == 0:
            return np.zeros(len(unit_points), dtype=bool)
        return self.signed_distance(unit_points) >= 0
