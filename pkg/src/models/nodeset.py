"""
有限元节点集合
节点坐标存放在间距 1/(p · 2^L_MAX) 的整数格点上，相等判断精确
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.models.errors import TreeError
from src.models.octant import ROOT_SIDE
from src.models.tree import DomainMapping


def node_lattice_side(order: int) -> int:
    """节点格点下根立方体的边长 p · 2^L_MAX"""
    return order * ROOT_SIDE


def node_linear_keys(keys: np.ndarray, order: int) -> np.ndarray:
    """节点格点坐标 → 唯一 uint64 编号（混合进制，基数 p · 2^L_MAX + 1）"""
    keys = np.asarray(keys, dtype=np.int64)
    base = np.uint64(node_lattice_side(order) + 1)
    linear = np.zeros(keys.shape[0], dtype=np.uint64)
    for axis in range(keys.shape[1] - 1, -1, -1):
        linear = linear * base + keys[:, axis].astype(np.uint64)
    return linear


@dataclass
class NodeSet:
    """
    唯一、非悬挂节点

    keys 按节点曲线序排列，全局编号即行号 0..N-1；
    boundary 标记子域边界节点（被挖除点或根立方体壁面）
    """

    dim: int
    order: int
    keys: np.ndarray  # (N, d) 节点格点坐标
    boundary: np.ndarray  # (N,) bool
    _linear: np.ndarray = field(init=False, repr=False)
    _perm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, self.dim)
        self.boundary = np.asarray(self.boundary, dtype=bool).reshape(-1)
        if self.boundary.shape[0] != self.keys.shape[0]:
            raise TreeError("节点边界标记数量与节点数不一致")
        linear = node_linear_keys(self.keys, self.order)
        self._perm = np.argsort(linear, kind="stable")
        self._linear = linear[self._perm]
        if len(linear) > 1 and np.any(self._linear[1:] == self._linear[:-1]):
            raise TreeError("节点集合中存在重复坐标")

    @classmethod
    def empty(cls, dim: int, order: int) -> "NodeSet":
        return cls(dim, order, np.zeros((0, dim), dtype=np.int64), np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """坐标 → 全局编号，不存在为 -1"""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, self.dim)
        if len(self) == 0 or len(keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        linear = node_linear_keys(keys, self.order)
        pos = np.searchsorted(self._linear, linear)
        pos = np.minimum(pos, len(self._linear) - 1)
        hit = self._linear[pos] == linear
        return np.where(hit, self._perm[pos], -1).astype(np.int64)

    def subset(self, ids: np.ndarray) -> "NodeSet":
        """按全局编号（升序）取子集，新编号为其在 ids 中的位置"""
        ids = np.asarray(ids, dtype=np.int64)
        return NodeSet(self.dim, self.order, self.keys[ids], self.boundary[ids])

    def unit_coordinates(self) -> np.ndarray:
        return self.keys.astype(np.float64) / node_lattice_side(self.order)

    def physical_coordinates(self, mapping: Optional[DomainMapping] = None) -> np.ndarray:
        return (mapping or DomainMapping()).to_physical(self.unit_coordinates())

    def boundary_ids(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    def same_as(self, other: "NodeSet") -> bool:
        return (
            self.dim == other.dim
            and self.order == other.order
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.boundary, other.boundary)
        )
