"""
八叉树基础数据模型
格点、八分体键、区域分类枚举，以及按数组存储的八分体集合
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.models.errors import TreeError

# 每个坐标轴的最大细分层数
L_MAX = 20
# 根立方体在格点单位下的边长
ROOT_SIDE = 1 << L_MAX

SUPPORTED_DIMS = (2, 3)


class RegionClass(IntEnum):
    """区域分类（八分体闭包相对被挖除集合 C 的位置）"""

    CARVED = 0  # 闭包完全位于 C 内
    RETAIN_INTERNAL = 1  # 闭包完全位于 C' 内
    RETAIN_BOUNDARY = 2  # 与 ∂C 相交（被截断单元）


class PointClass(IntEnum):
    """点分类，点不存在“截断”状态"""

    CARVED = 0
    RETAINED = 1


def _check_dim(dim: int) -> None:
    if dim not in SUPPORTED_DIMS:
        raise TreeError(f"不支持的维度: {dim}（仅支持 2 或 3）")


@dataclass(frozen=True)
class OctantKey:
    """
    八分体键：层级 + 格点锚点

    锚点每个分量都是 2^(L_MAX - level) 的整数倍，区域为半开格点立方体
    """

    level: int
    anchor: Tuple[int, ...]

    def __post_init__(self):
        _check_dim(len(self.anchor))
        if not 0 <= self.level <= L_MAX:
            raise TreeError(f"层级越界: {self.level}")
        side = 1 << (L_MAX - self.level)
        for a in self.anchor:
            if a < 0 or a >= ROOT_SIDE or a % side:
                raise TreeError(f"锚点 {self.anchor} 与层级 {self.level} 不对齐")

    @classmethod
    def root(cls, dim: int) -> "OctantKey":
        return cls(0, (0,) * dim)

    @classmethod
    def from_cell(cls, level: int, cell: Sequence[int]) -> "OctantKey":
        """由层级内的单元编号构造（cell 为该层网格上的整数坐标）"""
        side = 1 << (L_MAX - level)
        return cls(level, tuple(int(c) * side for c in cell))

    @property
    def dim(self) -> int:
        return len(self.anchor)

    @property
    def side(self) -> int:
        return 1 << (L_MAX - self.level)

    def parent(self) -> "OctantKey":
        if self.level == 0:
            raise TreeError("根节点没有父节点")
        mask = ~((1 << (L_MAX - self.level + 1)) - 1)
        return OctantKey(self.level - 1, tuple(a & mask for a in self.anchor))

    def child(self, digit: int) -> "OctantKey":
        """按 Morton 子编号取子节点，第 i 位对应第 i 轴偏移"""
        if self.level == L_MAX:
            raise TreeError("已达到最大层级")
        half = self.side >> 1
        return OctantKey(
            self.level + 1,
            tuple(a + (((digit >> i) & 1) * half) for i, a in enumerate(self.anchor)),
        )

    def children(self) -> List["OctantKey"]:
        return [self.child(c) for c in range(1 << self.dim)]

    def is_ancestor_or_equal(self, other: "OctantKey") -> bool:
        if other.level < self.level:
            return False
        return all(
            a <= b < a + self.side for a, b in zip(self.anchor, other.anchor)
        )

    def overlaps(self, other: "OctantKey") -> bool:
        """两个半开区域是否重叠（即一方是另一方的祖先或相等）"""
        return self.is_ancestor_or_equal(other) or other.is_ancestor_or_equal(self)


@dataclass
class Octants:
    """
    八分体集合（结构化数组形式）

    levels: (n,) 层级
    anchors: (n, d) 格点锚点
    """

    levels: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        self.anchors = np.asarray(self.anchors, dtype=np.int64)
        if self.anchors.ndim != 2 or self.anchors.shape[0] != self.levels.shape[0]:
            raise TreeError(
                f"八分体数组形状不一致: levels {self.levels.shape}, anchors {self.anchors.shape}"
            )
        _check_dim(self.anchors.shape[1])

    @classmethod
    def empty(cls, dim: int) -> "Octants":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, dim), dtype=np.int64))

    @classmethod
    def root(cls, dim: int) -> "Octants":
        return cls(np.zeros(1, dtype=np.int64), np.zeros((1, dim), dtype=np.int64))

    @classmethod
    def from_keys(cls, keys: Iterable[OctantKey], dim: Optional[int] = None) -> "Octants":
        keys = list(keys)
        if not keys:
            if dim is None:
                raise TreeError("空键列表需要显式给出维度")
            return cls.empty(dim)
        d = keys[0].dim if dim is None else dim
        if any(k.dim != d for k in keys):
            raise TreeError("八分体维度不一致")
        return cls(
            np.array([k.level for k in keys], dtype=np.int64),
            np.array([k.anchor for k in keys], dtype=np.int64).reshape(len(keys), d),
        )

    @classmethod
    def concat(cls, parts: Sequence["Octants"], dim: int) -> "Octants":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(dim)
        return cls(
            np.concatenate([p.levels for p in parts]),
            np.concatenate([p.anchors for p in parts], axis=0),
        )

    def __len__(self) -> int:
        return int(self.levels.shape[0])

    def __getitem__(self, index: Union[slice, np.ndarray, List[int]]) -> "Octants":
        return Octants(self.levels[index], self.anchors[index])

    def __iter__(self) -> Iterator[OctantKey]:
        return iter(self.keys())

    @property
    def dim(self) -> int:
        return int(self.anchors.shape[1])

    @property
    def sides(self) -> np.ndarray:
        return np.left_shift(np.int64(1), L_MAX - self.levels)

    def key(self, i: int) -> OctantKey:
        return OctantKey(int(self.levels[i]), tuple(int(a) for a in self.anchors[i]))

    def keys(self) -> List[OctantKey]:
        return [self.key(i) for i in range(len(self))]

    def validate(self) -> None:
        """检查层级范围与锚点对齐"""
        if len(self) == 0:
            return
        if self.levels.min() < 0 or self.levels.max() > L_MAX:
            raise TreeError("层级越界")
        if self.anchors.min() < 0 or self.anchors.max() >= ROOT_SIDE:
            raise TreeError("锚点越界")
        if np.any(self.anchors % self.sides[:, None]):
            raise TreeError("锚点与层级不对齐")

    def parents(self) -> "Octants":
        if len(self) and self.levels.min() == 0:
            raise TreeError("根节点没有父节点")
        parent_sides = np.left_shift(np.int64(1), L_MAX - self.levels + 1)
        return Octants(self.levels - 1, self.anchors - self.anchors % parent_sides[:, None])

    def children(self) -> "Octants":
        """每个八分体的 2^d 个子节点，按 Morton 子编号连续排列"""
        if len(self) and self.levels.max() >= L_MAX:
            raise TreeError("已达到最大层级")
        n, d = len(self), self.dim
        nc = 1 << d
        digits = np.arange(nc, dtype=np.int64)
        offsets = (digits[:, None] >> np.arange(d, dtype=np.int64)[None, :]) & 1
        half = (self.sides >> 1)[:, None, None]
        anchors = self.anchors[:, None, :] + offsets[None, :, :] * half
        return Octants(np.repeat(self.levels + 1, nc), anchors.reshape(n * nc, d))

    def unit_boxes(self) -> Tuple[np.ndarray, np.ndarray]:
        """单位立方体坐标下的闭包盒 (lo, hi)"""
        lo = self.anchors.astype(np.float64) / ROOT_SIDE
        hi = (self.anchors + self.sides[:, None]).astype(np.float64) / ROOT_SIDE
        return lo, hi

    def unit_volumes(self) -> np.ndarray:
        return np.ldexp(1.0, -self.dim * self.levels.astype(np.int64))

    def same_as(self, other: "Octants") -> bool:
        return (
            len(self) == len(other)
            and self.dim == other.dim
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.anchors, other.anchors)
        )
