"""
空间填充曲线排序

- Morton 码：锚点各轴比特交错，第 i 轴占每个 d 位组的第 i 位
- SfcOracle：子节点曲线次序与方向状态表（Morton 为恒等、单状态）
- tree_sort：按层逐位的最高位优先基数排序，去重
"""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from src.models.errors import TreeError
from src.models.octant import L_MAX, OctantKey, Octants


def interleave_bits(values: np.ndarray, bits: int) -> np.ndarray:
    """
    (n, d) 非负整数的比特交错

    Args:
        values: 各轴坐标，每轴只取低 bits 位
        bits: 每轴位数，bits * d ≤ 63

    Returns:
        (n,) int64 交错码
    """
    values = np.asarray(values, dtype=np.int64)
    n, d = values.shape
    if bits * d > 63:
        raise TreeError(f"交错码超出 64 位: {bits} 位 × {d} 轴")
    code = np.zeros(n, dtype=np.int64)
    for bit in range(bits):
        for axis in range(d):
            code |= ((values[:, axis] >> bit) & 1) << (bit * d + axis)
    return code


def morton_codes(anchors: np.ndarray) -> np.ndarray:
    """格点锚点的 Morton 码"""
    return interleave_bits(anchors, L_MAX)


def child_digits(anchors: np.ndarray, depth: int) -> np.ndarray:
    """第 depth 层（1..L_MAX）的 Morton 子编号"""
    anchors = np.asarray(anchors, dtype=np.int64)
    shift = L_MAX - depth
    bits = (anchors >> shift) & 1
    return (bits << np.arange(anchors.shape[1], dtype=np.int64)[None, :]).sum(axis=1)


def level_linear_ids(octants: Octants) -> np.ndarray:
    """
    (层级, 锚点) 的唯一整数编号：前面各层单元总数 + 本层 Morton 序号

    用于去重与成员查询（L_MAX = 20、d = 3 时不超过 int64）
    """
    d = octants.dim
    levels = octants.levels
    offsets = (np.left_shift(np.int64(1), d * levels) - 1) // ((1 << d) - 1)
    return offsets + (morton_codes(octants.anchors) >> (d * (L_MAX - levels)))


def subtree_code_span(levels: np.ndarray, dim: int) -> np.ndarray:
    """层级 l 的八分体在 Morton 码上覆盖的区间长度 2^(d (L_MAX - l))"""
    return np.left_shift(np.int64(1), dim * (L_MAX - np.asarray(levels, dtype=np.int64)))


class SfcOracle(ABC):
    """曲线方向预言机：给出每个状态下 Morton 子编号在曲线中的位置"""

    def __init__(self, dim: int):
        self.dim = dim
        self.n_children = 1 << dim

    @property
    @abstractmethod
    def morton_to_sfc(self) -> np.ndarray:
        """(n_states, 2^d)：Morton 子编号 → 曲线位置"""

    @property
    @abstractmethod
    def child_state(self) -> np.ndarray:
        """(n_states, 2^d)：Morton 子编号 → 子节点的方向状态"""

    def sfc_to_morton(self, state: int = 0) -> np.ndarray:
        """曲线位置 → Morton 子编号"""
        return np.argsort(self.morton_to_sfc[state])


class MortonOracle(SfcOracle):
    """Z 序曲线：单一状态，恒等置换"""

    def __init__(self, dim: int):
        super().__init__(dim)
        self._identity = np.arange(self.n_children, dtype=np.int64)[None, :]
        self._states = np.zeros((1, self.n_children), dtype=np.int64)

    @property
    def morton_to_sfc(self) -> np.ndarray:
        return self._identity

    @property
    def child_state(self) -> np.ndarray:
        return self._states


def default_oracle(dim: int) -> SfcOracle:
    return MortonOracle(dim)


def sfc_compare(a: OctantKey, b: OctantKey, oracle: Optional[SfcOracle] = None) -> int:
    """
    两个八分体的曲线次序：祖先在前；否则按首个不同子步的曲线位置

    Returns:
        -1 / 0 / 1
    """
    if a.dim != b.dim:
        raise TreeError("比较的八分体维度不同")
    oracle = oracle or default_oracle(a.dim)
    state = 0
    anchors = np.array([a.anchor, b.anchor], dtype=np.int64)
    for depth in range(1, L_MAX + 1):
        a_done = a.level < depth
        b_done = b.level < depth
        if a_done and b_done:
            return 0
        if a_done:
            return -1
        if b_done:
            return 1
        da, db = (int(x) for x in child_digits(anchors, depth))
        if da != db:
            ra = oracle.morton_to_sfc[state, da]
            rb = oracle.morton_to_sfc[state, db]
            return -1 if ra < rb else 1
        state = int(oracle.child_state[state, da])
    return 0


def sfc_order(octants: Octants, oracle: Optional[SfcOracle] = None) -> np.ndarray:
    """
    最高位优先基数排序，返回稳定排序置换

    每一层把同一桶内的八分体按（已终止 → 0，否则 曲线位置 + 1）细分，
    桶全部为单元素时提前结束
    """
    n = len(octants)
    if n <= 1:
        return np.arange(n)
    oracle = oracle or default_oracle(octants.dim)
    radix = oracle.n_children + 1
    order = np.arange(n)
    bucket = np.zeros(n, dtype=np.int64)
    state = np.zeros(n, dtype=np.int64)
    max_level = int(octants.levels.max())
    for depth in range(1, max_level + 1):
        levels = octants.levels[order]
        active = levels >= depth
        digits = child_digits(octants.anchors[order], depth)
        rank = np.where(active, oracle.morton_to_sfc[state, digits] + 1, 0)
        key = bucket * radix + rank
        perm = np.argsort(key, kind="stable")
        order = order[perm]
        key = key[perm]
        state = np.where(active, oracle.child_state[state, digits], state)[perm]
        new_group = np.concatenate([[True], key[1:] != key[:-1]])
        bucket = np.cumsum(new_group) - 1
        if bucket[-1] == n - 1:
            break
    return order


def tree_sort(octants: Octants, oracle: Optional[SfcOracle] = None) -> Octants:
    """曲线排序并去重"""
    if len(octants) == 0:
        return octants
    ordered = octants[sfc_order(octants, oracle)]
    return ordered[unique_mask(ordered)]


def unique_mask(ordered: Octants) -> np.ndarray:
    """已排序序列中首次出现的位置"""
    keep = np.ones(len(ordered), dtype=bool)
    if len(ordered) > 1:
        same = (ordered.levels[1:] == ordered.levels[:-1]) & np.all(
            ordered.anchors[1:] == ordered.anchors[:-1], axis=1
        )
        keep[1:] = ~same
    return keep


def is_sfc_sorted(octants: Octants, oracle: Optional[SfcOracle] = None) -> bool:
    """是否已按曲线（非严格）排序"""
    return bool(np.array_equal(sfc_order(octants, oracle), np.arange(len(octants))))


def is_ancestor_or_equal(a_levels: np.ndarray, a_anchors: np.ndarray,
                         b_levels: np.ndarray, b_anchors: np.ndarray) -> np.ndarray:
    """逐对判断 a 是否为 b 的祖先或相等"""
    sides = np.left_shift(np.int64(1), L_MAX - a_levels)
    inside = np.all((b_anchors >= a_anchors) & (b_anchors < a_anchors + sides[:, None]), axis=1)
    return (a_levels <= b_levels) & inside
