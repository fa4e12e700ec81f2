"""
树遍历

- build_plan：自顶向下把节点实例分桶到各层存在的八分体，得到每个八分体局部格点的全局编号
- Traversal.top_down：由父到子复制节点值，缺失（悬挂）格点由父单元基函数插值
- Traversal.bottom_up：叶子结果逆向累加，悬挂格点按转置权重回传给父单元

只访问存在（未被挖除）的子树，不存储单元 → 节点映射
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.core.basis import child_interpolation_table, local_offsets
from src.core.sfc import child_digits, level_linear_ids
from src.models.errors import PartitionError, TreeError
from src.models.nodeset import NodeSet
from src.models.octant import L_MAX, Octants
from src.models.tree import IncompleteTree


@dataclass
class LevelPlan:
    """某一层存在的八分体（叶子的祖先或叶子本身）"""

    level: int
    octants: Octants  # 按层内 Morton 序
    parent: np.ndarray  # (n,) 上一层中的父节点下标，根为 -1
    child_digit: np.ndarray  # (n,) Morton 子编号
    node_ids: np.ndarray  # (n, m) 局部格点的全局编号，缺失为 -1
    leaf_index: np.ndarray  # (n,) 对应树叶下标，非叶子为 -1

    @property
    def missing(self) -> np.ndarray:
        return self.node_ids < 0

    @property
    def leaf_rows(self) -> np.ndarray:
        return np.flatnonzero(self.leaf_index >= 0)


@dataclass
class TraversalPlan:
    dim: int
    order: int
    node_count: int
    leaf_count: int
    levels: List[LevelPlan] = field(default_factory=list)
    instances: int = 0  # 分桶过程中的节点实例总数


def _level_octants(leaves: Octants, level: int) -> Octants:
    sel = leaves.levels >= level
    side = np.int64(1) << (L_MAX - level)
    anchors = leaves.anchors[sel] - leaves.anchors[sel] % side
    octs = Octants(np.full(len(anchors), level, dtype=np.int64), anchors)
    _, first = np.unique(level_linear_ids(octs), return_index=True)
    return octs[first]


def build_plan(tree: IncompleteTree, node_set: NodeSet) -> TraversalPlan:
    """
    自顶向下的节点编号分桶

    根桶包含全部节点；每层把桶内实例复制到闭包包含它的各个存在子节点，
    位于八分体局部格点上的实例写入 node_ids
    """
    dim, order = tree.dim, node_set.order
    if node_set.dim != dim:
        raise TreeError("节点集合维度与树不一致")
    plan = TraversalPlan(dim, order, len(node_set), len(tree))
    if tree.is_empty:
        return plan
    leaves = tree.leaves
    leaf_ids = level_linear_ids(leaves)
    leaf_sorter = np.argsort(leaf_ids)
    sorted_leaf_ids = leaf_ids[leaf_sorter]
    offsets = local_offsets(dim, order)
    m = len(offsets)
    radix = (order + 1) ** np.arange(dim, dtype=np.int64)

    inst_oct = np.zeros(len(node_set), dtype=np.int64)
    inst_node = np.arange(len(node_set), dtype=np.int64)
    prev_ids: Optional[np.ndarray] = None
    prev: Optional[LevelPlan] = None
    for level in range(tree.max_level + 1):
        octs = _level_octants(leaves, level)
        ids = level_linear_ids(octs)
        n = len(octs)
        if prev is None:
            parent = np.full(n, -1, dtype=np.int64)
            digit = np.zeros(n, dtype=np.int64)
        else:
            parent = np.searchsorted(prev_ids, level_linear_ids(octs.parents()))
            digit = child_digits(octs.anchors, level)
            # 父层实例复制到子节点
            table = np.full((len(prev.octants), 1 << dim), -1, dtype=np.int64)
            table[parent, digit] = np.arange(n)
            p_anchor = prev.octants.anchors[inst_oct]
            half = np.int64(1) << (L_MAX - level)
            mid = order * (p_anchor + half)
            key = node_set.keys[inst_node]
            low = key <= mid
            high = key >= mid
            next_oct, next_node = [], []
            for c in range(1 << dim):
                bits = [(c >> axis) & 1 for axis in range(dim)]
                mask = np.ones(len(inst_node), dtype=bool)
                for axis, bit in enumerate(bits):
                    mask &= high[:, axis] if bit else low[:, axis]
                child = table[inst_oct[mask], c]
                keep = child >= 0
                next_oct.append(child[keep])
                next_node.append(inst_node[mask][keep])
            inst_oct = np.concatenate(next_oct)
            inst_node = np.concatenate(next_node)
        plan.instances += len(inst_node)

        side = np.int64(1) << (L_MAX - level)
        rel = node_set.keys[inst_node] - order * octs.anchors[inst_oct]
        on_lattice = np.all(rel % side == 0, axis=1)
        slot = (rel[on_lattice] // side) @ radix
        node_ids = np.full((n, m), -1, dtype=np.int64)
        node_ids[inst_oct[on_lattice], slot] = inst_node[on_lattice]

        pos = np.minimum(np.searchsorted(sorted_leaf_ids, ids), len(sorted_leaf_ids) - 1)
        hit = sorted_leaf_ids[pos] == ids
        leaf_index = np.where(hit, leaf_sorter[pos], -1)

        current = LevelPlan(level, octs, parent, digit, node_ids, leaf_index)
        plan.levels.append(current)
        prev, prev_ids = current, ids
    return plan


class Traversal:
    """按计划执行的自顶向下插值与自底向上累加"""

    def __init__(self, plan: TraversalPlan):
        self.plan = plan
        self.weights = child_interpolation_table(plan.dim, plan.order)
        self.timings: Dict[str, float] = {}
        self._leaf_slots = [
            (k, lp.leaf_rows, lp.leaf_index[lp.leaf_rows]) for k, lp in enumerate(plan.levels)
        ]

    def _tick(self, name: str, start: float) -> float:
        now = time.perf_counter()
        self.timings[name] = self.timings.get(name, 0.0) + now - start
        return now

    def allocate(self) -> List[np.ndarray]:
        start = time.perf_counter()
        m = (self.plan.order + 1) ** self.plan.dim
        buffers = [np.zeros((len(lp.octants), m)) for lp in self.plan.levels]
        self._tick("alloc", start)
        return buffers

    def top_down(self, u: np.ndarray) -> List[np.ndarray]:
        """
        各层八分体的局部格点值

        Returns:
            每层一个 (n_k, m) 数组
        """
        if u.shape[0] != self.plan.node_count:
            raise PartitionError(f"向量长度 {u.shape[0]} 与节点数 {self.plan.node_count} 不一致")
        start = time.perf_counter()
        values: List[np.ndarray] = []
        for lp in self.plan.levels:
            missing = lp.missing
            local = np.where(missing, 0.0, u[np.where(missing, 0, lp.node_ids)])
            if lp.level > 0:
                rows = np.flatnonzero(missing.any(axis=1))
                parent_values = values[-1]
                for c in np.unique(lp.child_digit[rows]):
                    sel = rows[lp.child_digit[rows] == c]
                    interp = parent_values[lp.parent[sel]] @ self.weights[c].T
                    local[sel] = np.where(missing[sel], interp, local[sel])
            values.append(local)
        self._tick("top_down", start)
        return values

    def leaf_values(self, values: List[np.ndarray]) -> np.ndarray:
        """按树叶顺序取出叶子局部值 (n_leaves, m)"""
        m = (self.plan.order + 1) ** self.plan.dim
        out = np.zeros((self.plan.leaf_count, m))
        for k, rows, leaf in self._leaf_slots:
            out[leaf] = values[k][rows]
        return out

    def bottom_up(self, leaf_results: np.ndarray, buffers: Optional[List[np.ndarray]] = None) -> np.ndarray:
        """
        叶子局部结果累加回全局向量

        Args:
            leaf_results: (n_leaves, m)，按树叶顺序
            buffers: allocate() 得到的工作数组，None 时现场分配
        """
        start = time.perf_counter()
        acc = buffers if buffers is not None else [
            np.zeros((len(lp.octants), leaf_results.shape[1])) for lp in self.plan.levels
        ]
        for k, rows, leaf in self._leaf_slots:
            acc[k].fill(0.0)
            acc[k][rows] = leaf_results[leaf]
        result = np.zeros(self.plan.node_count)
        for k in range(len(self.plan.levels) - 1, -1, -1):
            lp = self.plan.levels[k]
            present = ~lp.missing
            result += np.bincount(lp.node_ids[present], weights=acc[k][present],
                                  minlength=self.plan.node_count)
            if k == 0:
                break
            missing = lp.missing
            rows = np.flatnonzero(missing.any(axis=1))
            for c in np.unique(lp.child_digit[rows]):
                sel = rows[lp.child_digit[rows] == c]
                pushed = np.where(missing[sel], acc[k][sel], 0.0) @ self.weights[c]
                np.add.at(acc[k - 1], lp.parent[sel], pushed)
        self._tick("bottom_up", start)
        return result
