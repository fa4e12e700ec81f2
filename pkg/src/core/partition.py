"""
模拟多 rank 分区

rank 是显式的数据分片，通过进程内交换结构传递消息；执行可以串行或用线程池并行，
所有结果与调度无关。
"""

import math
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

import numpy as np

from src.core.console import log
from src.core.octree import construct_constrained
from src.core.sfc import SfcOracle, is_ancestor_or_equal, morton_codes, sfc_order, unique_mask
from src.geometry.subdomain import Subdomain
from src.models.errors import PartitionError
from src.models.octant import L_MAX, Octants
from src.models.tree import IncompleteTree


class ExchangeFabric:
    """进程内消息交换：每条 (src, dst) 边一个先进先出队列"""

    def __init__(self, rank_count: int):
        self.rank_count = rank_count
        self._queues: Dict[Tuple[int, int], Deque[Any]] = {}
        self._lock = threading.Lock()
        self.messages_sent = 0

    def _check(self, rank: int) -> None:
        if not 0 <= rank < self.rank_count:
            raise PartitionError(f"rank 越界: {rank}")

    def send(self, src: int, dst: int, payload: Any) -> None:
        self._check(src)
        self._check(dst)
        with self._lock:
            self._queues.setdefault((src, dst), deque()).append(payload)
            self.messages_sent += 1

    def receive(self, dst: int, src: int) -> Any:
        with self._lock:
            queue = self._queues.get((src, dst))
            if not queue:
                raise PartitionError(f"rank {dst} 没有来自 rank {src} 的消息")
            return queue.popleft()

    def pending(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())


def run_ranks(task: Callable[[int], Any], rank_count: int, workers: int = 1) -> List[Any]:
    """对每个 rank 执行 task，结果按 rank 顺序返回"""
    if workers <= 1 or rank_count <= 1:
        return [task(rank) for rank in range(rank_count)]
    with ThreadPoolExecutor(max_workers=min(workers, rank_count)) as pool:
        return list(pool.map(task, range(rank_count)))


@dataclass
class PartitionMap:
    """rank → 连续 SFC 区间"""

    rank_count: int
    offsets: np.ndarray  # (rank_count + 1,) 区间端点
    load_tol: float = 0.1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def range_of(self, rank: int) -> Tuple[int, int]:
        return int(self.offsets[rank]), int(self.offsets[rank + 1])

    def rank_of(self, index: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.offsets, np.asarray(index), side="right") - 1

    def capacity(self) -> int:
        """单 rank 允许的最大元素数 ceil(mean · (1 + load_tol))"""
        total = int(self.offsets[-1])
        return int(math.ceil(total / self.rank_count * (1.0 + self.load_tol) - 1e-12))


def _bit_length(values: np.ndarray) -> np.ndarray:
    values = values.copy()
    length = np.zeros(values.shape, dtype=np.int64)
    for shift in (32, 16, 8, 4, 2, 1):
        big = values >= (np.int64(1) << shift)
        length += shift * big
        values = np.where(big, values >> shift, values)
    return length + (values > 0)


def split_depths(ordered: Octants) -> np.ndarray:
    """相邻元素 (i-1, i) 的首个不同子步深度，越小表示分界越粗；长度 n-1"""
    if len(ordered) < 2:
        return np.zeros(0, dtype=np.int64)
    d = ordered.dim
    codes = morton_codes(ordered.anchors)
    diff = codes[1:] ^ codes[:-1]
    differ = np.where(diff > 0, L_MAX - (_bit_length(diff) - 1) // d, L_MAX + 1)
    nested = np.minimum(ordered.levels[1:], ordered.levels[:-1]) + 1
    return np.minimum(differ, nested)


def compute_splitters(ordered: Octants, rank_count: int, load_tol: float) -> PartitionMap:
    """
    在理想切分位置附近的容差窗口内选择最粗的分界

    窗口半宽 w = floor((ceil(mean(1+tol)) - ceil(mean)) / 2)，保证每个 rank 不超过容量
    """
    if rank_count < 1:
        raise PartitionError(f"rank 数必须 ≥ 1: {rank_count}")
    n = len(ordered)
    mean = n / rank_count
    cap = int(math.ceil(mean * (1.0 + load_tol) - 1e-12))
    window = max(0, (cap - int(math.ceil(mean))) // 2)
    depths = split_depths(ordered)
    offsets = [0]
    for r in range(1, rank_count):
        ideal = int(round(r * n / rank_count))
        lo = max(offsets[-1], ideal - window, 1 if n > 1 else 0)
        hi = min(n - 1, ideal + window)
        if n < 2 or lo > hi:
            offsets.append(min(max(ideal, offsets[-1]), n))
            continue
        candidates = np.arange(lo, hi + 1)
        cost = depths[candidates - 1]
        best = candidates[np.lexsort((candidates, np.abs(candidates - ideal), cost))[0]]
        offsets.append(int(best))
    offsets.append(n)
    if n < rank_count:
        log(f"元素数 {n} 少于 rank 数 {rank_count}，部分 rank 为空")
    return PartitionMap(rank_count, np.asarray(offsets, dtype=np.int64), load_tol)


def dist_tree_sort(octants: Octants, rank_count: int, load_tol: float = 0.1,
                   oracle: Optional[SfcOracle] = None) -> Tuple[PartitionMap, List[Octants]]:
    """全局曲线排序去重后按负载容差切分到各 rank"""
    order = sfc_order(octants, oracle)
    ordered = octants[order]
    ordered = ordered[unique_mask(ordered)]
    pmap = compute_splitters(ordered, rank_count, load_tol)
    parts = [ordered[slice(*pmap.range_of(r))] for r in range(rank_count)]
    return pmap, parts


@dataclass
class DistributedTree:
    """按 rank 切分的不完整树"""

    partition: PartitionMap
    parts: List[IncompleteTree]

    @property
    def rank_count(self) -> int:
        return self.partition.rank_count

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def global_tree(self) -> IncompleteTree:
        leaves = Octants.concat([p.leaves for p in self.parts], self.dim)
        tags = np.concatenate([p.tags for p in self.parts]) if self.parts else np.zeros(0)
        return IncompleteTree(leaves, tags)


def partition_tree(tree: IncompleteTree, rank_count: int, load_tol: float = 0.1) -> DistributedTree:
    """已排序树按负载容差切分"""
    pmap = compute_splitters(tree.leaves, rank_count, load_tol)
    parts = [tree.subset(np.arange(*pmap.range_of(r))) for r in range(rank_count)]
    return DistributedTree(pmap, parts)


def _unique_leaves(rank: int, part: IncompleteTree, fabric: ExchangeFabric) -> IncompleteTree:
    """
    删除重复与被更细八分体覆盖的祖先

    已排序序列中若 oct[i] 是 oct[i+1] 的祖先或相等则删除 oct[i]
    （重复副本保留最后一个，祖先让位于更细的后代）；oct[i+1] 可能来自后续 rank
    """
    n = len(part)
    nxt: Optional[Tuple[int, np.ndarray]] = None
    for src in range(rank + 1, fabric.rank_count):
        message = fabric.receive(rank, src)
        if nxt is None and message is not None:
            nxt = message
    if n == 0:
        return part
    levels = part.leaves.levels
    anchors = part.leaves.anchors
    if nxt is not None:
        next_levels = np.append(levels[1:], nxt[0])
        next_anchors = np.vstack([anchors[1:], nxt[1][None, :]])
        drop = is_ancestor_or_equal(levels, anchors, next_levels, next_anchors)
    else:
        drop = np.zeros(n, dtype=bool)
        if n > 1:
            drop[:-1] = is_ancestor_or_equal(levels[:-1], anchors[:-1], levels[1:], anchors[1:])
    return part.subset(np.flatnonzero(~drop))


def distributed_construct_constrained(
    seeds: Octants,
    subdomain: Subdomain,
    rank_count: int = 1,
    load_tol: float = 0.1,
    workers: int = 1,
    oracle: Optional[SfcOracle] = None,
) -> DistributedTree:
    """
    分布式约束构造

    1. 种子排序并切分；2. 各 rank 从根构造覆盖；3. 合并重排后切分；
    4. 各 rank 借助相邻 rank 的首元素删除重复与祖先；5. 按容差重新切分
    """
    _, seed_parts = dist_tree_sort(seeds, rank_count, load_tol, oracle)
    local = run_ranks(
        lambda r: construct_constrained(subdomain, seed_parts[r], oracle), rank_count, workers
    )
    if rank_count == 1:
        return partition_tree(local[0], 1, load_tol)

    merged_leaves = Octants.concat([t.leaves for t in local], subdomain.dim)
    merged_tags = np.concatenate([t.tags for t in local]) if local else np.zeros(0, dtype=np.int8)
    order = sfc_order(merged_leaves, oracle)
    merged = IncompleteTree(merged_leaves[order], merged_tags[order])
    staged = partition_tree(merged, rank_count, load_tol)

    fabric = ExchangeFabric(rank_count)
    for rank, part in enumerate(staged.parts):
        first = (int(part.leaves.levels[0]), part.leaves.anchors[0].copy()) if len(part) else None
        for dst in range(rank):
            fabric.send(rank, dst, first)
    unique = run_ranks(lambda r: _unique_leaves(r, staged.parts[r], fabric), rank_count, workers)
    result = IncompleteTree(
        Octants.concat([t.leaves for t in unique], subdomain.dim),
        np.concatenate([t.tags for t in unique]),
    )
    return partition_tree(result, rank_count, load_tol)
