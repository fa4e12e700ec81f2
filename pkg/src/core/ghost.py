"""
ghost 节点布局与交换

节点归属：接触该节点的单元所在的最小 rank（接触包括单元悬挂节点的约束节点）。
每个 rank 的本地向量 = 拥有节点 + ghost 节点，按全局编号升序排列
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.console import log
from src.core.femops import ElementalOperator, TraversalMatvec
from src.core.nodes import HangingGovernance
from src.core.partition import DistributedTree, ExchangeFabric, run_ranks
from src.core.traversal import build_plan
from src.models.errors import PartitionError
from src.models.nodeset import NodeSet
from src.models.report import RankStats
from src.models.tree import DomainMapping


@dataclass
class RankLayout:
    """单个 rank 的本地节点布局"""

    rank: int
    leaf_range: Tuple[int, int]
    local_nodes: np.ndarray  # 全局编号，升序
    owner: np.ndarray  # 每个本地节点的拥有者 rank
    send: Dict[int, np.ndarray] = field(default_factory=dict)  # 目标 rank → 本地下标（本 rank 拥有）
    recv: Dict[int, np.ndarray] = field(default_factory=dict)  # 来源 rank → 本地下标（ghost）

    @property
    def owned_mask(self) -> np.ndarray:
        return self.owner == self.rank

    @property
    def owned_count(self) -> int:
        return int(self.owned_mask.sum())

    @property
    def ghost_count(self) -> int:
        return len(self.local_nodes) - self.owned_count

    @property
    def element_count(self) -> int:
        return self.leaf_range[1] - self.leaf_range[0]

    @property
    def eta(self) -> float:
        owned = self.owned_count
        return self.ghost_count / owned if owned else 0.0

    def ghost_ids(self) -> np.ndarray:
        return self.local_nodes[~self.owned_mask]


@dataclass
class GhostLayout:
    rank_count: int
    node_count: int
    owner: np.ndarray  # (N,) 全局节点拥有者
    ranks: List[RankLayout]

    def _check(self, vectors: List[np.ndarray]) -> None:
        if len(vectors) != self.rank_count:
            raise PartitionError(f"向量个数 {len(vectors)} 与 rank 数 {self.rank_count} 不一致")
        for rl, vec in zip(self.ranks, vectors):
            if len(vec) != len(rl.local_nodes):
                raise PartitionError(
                    f"rank {rl.rank} 向量长度 {len(vec)} 与本地节点数 {len(rl.local_nodes)} 不一致"
                )

    def scatter(self, u: np.ndarray) -> List[np.ndarray]:
        """全局向量 → 各 rank 本地向量（ghost 置 0，需 ghost_read 填充）"""
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.node_count:
            raise PartitionError(f"向量长度 {u.shape[0]} 与节点数 {self.node_count} 不一致")
        return [np.where(rl.owned_mask, u[rl.local_nodes], 0.0) for rl in self.ranks]

    def gather(self, vectors: List[np.ndarray]) -> np.ndarray:
        """各 rank 拥有分量 → 全局向量"""
        self._check(vectors)
        result = np.zeros(self.node_count)
        for rl, vec in zip(self.ranks, vectors):
            owned = rl.owned_mask
            result[rl.local_nodes[owned]] = vec[owned]
        return result


def build_ghost_layout(dtree: DistributedTree, node_set: NodeSet,
                       governance: HangingGovernance) -> GhostLayout:
    """
    由单元 → 节点接触关系建立 ghost 布局

    send / recv 列表按全局编号升序，双方逐项对应
    """
    n = len(node_set)
    incident = []
    for rank in range(dtree.rank_count):
        start, stop = dtree.partition.range_of(rank)
        ids = governance.incident_nodes(np.arange(start, stop)) if stop > start else np.zeros(0, dtype=np.int64)
        incident.append(ids)
    owner = np.full(n, -1, dtype=np.int64)
    for rank in range(dtree.rank_count - 1, -1, -1):
        owner[incident[rank]] = rank
    if n and owner.min() < 0:
        raise PartitionError(f"{int((owner < 0).sum())} 个节点不属于任何单元")

    ranks = []
    for rank, ids in enumerate(incident):
        ranks.append(RankLayout(rank, dtree.partition.range_of(rank), ids, owner[ids]))
    for rl in ranks:
        ghosts = ~rl.owned_mask
        for src in np.unique(rl.owner[ghosts]):
            src = int(src)
            recv_local = np.flatnonzero(rl.owner == src)
            rl.recv[src] = recv_local
            holder = ranks[src]
            send_local = np.searchsorted(holder.local_nodes, rl.local_nodes[recv_local])
            holder.send[rl.rank] = send_local
    return GhostLayout(dtree.rank_count, n, owner, ranks)


def ghost_read(vectors: List[np.ndarray], layout: GhostLayout,
               fabric: Optional[ExchangeFabric] = None) -> List[np.ndarray]:
    """拥有者的值覆盖各 rank 的 ghost"""
    layout._check(vectors)
    fabric = fabric or ExchangeFabric(layout.rank_count)
    for rl in layout.ranks:
        for dst in sorted(rl.send):
            fabric.send(rl.rank, dst, vectors[rl.rank][rl.send[dst]].copy())
    result = [np.array(v, dtype=np.float64, copy=True) for v in vectors]
    for rl in layout.ranks:
        for src in sorted(rl.recv):
            result[rl.rank][rl.recv[src]] = fabric.receive(rl.rank, src)
    return result


def ghost_accumulate(vectors: List[np.ndarray], layout: GhostLayout,
                     fabric: Optional[ExchangeFabric] = None) -> List[np.ndarray]:
    """ghost 上的贡献按来源 rank 升序累加到拥有者，随后 ghost 清零"""
    layout._check(vectors)
    fabric = fabric or ExchangeFabric(layout.rank_count)
    for rl in layout.ranks:
        for owner in sorted(rl.recv):
            fabric.send(rl.rank, owner, vectors[rl.rank][rl.recv[owner]].copy())
    result = [np.array(v, dtype=np.float64, copy=True) for v in vectors]
    for rl in layout.ranks:
        for src in sorted(rl.send):
            result[rl.rank][rl.send[src]] += fabric.receive(rl.rank, src)
        result[rl.rank][~rl.owned_mask] = 0.0
    return result


def partition_stats(layout: GhostLayout) -> Tuple[List[RankStats], Dict[str, float]]:
    """
    各 rank 的单元数、拥有节点数、ghost 节点数与 η

    Returns:
        (每 rank 统计, 汇总：ghost 均值 / 标准差、η 均值、总量)
    """
    rows = [
        RankStats(rl.rank, rl.element_count, rl.owned_count, rl.ghost_count, rl.eta)
        for rl in layout.ranks
    ]
    ghosts = np.array([r.ghost_nodes for r in rows], dtype=np.float64)
    summary = {
        "rank_count": float(layout.rank_count),
        "total_elements": float(sum(r.elements for r in rows)),
        "total_owned": float(sum(r.owned_nodes for r in rows)),
        "total_ghosts": float(ghosts.sum()),
        "mean_ghosts": float(ghosts.mean()) if len(rows) else 0.0,
        "std_ghosts": float(ghosts.std()) if len(rows) else 0.0,
        "mean_eta": float(np.mean([r.eta for r in rows])) if rows else 0.0,
    }
    return rows, summary


class DistributedMatvec:
    """ghost_read → 各 rank 本地遍历 → ghost_accumulate"""

    def __init__(self, dtree: DistributedTree, node_set: NodeSet, governance: HangingGovernance,
                 op: ElementalOperator, mapping: Optional[DomainMapping] = None, workers: int = 1,
                 layout: Optional[GhostLayout] = None):
        self.layout = layout or build_ghost_layout(dtree, node_set, governance)
        self.workers = workers
        self.exchange_seconds = 0.0
        self.messages = 0
        self._engines: List[Optional[TraversalMatvec]] = []
        for rl, part in zip(self.layout.ranks, dtree.parts):
            if len(part) == 0:
                self._engines.append(None)
                continue
            local_nodes = node_set.subset(rl.local_nodes)
            self._engines.append(TraversalMatvec(build_plan(part, local_nodes), part, op, mapping))
        log(f"分布式算子就绪: {dtree.rank_count} 个 rank, {len(node_set)} 个节点")

    @property
    def node_count(self) -> int:
        return self.layout.node_count

    @property
    def timings(self) -> Dict[str, float]:
        merged: Dict[str, float] = {}
        for engine in self._engines:
            if engine is None:
                continue
            for key, value in engine.timings.items():
                merged[key] = merged.get(key, 0.0) + value
        merged["ghost_exchange"] = self.exchange_seconds
        return merged

    def reset_timings(self) -> None:
        self.exchange_seconds = 0.0
        for engine in self._engines:
            if engine is not None:
                engine.reset_timings()

    def _local(self, rank: int, vector: np.ndarray) -> np.ndarray:
        engine = self._engines[rank]
        return engine(vector) if engine is not None else np.zeros_like(vector)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        local = self.layout.scatter(u)
        start = time.perf_counter()
        fabric = ExchangeFabric(self.layout.rank_count)
        local = ghost_read(local, self.layout, fabric)
        self.exchange_seconds += time.perf_counter() - start
        results = run_ranks(lambda r: self._local(r, local[r]), self.layout.rank_count, self.workers)
        start = time.perf_counter()
        results = ghost_accumulate(results, self.layout, fabric)
        self.exchange_seconds += time.perf_counter() - start
        self.messages += fabric.messages_sent
        return self.layout.gather(results)
