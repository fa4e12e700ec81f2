"""
三角网格挖除形状

- 无符号距离：逐三角形最近点（向量化，分块计算）
- 内外判定：3 条抖动射线的奇偶投票
- 区域分类：均匀网格索引筛选候选三角形 + 三角形/盒分离轴测试
"""

from typing import Sequence, Tuple

import numpy as np

from src.geometry.shapes import SignedDistanceShape, _as_points
from src.geometry.triangle_mesh import TriangleMesh

# 每块 (点 × 三角形) 对数上限
_CHUNK_PAIRS = 2_000_000

# 抖动射线方向（避免与坐标轴、网格边对齐）
_RAY_DIRECTIONS = np.array([
    [1.0, 0.1234567, 0.4567891],
    [-0.3112345, 1.0, 0.1734519],
    [0.2191827, -0.3671539, 1.0],
])
_RAY_DIRECTIONS /= np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)

_TINY = np.nextafter(0.0, 1.0)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                                c: np.ndarray) -> np.ndarray:
    """
    点到三角形的最近点（按 Voronoi 区域判定，逐元素广播）

    Args:
        p, a, b, c: 可广播的 (..., 3) 数组

    Returns:
        (..., 3) 最近点
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_face = vb * denom
        w_face = vc * denom

    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    shape = np.broadcast(p, a).shape
    choices = [
        np.broadcast_to(a, shape),
        np.broadcast_to(b, shape),
        a + v_ab[..., None] * ab,
        np.broadcast_to(c, shape),
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
    ]
    face = a + v_face[..., None] * ab + w_face[..., None] * ac
    cond = np.broadcast_to(np.stack(conditions, axis=0)[..., None], (6,) + shape)
    return np.select(list(cond), choices, default=face)


def ray_hit_counts(points: np.ndarray, direction: np.ndarray, a: np.ndarray,
                   b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Möller–Trumbore 射线求交，返回每个点沿 direction 的正向交点数"""
    eps = 1e-12
    e1 = b - a
    e2 = c - a
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    valid = np.abs(det) > eps
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    s = points[:, None, :] - a[None, :, :]
    u = np.einsum("mnk,nk->mn", s, h) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("mnk,k->mn", q, direction) * inv
    t = np.einsum("mnk,nk->mn", q, e2) * inv
    hit = valid[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    return hit.sum(axis=1)


def triangles_overlap_box(tri: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """
    闭三角形与闭轴对齐盒是否相交（分离轴测试，13 条轴）

    Args:
        tri: (n, 3, 3) 三角形
        lo, hi: (3,) 盒

    Returns:
        (n,) 布尔
    """
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    v = tri - center
    # 盒的三个面法向
    separated = np.any((v.min(axis=1) > half) | (v.max(axis=1) < -half), axis=1)
    # 三角形平面
    f = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
    normal = np.cross(f[:, 0], f[:, 1])
    d = np.einsum("ij,ij->i", normal, v[:, 0])
    separated |= np.abs(d) > np.abs(normal) @ half
    # 9 条棱叉积轴
    unit = np.eye(3)
    axes = np.cross(unit[None, :, None, :], f[:, None, :, :]).reshape(-1, 9, 3)
    proj = np.einsum("nak,nvk->nav", axes, v)
    radius = np.abs(axes) @ half
    separated |= np.any((proj.min(axis=2) > radius) | (proj.max(axis=2) < -radius), axis=1)
    return ~separated


class MeshShape(SignedDistanceShape):
    """以封闭三角网格内部为挖除集合的形状（仅三维）"""

    def __init__(self, mesh: TriangleMesh):
        mesh.validate()
        self.mesh = mesh
        self.dim = 3
        self.lipschitz_bound = 1.0
        tri = mesh.triangles
        self._a, self._b, self._c = tri[:, 0].copy(), tri[:, 1].copy(), tri[:, 2].copy()
        self._tri = tri
        self._tri_lo = tri.min(axis=1)
        self._tri_hi = tri.max(axis=1)
        self._build_grid()

    def _build_grid(self) -> None:
        """均匀网格索引，单元尺寸取三角形包围盒对角线中位数"""
        diag = np.linalg.norm(self._tri_hi - self._tri_lo, axis=1)
        mesh_lo, mesh_hi = self.mesh.bounding_box
        cell = float(np.median(diag))
        if cell <= 0:
            cell = float(np.max(mesh_hi - mesh_lo)) or 1.0
        self._grid_origin = mesh_lo
        self._grid_cell = cell
        self._grid_shape = np.maximum(np.floor((mesh_hi - mesh_lo) / cell).astype(np.int64) + 1, 1)
        cell_ids = []
        tri_ids = []
        lo_idx = self._cell_index(self._tri_lo)
        hi_idx = self._cell_index(self._tri_hi)
        for t in range(len(self._tri)):
            ranges = [np.arange(lo_idx[t, k], hi_idx[t, k] + 1) for k in range(3)]
            block = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
            cell_ids.append(np.ravel_multi_index(block.T, self._grid_shape))
            tri_ids.append(np.full(len(block), t, dtype=np.int64))
        cell_ids = np.concatenate(cell_ids)
        tri_ids = np.concatenate(tri_ids)
        order = np.argsort(cell_ids, kind="stable")
        self._grid_tris = tri_ids[order]
        self._grid_offsets = np.searchsorted(
            cell_ids[order], np.arange(int(np.prod(self._grid_shape)) + 1)
        )

    def _cell_index(self, points: np.ndarray) -> np.ndarray:
        idx = np.floor((points - self._grid_origin) / self._grid_cell).astype(np.int64)
        return np.clip(idx, 0, self._grid_shape - 1)

    def candidate_triangles(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """包围盒与查询盒相交的三角形下标"""
        mesh_lo, mesh_hi = self.mesh.bounding_box
        if np.any(hi < mesh_lo) or np.any(lo > mesh_hi):
            return np.zeros(0, dtype=np.int64)
        lo_idx = self._cell_index(lo[None, :])[0]
        hi_idx = self._cell_index(hi[None, :])[0]
        n_cells = int(np.prod(hi_idx - lo_idx + 1))
        if n_cells >= len(self._tri):
            candidates = np.arange(len(self._tri))
        else:
            ranges = [np.arange(lo_idx[k], hi_idx[k] + 1) for k in range(3)]
            block = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
            cells = np.ravel_multi_index(block.T, self._grid_shape)
            parts = [self._grid_tris[self._grid_offsets[c]:self._grid_offsets[c + 1]] for c in cells]
            candidates = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        hit = np.all((self._tri_lo[candidates] <= hi) & (self._tri_hi[candidates] >= lo), axis=1)
        return candidates[hit]

    def box_intersects_surface(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        candidates = self.candidate_triangles(lo, hi)
        if len(candidates) == 0:
            return False
        return bool(np.any(triangles_overlap_box(self._tri[candidates], lo, hi)))

    def unsigned_distance(self, points: np.ndarray) -> np.ndarray:
        points = _as_points(points, 3)
        n_tri = len(self._tri)
        step = max(1, _CHUNK_PAIRS // n_tri)
        result = np.empty(len(points))
        for start in range(0, len(points), step):
            p = points[start:start + step, None, :]
            q = closest_points_on_triangles(p, self._a[None], self._b[None], self._c[None])
            result[start:start + step] = np.sqrt(((q - p) ** 2).sum(axis=2).min(axis=1))
        return result

    def inside(self, points: np.ndarray) -> np.ndarray:
        """射线奇偶投票判定点是否在网格内部"""
        points = _as_points(points, 3)
        n_tri = len(self._tri)
        step = max(1, _CHUNK_PAIRS // n_tri)
        votes = np.zeros(len(points), dtype=np.int64)
        for direction in _RAY_DIRECTIONS:
            for start in range(0, len(points), step):
                hits = ray_hit_counts(points[start:start + step], direction, self._a, self._b, self._c)
                votes[start:start + step] += hits % 2
        return votes >= 2

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = _as_points(points, 3)
        distance = self.unsigned_distance(points)
        sign = np.where(self.inside(points), 1.0, -1.0)
        return np.where(distance == 0, 0.0, sign * distance)

    def field_bounds(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """与表面相交的盒给出跨零区间；否则整盒同侧，由中心点内外决定符号"""
        n = lo.shape[0]
        fmin = np.empty(n)
        fmax = np.empty(n)
        crossing = np.array([self.box_intersects_surface(lo[i], hi[i]) for i in range(n)], dtype=bool)
        radius = 0.5 * np.linalg.norm(hi - lo, axis=1)
        fmin[crossing] = -radius[crossing]
        fmax[crossing] = radius[crossing]
        rest = ~crossing
        if np.any(rest):
            inside = self.inside(0.5 * (lo[rest] + hi[rest]))
            fmin[rest] = np.where(inside, _TINY, -np.inf)
            fmax[rest] = np.where(inside, np.inf, -_TINY)
        return fmin, fmax


def mesh_region_classifier(mesh: TriangleMesh) -> MeshShape:
    return MeshShape(mesh)


def mesh_signed_distance(mesh: TriangleMesh, x: Sequence[float]) -> float:
    """单点符号距离（内正外负）；批量查询请直接使用 MeshShape.evaluate"""
    return float(MeshShape(mesh).evaluate(np.asarray(x, dtype=np.float64))[0])
