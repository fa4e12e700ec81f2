"""
解析挖除形状

符号约定：场值为正表示位于被挖除集合 C 内部；C 为闭集，场值 ≥ 0 即为挖除。
每个形状都能给出轴对齐盒上场值的保守上下界，区域分类由上下界得出。
"""

from abc import ABC, abstractmethod
from typing import Sequence, Tuple

import numpy as np

from src.models.errors import MeshError
from src.models.octant import PointClass, RegionClass


def _as_points(points: np.ndarray, dim: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    if points.shape[-1] != dim:
        raise MeshError(f"点维度 {points.shape[-1]} 与形状维度 {dim} 不符")
    return points


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """(n, d) 盒 → (n, 2^d, d) 角点"""
    n, d = lo.shape
    digits = np.arange(1 << d)
    bits = ((digits[:, None] >> np.arange(d)[None, :]) & 1).astype(bool)
    return np.where(bits[None, :, :], hi[:, None, :], lo[:, None, :]).reshape(n, 1 << d, d)


class SignedDistanceShape(ABC):
    """带 Lipschitz 上界的符号距离场"""

    dim: int
    lipschitz_bound: float = 1.0

    @abstractmethod
    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """(n, d) → (n,) 场值"""

    def field_bounds(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        盒上场值的保守上下界（默认：中心值 ± Lipschitz·半对角线）

        Args:
            lo: (n, d) 盒下角
            hi: (n, d) 盒上角

        Returns:
            (fmin, fmax)，保证 fmin ≤ min φ 且 fmax ≥ max φ
        """
        center = 0.5 * (lo + hi)
        radius = self.lipschitz_bound * 0.5 * np.linalg.norm(hi - lo, axis=1)
        phi = self.evaluate(center)
        return phi - radius, phi + radius

    def classify_boxes(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """批量区域分类，返回 RegionClass 取值数组"""
        lo = _as_points(lo, self.dim)
        hi = _as_points(hi, self.dim)
        fmin, fmax = self.field_bounds(lo, hi)
        tags = np.full(lo.shape[0], RegionClass.RETAIN_BOUNDARY, dtype=np.int8)
        tags[fmax < 0] = RegionClass.RETAIN_INTERNAL
        tags[fmin >= 0] = RegionClass.CARVED
        return tags

    def closest_boundary_point(self, points: np.ndarray) -> np.ndarray:
        """∂C 上最近点（用于投影 Dirichlet 数据）"""
        raise NotImplementedError(f"{type(self).__name__} 不支持最近边界点查询")


class Sphere(SignedDistanceShape):
    """球（二维为圆盘）"""

    def __init__(self, center: Sequence[float], radius: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.dim = int(self.center.shape[0])
        if self.radius <= 0:
            raise MeshError(f"球半径必须为正: {radius}")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = _as_points(points, self.dim)
        return self.radius - np.linalg.norm(points - self.center, axis=1)

    def field_bounds(self, lo, hi):
        nearest = np.clip(self.center, lo, hi)
        dmin = np.linalg.norm(nearest - self.center, axis=1)
        far = np.maximum(np.abs(self.center - lo), np.abs(hi - self.center))
        dmax = np.linalg.norm(far, axis=1)
        return self.radius - dmax, self.radius - dmin

    def closest_boundary_point(self, points):
        points = _as_points(points, self.dim)
        offset = points - self.center
        norm = np.linalg.norm(offset, axis=1, keepdims=True)
        direction = np.where(norm > 0, offset / np.where(norm > 0, norm, 1.0), 0.0)
        direction[norm[:, 0] == 0, 0] = 1.0
        return self.center + self.radius * direction


def _box_sdf(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """标准盒符号距离（外正内负）"""
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    q = np.abs(points - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside


class Box(SignedDistanceShape):
    """挖除一个轴对齐盒"""

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.dim = int(self.lo.shape[0])
        if self.hi.shape != self.lo.shape or np.any(self.hi <= self.lo):
            raise MeshError(f"盒的上下角非法: lo={lo}, hi={hi}")

    def evaluate(self, points):
        points = _as_points(points, self.dim)
        return -_box_sdf(points, self.lo, self.hi)

    def sdf_range(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """查询盒上盒 SDF（外正）的精确最小 / 最大值"""
        gaps = np.maximum(np.maximum(self.lo - hi, lo - self.hi), 0.0)
        separated = np.linalg.norm(gaps, axis=1)
        a = np.maximum(lo, self.lo)
        b = np.minimum(hi, self.hi)
        mid = 0.5 * (self.lo + self.hi)
        t = np.clip(mid, a, np.maximum(a, b))
        depth = np.minimum(t - self.lo, self.hi - t).min(axis=1)
        smin = np.where(np.any(gaps > 0, axis=1), separated, -depth)
        corners = _box_corners(lo, hi)
        n, nc, d = corners.shape
        smax = _box_sdf(corners.reshape(n * nc, d), self.lo, self.hi).reshape(n, nc).max(axis=1)
        return smin, smax

    def field_bounds(self, lo, hi):
        smin, smax = self.sdf_range(lo, hi)
        return -smax, -smin

    def closest_boundary_point(self, points):
        points = _as_points(points, self.dim)
        inside = np.all((points >= self.lo) & (points <= self.hi), axis=1)
        result = np.clip(points, self.lo, self.hi)
        if np.any(inside):
            p = points[inside]
            dist = np.concatenate([p - self.lo, self.hi - p], axis=1)
            face = dist.argmin(axis=1)
            axis = face % self.dim
            rows = np.arange(p.shape[0])
            q = p.copy()
            q[rows, axis] = np.where(face < self.dim, self.lo[axis], self.hi[axis])
            result[inside] = q
        return result


class Complement(SignedDistanceShape):
    """补集：场值取负"""

    def __init__(self, shape: SignedDistanceShape):
        self.shape = shape
        self.dim = shape.dim
        self.lipschitz_bound = shape.lipschitz_bound

    def evaluate(self, points):
        return -self.shape.evaluate(points)

    def field_bounds(self, lo, hi):
        fmin, fmax = self.shape.field_bounds(lo, hi)
        return -fmax, -fmin

    def closest_boundary_point(self, points):
        return self.shape.closest_boundary_point(points)

    def __repr__(self) -> str:
        return f"Complement({self.shape!r})"


class Union(SignedDistanceShape):
    """多个挖除集合的并：逐点取最大"""

    def __init__(self, shapes: Sequence[SignedDistanceShape]):
        if not shapes:
            raise MeshError("union 至少需要一个操作数")
        dims = {s.dim for s in shapes}
        if len(dims) != 1:
            raise MeshError("union 操作数维度不一致")
        self.shapes = list(shapes)
        self.dim = dims.pop()
        self.lipschitz_bound = max(s.lipschitz_bound for s in shapes)

    def evaluate(self, points):
        return np.max(np.stack([s.evaluate(points) for s in self.shapes]), axis=0)

    def field_bounds(self, lo, hi):
        bounds = [s.field_bounds(lo, hi) for s in self.shapes]
        fmin = np.max(np.stack([b[0] for b in bounds]), axis=0)
        fmax = np.max(np.stack([b[1] for b in bounds]), axis=0)
        return fmin, fmax


def union(*shapes: SignedDistanceShape) -> SignedDistanceShape:
    return Union(shapes)


def complement(shape: SignedDistanceShape) -> SignedDistanceShape:
    if isinstance(shape, Complement):
        return shape.shape
    return Complement(shape)


def retained_box(lo: Sequence[float], hi: Sequence[float]) -> SignedDistanceShape:
    """保留盒（通道）：挖除盒外全部区域"""
    return Complement(Box(lo, hi))


def classify_point(shape: SignedDistanceShape, x: Sequence[float]) -> PointClass:
    """点分类：φ(x) ≥ 0 为挖除（C 为闭集）"""
    phi = float(shape.evaluate(np.asarray(x, dtype=np.float64))[0])
    return PointClass.CARVED if phi >= 0 else PointClass.RETAINED


def classify_region(
    shape: SignedDistanceShape, lo: Sequence[float], hi: Sequence[float]
) -> RegionClass:
    """
    单个轴对齐盒的保守区域分类

    Raises:
        MeshError: 盒退化（某边长为 0）
    """
    lo_arr = np.asarray(lo, dtype=np.float64)
    hi_arr = np.asarray(hi, dtype=np.float64)
    if np.any(hi_arr <= lo_arr):
        raise MeshError(f"退化盒无法做区域分类: lo={lo}, hi={hi}，点请使用 classify_point")
    return RegionClass(int(shape.classify_boxes(lo_arr[None, :], hi_arr[None, :])[0]))
