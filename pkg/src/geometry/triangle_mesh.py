"""
三角网格模型
STL 读取（二进制 / ASCII，经 numpy-stl）、顶点焊接、封闭性与朝向检查
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from src.core.console import log
from src.models.errors import MeshError

# 焊接顶点时的坐标舍入位数
_WELD_DECIMALS = 9


@dataclass
class TriangleMesh:
    """三角面网格"""

    vertices: np.ndarray  # (nv, 3)
    faces: np.ndarray  # (nf, 3) 顶点下标

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) == 0:
            raise MeshError("网格没有三角面")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise MeshError("三角面引用了不存在的顶点")

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @property
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def _undirected_edges(self) -> np.ndarray:
        edges = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return np.sort(edges, axis=1)

    def boundary_edge_count(self) -> int:
        """未被恰好两个三角面共享的边数"""
        _, counts = np.unique(self._undirected_edges(), axis=0, return_counts=True)
        return int(np.count_nonzero(counts != 2))

    def signed_volume(self) -> float:
        tri = self.triangles
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def validate(self) -> None:
        """
        检查封闭、朝向一致；整体朝内时翻转为外法向

        Raises:
            MeshError: 网格不封闭或朝向不一致
        """
        boundary = self.boundary_edge_count()
        if boundary:
            raise MeshError(f"网格不封闭: {boundary} 条边界边")
        directed = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        _, counts = np.unique(directed, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise MeshError(f"网格朝向不一致: {int(np.count_nonzero(counts > 1))} 条重复有向边")
        if self.signed_volume() < 0:
            self.faces = self.faces[:, [0, 2, 1]].copy()

    @classmethod
    def from_triangles(cls, triangles: np.ndarray) -> "TriangleMesh":
        """三角形顶点坐标 (nf, 3, 3) → 焊接后的网格"""
        triangles = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
        flat = np.round(triangles.reshape(-1, 3), _WELD_DECIMALS)
        vertices, inverse = np.unique(flat, axis=0, return_inverse=True)
        faces = inverse.reshape(-1, 3)
        degenerate = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        return cls(vertices, faces[~degenerate])

    @classmethod
    def from_stl(cls, path: Union[str, Path]) -> "TriangleMesh":
        """读取 STL 文件（二进制或 ASCII）并校验"""
        from stl import mesh as np_mesh_module

        path = Path(path)
        if not path.exists():
            raise MeshError(f"STL 文件不存在: {path}")
        try:
            stl_data = np_mesh_module.Mesh.from_file(str(path))
        except Exception as exc:
            raise MeshError(f"STL 读取失败: {path}: {exc}") from exc
        result = cls.from_triangles(np.asarray(stl_data.vectors))
        result.validate()
        log(f"已读取 STL: {path.name}，{len(result.vertices)} 个顶点，{len(result.faces)} 个面")
        return result

    def scaled(self, factor: float, offset: Sequence[float] = (0.0, 0.0, 0.0)) -> "TriangleMesh":
        return TriangleMesh(self.vertices * factor + np.asarray(offset, dtype=np.float64), self.faces.copy())


def box_mesh(lo: Sequence[float], hi: Sequence[float]) -> TriangleMesh:
    """轴对齐盒表面（12 个外法向三角形）"""
    lo_arr = np.asarray(lo, dtype=np.float64)
    hi_arr = np.asarray(hi, dtype=np.float64)
    bits = (np.arange(8)[:, None] >> np.arange(3)[None, :]) & 1
    vertices = np.where(bits == 1, hi_arr, lo_arr)
    faces = np.array([
        [0, 4, 6], [0, 6, 2],  # x = lo
        [1, 3, 7], [1, 7, 5],  # x = hi
        [0, 1, 5], [0, 5, 4],  # y = lo
        [2, 6, 7], [2, 7, 3],  # y = hi
        [0, 2, 3], [0, 3, 1],  # z = lo
        [4, 5, 7], [4, 7, 6],  # z = hi
    ])
    return TriangleMesh(vertices, faces)


def icosphere(subdivisions: int = 3, radius: float = 1.0,
              center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    """正二十面体细分得到的球面网格（顶点位于球面上）"""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    vertices /= np.linalg.norm(vertices, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        unique_edges, inverse = np.unique(edges, axis=0, return_inverse=True)
        mids = vertices[unique_edges].mean(axis=1)
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        mid_ids = (inverse.reshape(-1) + len(vertices)).reshape(-1, 3)
        ab, bc, ca = mid_ids[:, 0], mid_ids[:, 1], mid_ids[:, 2]
        a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
        faces = np.concatenate([
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ])
        vertices = np.concatenate([vertices, mids])
    result = TriangleMesh(vertices * radius + np.asarray(center, dtype=np.float64), faces)
    result.validate()
    return result
