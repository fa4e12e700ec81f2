"""
由配置构造挖除形状

shape 表示例：
    {kind = "sphere", center = [0.5, 0.5], radius = 0.25}
    {kind = "channel", lo = [0, 0], hi = [1, 0.25]}
    {kind = "union", operands = [{...}, {...}]}
    {kind = "complement", operand = {...}}
    {kind = "stl", path = "part.stl", scale = 1.0, offset = [0, 0, 0]}
"""

from pathlib import Path
from typing import Any, Dict, Optional

from src.geometry.mesh_shape import MeshShape
from src.geometry.shapes import Box, SignedDistanceShape, Sphere, complement, retained_box, union
from src.geometry.subdomain import Subdomain
from src.geometry.triangle_mesh import TriangleMesh, icosphere
from src.models.errors import CarveError, ConfigError
from src.models.tree import DomainMapping

_SHAPE_KEYS = {
    "none": set(),
    "sphere": {"center", "radius"},
    "box": {"lo", "hi"},
    "channel": {"lo", "hi"},
    "union": {"operands"},
    "complement": {"operand"},
    "stl": {"path", "scale", "offset"},
    "icosphere": {"subdivisions", "radius", "center"},
}


def build_shape(shape_cfg: Dict[str, Any], dim: int, base_dir: Optional[Path] = None) -> Optional[SignedDistanceShape]:
    """
    按 kind 构造形状

    Args:
        shape_cfg: 形状表
        dim: 维度
        base_dir: STL 相对路径的基准目录

    Returns:
        形状；kind = "none" 时返回 None
    """
    if not isinstance(shape_cfg, dict) or "kind" not in shape_cfg:
        raise ConfigError(f"shape 缺少 kind: {shape_cfg!r}")
    kind = str(shape_cfg["kind"]).lower()
    if kind not in _SHAPE_KEYS:
        raise ConfigError(f"未知 shape.kind: {kind}")
    unknown = set(shape_cfg) - _SHAPE_KEYS[kind] - {"kind"}
    if unknown:
        raise ConfigError(f"shape({kind}) 未知参数: {', '.join(sorted(unknown))}")

    try:
        if kind == "none":
            return None
        if kind == "sphere":
            return Sphere(_vector(shape_cfg, "center", dim), float(shape_cfg.get("radius", 0.25)))
        if kind == "box":
            return Box(_vector(shape_cfg, "lo", dim), _vector(shape_cfg, "hi", dim))
        if kind == "channel":
            return retained_box(_vector(shape_cfg, "lo", dim), _vector(shape_cfg, "hi", dim))
        if kind == "union":
            operands = shape_cfg.get("operands", [])
            if not isinstance(operands, list) or not operands:
                raise ConfigError("union 需要非空 operands 列表")
            return union(*[_require(build_shape(o, dim, base_dir)) for o in operands])
        if kind == "complement":
            return complement(_require(build_shape(shape_cfg.get("operand", {}), dim, base_dir)))
        if dim != 3:
            raise ConfigError(f"shape({kind}) 仅支持三维")
        if kind == "icosphere":
            mesh = icosphere(int(shape_cfg.get("subdivisions", 3)), float(shape_cfg.get("radius", 1.0)),
                             _vector(shape_cfg, "center", 3))
            return MeshShape(mesh)
        path = Path(str(shape_cfg.get("path", "")))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        mesh = TriangleMesh.from_stl(path)
        offset = shape_cfg.get("offset", [0.0, 0.0, 0.0])
        return MeshShape(mesh.scaled(float(shape_cfg.get("scale", 1.0)), offset))
    except ConfigError:
        raise
    except CarveError as exc:
        raise ConfigError(f"shape({kind}) 构造失败: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"shape({kind}) 参数非法: {exc}") from exc


def _vector(shape_cfg: Dict[str, Any], key: str, dim: int):
    if key not in shape_cfg:
        raise ConfigError(f"shape 缺少参数 {key}")
    value = [float(v) for v in shape_cfg[key]]
    if len(value) != dim:
        raise ConfigError(f"shape.{key} 长度应为 {dim}: {value}")
    return value


def _require(shape: Optional[SignedDistanceShape]) -> SignedDistanceShape:
    if shape is None:
        raise ConfigError("组合形状的操作数不能为 none")
    return shape


def build_subdomain(settings, base_dir: Optional[Path] = None) -> Subdomain:
    """由配置构造子域分类器"""
    mapping = DomainMapping(settings.MAPPING_SCALE, tuple(settings.MAPPING_ORIGIN))
    mapping.origin_array(settings.DIMENSION)
    shape = build_shape(settings.SHAPE, settings.DIMENSION, base_dir)
    return Subdomain(settings.DIMENSION, shape, mapping)
