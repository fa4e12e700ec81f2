"""
VTU 导出（meshio，ASCII）

每个叶子输出为一个 quad / hexahedron 单元；点为叶子角点（去重），
悬挂角点上的场值由单元插值得到
"""

from pathlib import Path
from typing import Dict, Optional

import meshio
import numpy as np

from src.core.console import log
from src.core.nodes import HangingGovernance, generate_element_nodes
from src.models.errors import MeshError
from src.models.nodeset import NodeSet, node_lattice_side, node_linear_keys
from src.models.tree import DomainMapping, IncompleteTree

# 角点二进制编号（x 位最低）→ VTK 顶点顺序
_VTK_CELLS = {
    2: ("quad", np.array([0, 1, 3, 2])),
    3: ("hexahedron", np.array([0, 1, 3, 2, 4, 5, 7, 6])),
}


def corner_slots(dim: int, order: int) -> np.ndarray:
    """角点在单元局部编号（x 最快）中的位置，按角点二进制编号排列"""
    bits = (np.arange(2 ** dim)[:, None] >> np.arange(dim)[None, :]) & 1
    strides = (order + 1) ** np.arange(dim)
    return (bits * order) @ strides


def write_vtu(
    path: Path,
    tree: IncompleteTree,
    node_set: NodeSet,
    governance: HangingGovernance,
    mapping: Optional[DomainMapping] = None,
    fields: Optional[Dict[str, np.ndarray]] = None,
) -> Path:
    """
    写出非结构网格

    Args:
        fields: 节点场（长度 N），导出为点数据
    Returns:
        写出的路径

    Raises:
        MeshError: 树为空或场长度不符
    """
    if tree.is_empty:
        raise MeshError("树为空，无法导出 VTU")
    dim, order = tree.dim, node_set.order
    mapping = mapping or DomainMapping()
    cell_type, vtk_order = _VTK_CELLS[dim]
    slots = corner_slots(dim, order)

    corners = generate_element_nodes(tree.leaves, order)[:, slots, :]  # (n, 2^d, d)
    flat = corners.reshape(-1, dim)
    unique_linear, first, inverse = np.unique(
        node_linear_keys(flat, order), return_index=True, return_inverse=True
    )
    keys = flat[first]
    points = mapping.to_physical(keys.astype(np.float64) / node_lattice_side(order))
    if dim == 2:
        points = np.hstack([points, np.zeros((len(points), 1))])
    connectivity = inverse.reshape(len(tree), 2 ** dim)[:, vtk_order]

    ids = node_set.lookup(keys)
    present = ids >= 0
    boundary = np.zeros(len(keys), dtype=np.int8)
    boundary[present] = node_set.boundary[ids[present]]
    point_data: Dict[str, np.ndarray] = {"boundary": boundary}

    for name, values in (fields or {}).items():
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != len(node_set):
            raise MeshError(f"场 {name} 长度 {values.shape[0]} 与节点数 {len(node_set)} 不一致")
        local = governance.gather(values)[:, slots].reshape(-1)
        result = np.zeros(len(unique_linear))
        result[inverse] = local
        point_data[name] = result

    mesh = meshio.Mesh(
        points=points,
        cells=[(cell_type, connectivity)],
        point_data=point_data,
        cell_data={"level": [tree.leaves.levels.astype(np.int32)]},
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meshio.write(str(path), mesh, file_format="vtu", binary=False)
    log(f"VTU 已写出: {path}（{len(tree)} 个单元, {len(points)} 个点）")
    return path
