"""
树的二进制 / JSON 存取

二进制格式（小端）：
    魔数 b"CVTR" | 版本 u16 | 维度 u8 | 保留 u8 | 叶子数 u64
    每条记录：层级 u8 | 锚点 u32 × d | 标签 u8
"""

import json
from pathlib import Path

import numpy as np

from src.models.errors import TreeError
from src.models.octant import Octants
from src.models.tree import IncompleteTree

MAGIC = b"CVTR"
VERSION = 1
_HEADER = np.dtype([("magic", "S4"), ("version", "<u2"), ("dim", "u1"), ("reserved", "u1"), ("count", "<u8")])


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("level", "u1"), ("anchor", "<u4", (dim,)), ("tag", "u1")])


def save_tree(tree: IncompleteTree, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.zeros(1, dtype=_HEADER)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["dim"] = tree.dim
    header["count"] = len(tree)
    records = np.zeros(len(tree), dtype=_record_dtype(tree.dim))
    records["level"] = tree.leaves.levels
    records["anchor"] = tree.leaves.anchors
    records["tag"] = tree.tags
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(records.tobytes())
    return path


def load_tree(path: Path) -> IncompleteTree:
    """
    读取二进制树

    Raises:
        TreeError: 魔数、版本或长度不符
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.itemsize:
        raise TreeError(f"树文件过短: {path}")
    header = np.frombuffer(data[: _HEADER.itemsize], dtype=_HEADER)[0]
    if bytes(header["magic"]) != MAGIC:
        raise TreeError(f"不是树文件（魔数不符）: {path}")
    if int(header["version"]) != VERSION:
        raise TreeError(f"不支持的树文件版本 {int(header['version'])}: {path}")
    dim = int(header["dim"])
    count = int(header["count"])
    dtype = _record_dtype(dim)
    body = data[_HEADER.itemsize:]
    if len(body) != count * dtype.itemsize:
        raise TreeError(f"树文件长度与记录数 {count} 不符: {path}")
    records = np.frombuffer(body, dtype=dtype)
    leaves = Octants(records["level"].astype(np.int64), records["anchor"].astype(np.int64).reshape(count, dim))
    leaves.validate()
    return IncompleteTree(leaves, records["tag"].astype(np.int8))


def tree_to_dict(tree: IncompleteTree) -> dict:
    return {
        "version": VERSION,
        "dim": tree.dim,
        "leaves": [[int(l), *map(int, a)] for l, a in zip(tree.leaves.levels, tree.leaves.anchors)],
        "tags": [int(t) for t in tree.tags],
    }


def tree_from_dict(data: dict) -> IncompleteTree:
    try:
        version = int(data["version"])
        dim = int(data["dim"])
        records = np.asarray(data["leaves"], dtype=np.int64).reshape(-1, dim + 1)
        tags = np.asarray(data["tags"], dtype=np.int8)
    except (KeyError, TypeError, ValueError) as exc:
        raise TreeError(f"树 JSON 结构非法: {exc}") from exc
    if version != VERSION:
        raise TreeError(f"不支持的树 JSON 版本 {version}")
    leaves = Octants(records[:, 0], records[:, 1:])
    leaves.validate()
    return IncompleteTree(leaves, tags)


def save_tree_json(tree: IncompleteTree, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(tree_to_dict(tree), sort_keys=True), encoding="utf-8")
    return path


def load_tree_json(path: Path) -> IncompleteTree:
    return tree_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
