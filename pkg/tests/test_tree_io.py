import struct

import numpy as np
import pytest

from src.core.octree import construct_uniform
from src.core.tree_io import (
    MAGIC,
    VERSION,
    load_tree,
    load_tree_json,
    save_tree,
    save_tree_json,
    tree_from_dict,
    tree_to_dict,
)
from src.geometry.subdomain import Subdomain
from src.models.errors import TreeError
from src.models.tree import IncompleteTree
from tests.helpers import random_carved


def _same(a: IncompleteTree, b: IncompleteTree) -> bool:
    return a.same_leaves(b) and np.array_equal(a.tags, b.tags)


@pytest.mark.parametrize("dim", [2, 3])
def test_binary_and_json_agree(tmp_path, dim):
    rng = np.random.default_rng(dim)
    _, tree = random_carved(rng, dim, 1, 4 if dim == 2 else 3)
    binary = load_tree(save_tree(tree, tmp_path / "t.bin"))
    text = load_tree_json(save_tree_json(tree, tmp_path / "nested" / "t.json"))
    assert _same(binary, tree)
    assert _same(text, tree)


def test_binary_layout(tmp_path):
    tree = construct_uniform(Subdomain(2), 1)
    data = save_tree(tree, tmp_path / "t.bin").read_bytes()
    magic, version, dim, _, count = struct.unpack("<4sHBBQ", data[:16])
    assert (magic, version, dim, count) == (MAGIC, 1, 2, 4)
    # 每条记录：层级 + 2 个 u32 锚点 + 标签
    assert len(data) == 16 + 4 * 10


def test_empty_tree(tmp_path):
    tree = IncompleteTree.empty(3)
    loaded = load_tree(save_tree(tree, tmp_path / "empty.bin"))
    assert loaded.is_empty and loaded.dim == 3


def test_corrupt_files(tmp_path):
    tree = construct_uniform(Subdomain(2), 1)
    data = save_tree(tree, tmp_path / "t.bin").read_bytes()
    cases = {
        "short.bin": data[:10],
        "magic.bin": b"XXXX" + data[4:],
        "version.bin": data[:4] + struct.pack("<H", 9) + data[6:],
        "truncated.bin": data[:-3],
    }
    for name, payload in cases.items():
        path = tmp_path / name
        path.write_bytes(payload)
        with pytest.raises(TreeError):
            load_tree(path)


def test_dict_validation():
    tree = construct_uniform(Subdomain(2), 1)
    data = tree_to_dict(tree)
    assert data["dim"] == 2
    assert data["version"] == VERSION
    assert data["leaves"][0] == [1, 0, 0]
    assert _same(tree_from_dict(data), tree)
    with pytest.raises(TreeError):
        tree_from_dict({"leaves": []})
    with pytest.raises(TreeError):
        tree_from_dict({"version": VERSION, "dim": 2, "leaves": [[1, 3, 0]], "tags": [1]})


def test_dict_version_checked():
    data = tree_to_dict(construct_uniform(Subdomain(2), 1))
    with pytest.raises(TreeError, match="版本"):
        tree_from_dict({**data, "version": VERSION + 1})
    del data["version"]
    with pytest.raises(TreeError):
        tree_from_dict(data)
