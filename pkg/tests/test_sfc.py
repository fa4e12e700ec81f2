from functools import cmp_to_key

import numpy as np
import pytest

from src.core.sfc import is_sfc_sorted, sfc_compare, sfc_order, tree_sort
from src.models.errors import TreeError
from src.models.octant import L_MAX, OctantKey, Octants


def _random_octants(rng, dim, count, max_level=6):
    keys = []
    for _ in range(count):
        level = int(rng.integers(0, max_level + 1))
        cell = rng.integers(0, 1 << level, dim)
        keys.append(OctantKey.from_cell(level, cell))
    return keys


def test_children_follow_morton_digits():
    root = OctantKey.root(2)
    children = root.children()
    assert [c.anchor for c in children] == [(0, 0), (1 << 19, 0), (0, 1 << 19), (1 << 19, 1 << 19)]
    for a, b in zip(children, children[1:]):
        assert sfc_compare(a, b) == -1
        assert sfc_compare(b, a) == 1


def test_ancestor_precedes_descendant():
    leaf = OctantKey.from_cell(4, (3, 5, 1))
    assert sfc_compare(leaf.parent(), leaf) == -1
    assert sfc_compare(OctantKey.root(3), leaf) == -1
    assert sfc_compare(leaf, leaf) == 0


@pytest.mark.parametrize("dim", [2, 3])
def test_radix_sort_matches_comparator(dim):
    rng = np.random.default_rng(11 + dim)
    keys = _random_octants(rng, dim, 300)
    expected = sorted(keys, key=cmp_to_key(sfc_compare))
    ordered = Octants.from_keys(keys)[sfc_order(Octants.from_keys(keys))]
    assert ordered.keys() == expected
    assert is_sfc_sorted(ordered)


def test_tree_sort_removes_duplicates():
    keys = [OctantKey.from_cell(2, (1, 1)), OctantKey.from_cell(1, (0, 0)), OctantKey.from_cell(2, (1, 1))]
    result = tree_sort(Octants.from_keys(keys))
    assert result.keys() == [OctantKey.from_cell(1, (0, 0)), OctantKey.from_cell(2, (1, 1))]


def test_unsorted_detected():
    octs = Octants.from_keys([OctantKey.from_cell(1, (1, 1)), OctantKey.from_cell(1, (0, 0))])
    assert not is_sfc_sorted(octs)


def test_deepest_level_supported():
    a = OctantKey.from_cell(L_MAX, (5, 7))
    b = OctantKey.from_cell(L_MAX, (5, 6))
    assert sfc_compare(b, a) == -1
    assert sfc_order(Octants.from_keys([a, b])).tolist() == [1, 0]


def test_misaligned_anchor_rejected():
    with pytest.raises(TreeError):
        OctantKey(1, (3, 0))
    with pytest.raises(TreeError):
        OctantKey(0, (0,))
