import numpy as np
import pytest

from src.core.basis import child_interpolation_table
from src.core.nodes import (
    build_hanging_governance,
    enumerate_nodes,
    enumerate_nodes_distributed,
    generate_cancellation_nodes,
    generate_element_nodes,
)
from src.core.octree import construct_uniform
from src.core.partition import partition_tree
from src.geometry.shapes import Sphere
from src.geometry.subdomain import Subdomain
from src.models.errors import TreeError
from src.models.nodeset import node_lattice_side
from src.models.octant import ROOT_SIDE, OctantKey
from tests.helpers import brute_force_nodes, key_set, random_carved, tree_from_cells

HALF = ROOT_SIDE // 2
QUARTER = ROOT_SIDE // 4


def _seven_leaf_tree():
    return tree_from_cells(2, [(2, (0, 0))])


def _leaf_index(tree, level, anchor):
    hits = np.flatnonzero((tree.leaves.levels == level) & np.all(tree.leaves.anchors == anchor, axis=1))
    assert len(hits) == 1
    return int(hits[0])


def test_element_nodes_layout():
    leaf = OctantKey.from_cell(1, (1, 0))
    nodes = generate_element_nodes(leaf, 2)
    assert nodes.shape == (9, 2)
    assert nodes[0].tolist() == [ROOT_SIDE, 0]
    assert nodes[1].tolist() == [ROOT_SIDE + HALF, 0]
    assert nodes[3].tolist() == [ROOT_SIDE, HALF]


def test_cancellation_nodes_skip_even_offsets():
    leaf = OctantKey.from_cell(1, (0, 0))
    cancel = generate_cancellation_nodes(leaf, 1)
    # p=1 二维：每条边中点各一个
    assert sorted(map(tuple, cancel.tolist())) == sorted(
        [(QUARTER, 0), (0, QUARTER), (HALF, QUARTER), (QUARTER, HALF)]
    )


def test_uniform_mesh_node_count():
    ns = enumerate_nodes(construct_uniform(Subdomain(2), 1), 1)
    assert len(ns) == 9
    assert int(ns.boundary.sum()) == 8
    ns = enumerate_nodes(construct_uniform(Subdomain(3), 2), 2)
    assert len(ns) == 9 ** 3
    assert int((~ns.boundary).sum()) == 7 ** 3


def test_refined_quadrant_node_count():
    tree = _seven_leaf_tree()
    ns = enumerate_nodes(tree, 1)
    assert len(ns) == 12
    assert ns.lookup(np.array([[HALF, QUARTER], [QUARTER, HALF]])).tolist() == [-1, -1]
    assert ns.lookup(np.array([[QUARTER, QUARTER]]))[0] >= 0


def test_unbalanced_tree_rejected():
    tree = tree_from_cells(2, [(4, (3, 3))])
    with pytest.raises(TreeError):
        enumerate_nodes(tree, 1)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("case", range(10))
def test_nodes_match_brute_force(dim, order, case):
    rng = np.random.default_rng(1000 * dim + 100 * order + case)
    level = int(rng.integers(3, 6)) if dim == 2 else int(rng.integers(2, 4))
    sub, tree = random_carved(rng, dim, 1, level)
    ns = enumerate_nodes(tree, order, sub)
    nodes = key_set(ns)
    assert nodes == brute_force_nodes(tree, order)

    # 挖除边界上没有悬挂节点
    coords = np.unique(generate_element_nodes(tree.leaves, order).reshape(-1, dim), axis=0)
    hanging = np.array([tuple(int(v) for v in c) not in nodes for c in coords])
    unit = coords[hanging].astype(np.float64) / node_lattice_side(order)
    assert not np.any(sub.carved_points(unit))


def test_carved_points_are_boundary():
    sub = Subdomain(2, Sphere([0.5, 0.5], 0.25))
    tree = construct_uniform(sub, 4)
    ns = enumerate_nodes(tree, 1, sub)
    x = ns.unit_coordinates()
    on_wall = np.any((x == 0.0) | (x == 1.0), axis=1)
    carved = sub.carved_points(x)
    assert np.any(carved)
    assert np.array_equal(ns.boundary, on_wall | carved)


def test_distributed_enumeration_matches_serial():
    rng = np.random.default_rng(3)
    sub, tree = random_carved(rng, 2, 2, 5)
    serial = enumerate_nodes(tree, 2, sub)
    for ranks in (1, 2, 4, 8):
        dtree = partition_tree(tree, ranks, 0.1)
        assert enumerate_nodes_distributed(dtree, 2, sub, workers=2).same_as(serial)


def test_quadratic_child_weights():
    table = child_interpolation_table(2, 2)
    assert table.shape == (4, 9, 9)
    assert table[0, 1, :3] == pytest.approx([0.375, 0.75, -0.125])
    assert np.allclose(table.sum(axis=2), 1.0)


def test_linear_hanging_stencil():
    tree = _seven_leaf_tree()
    ns = enumerate_nodes(tree, 1)
    gov = build_hanging_governance(tree, 1, ns)
    assert gov.hanging_count == 4
    leaf = _leaf_index(tree, 2, (QUARTER, 0))
    ids, weights = gov.stencil(leaf, 3)
    expected = ns.lookup(np.array([[HALF, 0], [HALF, HALF]]))
    assert sorted(ids.tolist()) == sorted(expected.tolist())
    assert weights == pytest.approx([0.5, 0.5])


def test_quadratic_hanging_stencil():
    tree = _seven_leaf_tree()
    ns = enumerate_nodes(tree, 2)
    gov = build_hanging_governance(tree, 2, ns)
    leaf = _leaf_index(tree, 2, (QUARTER, 0))
    ids, weights = gov.stencil(leaf, 5)
    # 节点格点坐标为 p·单位坐标
    targets = ns.lookup(np.array([[ROOT_SIDE, 0], [ROOT_SIDE, HALF], [ROOT_SIDE, ROOT_SIDE]]))
    assert np.all(targets >= 0)
    got = dict(zip(ids.tolist(), weights.tolist()))
    assert got == pytest.approx({int(targets[0]): 0.375, int(targets[1]): 0.75, int(targets[2]): -0.125})


@pytest.mark.parametrize("order", [1, 2])
def test_gather_reproduces_polynomials(order):
    rng = np.random.default_rng(17 + order)
    sub, tree = random_carved(rng, 2, 1, 5)
    ns = enumerate_nodes(tree, order, sub)
    gov = build_hanging_governance(tree, order, ns)

    def field(x):
        return 1.0 + x[..., 0] - 2.0 * x[..., 1] + (order - 1) * x[..., 0] * x[..., 1]

    local = gov.gather(field(ns.unit_coordinates()))
    points = generate_element_nodes(tree.leaves, order) / (order * ROOT_SIDE)
    assert np.allclose(local, field(points))


def test_scatter_is_gather_transpose():
    rng = np.random.default_rng(23)
    sub, tree = random_carved(rng, 3, 1, 3)
    ns = enumerate_nodes(tree, 2, sub)
    gov = build_hanging_governance(tree, 2, ns)
    u = rng.standard_normal(len(ns))
    v = rng.standard_normal((len(tree), gov.nodes_per_element))
    assert np.dot(gov.gather(u).ravel(), v.ravel()) == pytest.approx(np.dot(u, gov.scatter(v)))


def test_order_mismatch_rejected():
    tree = _seven_leaf_tree()
    with pytest.raises(TreeError):
        build_hanging_governance(tree, 2, enumerate_nodes(tree, 1))
