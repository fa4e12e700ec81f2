import numpy as np
import pytest
from scipy import io as sio
from scipy import sparse

from src.core.femops import (
    MASS,
    STIFFNESS,
    DirichletOperator,
    ElementalOperator,
    TraversalMatvec,
    apply_dirichlet,
    assemble,
    elemental_matrix,
    export_matrix_market,
    matvec,
)
from src.core.nodes import build_hanging_governance, enumerate_nodes
from src.models.errors import PartitionError, SolverError
from src.models.octant import OctantKey
from src.models.tree import DomainMapping
from tests.helpers import random_carved, tree_from_cells


def _setup(seed, dim, order):
    rng = np.random.default_rng(seed)
    sub, tree = random_carved(rng, dim, 1, 4 if dim == 2 else 3)
    ns = enumerate_nodes(tree, order, sub)
    gov = build_hanging_governance(tree, order, ns)
    return rng, tree, ns, gov


def test_unit_square_stiffness():
    expected = np.array([
        [4, -1, -1, -2],
        [-1, 4, -2, -1],
        [-1, -2, 4, -1],
        [-2, -1, -1, 4],
    ]) / 6.0
    assert np.allclose(elemental_matrix(STIFFNESS, 0, 1, dim=2), expected)
    # 二维刚度与单元尺寸无关
    assert np.allclose(elemental_matrix(STIFFNESS, OctantKey.from_cell(3, (1, 2)), 1), expected)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("order", [1, 2])
def test_elemental_matrix_properties(dim, order):
    k = elemental_matrix(STIFFNESS, 2, order, dim=dim)
    m = elemental_matrix(MASS, 2, order, dim=dim)
    assert np.allclose(k, k.T)
    assert np.allclose(k.sum(axis=1), 0.0)
    assert m.sum() == pytest.approx(0.25 ** dim)
    scaled = elemental_matrix(MASS, 2, order, DomainMapping(scale=2.0), dim=dim)
    assert np.allclose(scaled, m * 2.0 ** dim)


def test_stretched_operator():
    plain = elemental_matrix(STIFFNESS, 1, 1, dim=2)
    stretched = elemental_matrix(ElementalOperator("stiffness", (1.0, 4.0)), 1, 1, dim=2)
    assert not np.allclose(plain, stretched)
    assert np.allclose(stretched.sum(axis=1), 0.0)
    with pytest.raises(SolverError):
        ElementalOperator("stiffness", (1.0, -1.0))
    with pytest.raises(SolverError):
        ElementalOperator("laplace")
    with pytest.raises(SolverError):
        elemental_matrix(STIFFNESS, 1, 1)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("case", range(25))
def test_matvec_matches_assembly(dim, order, case):
    rng, tree, ns, gov = _setup(1000 * dim + 100 * order + case, dim, order)
    for op in (STIFFNESS, MASS):
        matrix = assemble(tree, ns, gov, op)
        u = rng.standard_normal(len(ns))
        expected = matrix @ u
        deviation = np.abs(matvec(tree, ns, gov, op, u) - expected).max()
        assert deviation <= 1e-12 * np.abs(expected).max()
    assert abs(matrix - matrix.T).max() <= 1e-13 * abs(matrix).max()


@pytest.mark.parametrize("order", [1, 2])
def test_assembly_is_constrained_block_product(order):
    _, tree, ns, gov = _setup(7 + order, 2, order)
    matrix = assemble(tree, ns, gov, STIFFNESS)
    blocks = sparse.block_diag([elemental_matrix(STIFFNESS, leaf, order) for leaf in tree.leaves.keys()])
    reference = (gov.element_map.T @ blocks @ gov.element_map).toarray()
    assert np.allclose(matrix.toarray(), reference)
    assert abs(matrix - matrix.T).max() < 1e-12


def test_constants_in_stiffness_kernel_and_mass_volume():
    _, tree, ns, gov = _setup(31, 2, 2)
    ones = np.ones(len(ns))
    assert np.allclose(matvec(tree, ns, gov, STIFFNESS, ones), 0.0, atol=1e-12)
    volume = ones @ matvec(tree, ns, gov, MASS, ones)
    assert volume == pytest.approx(tree.leaves.unit_volumes().sum())


def test_traversal_matvec_records_phases():
    rng, tree, ns, gov = _setup(5, 2, 1)
    op = TraversalMatvec.from_governance(tree, gov, STIFFNESS)
    op(rng.standard_normal(len(ns)))
    assert {"alloc", "top_down", "leaf_matvec", "bottom_up"} <= set(op.timings)
    op.reset_timings()
    assert op.timings == {}


def test_wrong_vector_length():
    tree = tree_from_cells(2, [(2, (0, 0))])
    ns = enumerate_nodes(tree, 1)
    gov = build_hanging_governance(tree, 1, ns)
    with pytest.raises(PartitionError):
        matvec(tree, ns, gov, STIFFNESS, np.zeros(len(ns) + 1))


def test_symmetric_dirichlet_matches_operator():
    rng, tree, ns, gov = _setup(12, 2, 1)
    matrix = assemble(tree, ns, gov, STIFFNESS)
    ids = ns.boundary_ids()
    values = rng.standard_normal(len(ids))
    rhs = rng.standard_normal(len(ns))
    constrained, new_rhs = apply_dirichlet(matrix, ids, values, rhs, symmetric=True)
    assert abs(constrained - constrained.T).max() < 1e-12

    op = DirichletOperator(lambda v: matvec(tree, ns, gov, STIFFNESS, v), ids, len(ns))
    u = rng.standard_normal(len(ns))
    assert np.allclose(op(u), constrained @ u)
    assert np.allclose(op.constrained_rhs(rhs, values), new_rhs)
    assert np.allclose(op.residual(u, rhs, values), constrained @ u - new_rhs)
    assert np.allclose(op.diagonal(matrix.diagonal())[ids], 1.0)


def test_nonsymmetric_dirichlet_keeps_columns():
    _, tree, ns, gov = _setup(13, 2, 1)
    matrix = assemble(tree, ns, gov, STIFFNESS)
    ids = ns.boundary_ids()
    rhs = np.zeros(len(ns))
    constrained, new_rhs = apply_dirichlet(matrix, ids, 2.0, rhs, symmetric=False)
    dense = constrained.toarray()
    assert np.allclose(dense[ids], np.eye(len(ns))[ids])
    interior = np.setdiff1d(np.arange(len(ns)), ids)
    assert np.allclose(dense[interior], matrix.toarray()[interior])
    assert np.allclose(new_rhs[ids], 2.0)
    assert np.allclose(new_rhs[interior], 0.0)


def test_dirichlet_rejects_bad_ids():
    with pytest.raises(SolverError):
        apply_dirichlet(sparse.eye(3), np.array([3]), 0.0, np.zeros(3))


def test_matrix_market_export(tmp_path):
    _, tree, ns, gov = _setup(2, 2, 1)
    matrix = assemble(tree, ns, gov, STIFFNESS)
    path = export_matrix_market(matrix, tmp_path / "out" / "a.mtx", comment="stiffness")
    loaded = sparse.csr_matrix(sio.mmread(str(path)))
    assert abs(loaded - matrix).max() < 1e-12
