import math

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse import linalg as spla

from src.core.octree import construct_uniform
from src.core.partition import partition_tree
from src.core.solver import (
    ManufacturedSolution,
    PoissonProblem,
    cg_solve,
    condition_estimate,
    error_norms,
    solve_poisson,
)
from src.core.studies import discretize, disk_subdomain
from src.geometry.shapes import Box, Sphere, union
from src.geometry.subdomain import Subdomain
from src.models.errors import SolverError
from tests.helpers import random_carved

TIGHT = dict(rel_tol=1e-12, abs_tol=1e-14, max_iter=20000)


def _laplacian_1d(n):
    return sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_cg_matches_direct_solve():
    matrix = _laplacian_1d(40)
    rhs = np.linspace(0.0, 1.0, 40)
    x, report = cg_solve(matrix, rhs, rel_tol=1e-12, abs_tol=0.0)
    assert report.converged
    assert np.allclose(x, spla.spsolve(matrix.tocsc(), rhs))
    assert report.residual_history[0] == pytest.approx(np.linalg.norm(rhs))
    assert len(report.residual_history) == report.iterations + 1


def test_cg_with_jacobi_and_function_operator():
    matrix = sparse.diags(np.arange(1.0, 11.0)) + 0.1 * _laplacian_1d(10)
    rhs = np.ones(10)
    x, report = cg_solve(lambda v: matrix @ v, rhs, rel_tol=1e-12, abs_tol=0.0, diagonal=matrix.diagonal())
    assert report.converged
    assert np.allclose(matrix @ x, rhs)


def test_cg_zero_rhs_returns_immediately():
    x, report = cg_solve(_laplacian_1d(5), np.zeros(5))
    assert report.iterations == 0
    assert report.converged
    assert np.all(x == 0.0)


def test_cg_absolute_tolerance_stops_early():
    _, loose = cg_solve(_laplacian_1d(50), np.ones(50), rel_tol=0.0, abs_tol=1e3)
    assert loose.iterations == 0
    assert loose.converged


def test_cg_failure_modes():
    matrix = _laplacian_1d(200)
    rhs = np.ones(200)
    _, report = cg_solve(matrix, rhs, rel_tol=1e-12, abs_tol=0.0, max_iter=2)
    assert not report.converged
    assert report.iterations == 2
    with pytest.raises(SolverError):
        cg_solve(matrix, rhs, rel_tol=1e-12, abs_tol=0.0, max_iter=2, raise_on_failure=True)
    with pytest.raises(SolverError):
        cg_solve(-sparse.eye(3, format="csr"), np.ones(3))
    with pytest.raises(SolverError):
        cg_solve(matrix, rhs, diagonal=np.zeros(200))


def test_manufactured_solutions():
    points = np.array([[0.5, 0.5], [0.25, 1.0]])
    sine = ManufacturedSolution("sine")
    assert sine.exact(points) == pytest.approx([1.0, 0.0], abs=1e-15)
    assert sine.forcing(points)[0] == pytest.approx(2 * math.pi ** 2)
    quad = ManufacturedSolution("quadratic")
    assert quad.exact(points) == pytest.approx([0.5, 1.0625])
    assert np.all(quad.forcing(points) == -4.0)
    with pytest.raises(SolverError):
        ManufacturedSolution("cubic")
    with pytest.raises(SolverError):
        PoissonProblem(Subdomain(2), dirichlet_mode="weak")


@pytest.mark.parametrize("dim", [2, 3])
def test_quadratic_solution_is_exact_for_p2(dim):
    rng = np.random.default_rng(70 + dim)
    sub, tree = random_carved(rng, dim, 1, 4 if dim == 2 else 3)
    disc = discretize(tree, 2, sub)
    problem = PoissonProblem(sub, 2, ManufacturedSolution("quadratic"))
    u, report = solve_poisson(problem, tree, disc.node_set, disc.governance, **TIGHT)
    assert report.converged
    assert report.l2_error < 1e-7
    assert report.linf_error < 1e-7
    assert report.dofs == len(disc.node_set)
    assert report.elements == len(tree)


def test_assembled_and_matvec_modes_agree():
    rng = np.random.default_rng(4)
    sub, tree = random_carved(rng, 2, 2, 5)
    disc = discretize(tree, 1, sub)
    problem = PoissonProblem(sub, 1)
    u_free, _ = solve_poisson(problem, tree, disc.node_set, disc.governance, **TIGHT)
    u_csr, _ = solve_poisson(problem, tree, disc.node_set, disc.governance, solve_mode="assembled", **TIGHT)
    u_jac, report = solve_poisson(problem, tree, disc.node_set, disc.governance, jacobi=True, **TIGHT)
    assert report.converged
    assert np.allclose(u_free, u_csr, atol=1e-7)
    assert np.allclose(u_free, u_jac, atol=1e-7)
    with pytest.raises(SolverError):
        solve_poisson(problem, tree, disc.node_set, disc.governance, solve_mode="direct")


@pytest.mark.parametrize("ranks", [1, 2, 4, 8])
def test_solution_independent_of_rank_count(ranks):
    rng = np.random.default_rng(6)
    sub, tree = random_carved(rng, 2, 2, 5)
    disc = discretize(tree, 1, sub)
    problem = PoissonProblem(sub, 1)
    strict = dict(rel_tol=1e-13, abs_tol=0.0, max_iter=20000)
    single, _ = solve_poisson(problem, tree, disc.node_set, disc.governance, **strict)
    dtree = partition_tree(tree, ranks, 0.1)
    multi, report = solve_poisson(problem, tree, disc.node_set, disc.governance, dtree=dtree, workers=2, **strict)
    assert report.converged
    assert report.rank_count == ranks
    assert np.linalg.norm(multi - single) <= 1e-10 * np.linalg.norm(single)


def test_boundary_values_are_imposed():
    sub = disk_subdomain()
    tree = construct_uniform(sub, 4)
    disc = discretize(tree, 1, sub)
    problem = PoissonProblem(sub, 1, ManufacturedSolution("quadratic"))
    u, _ = solve_poisson(problem, tree, disc.node_set, disc.governance, **TIGHT)
    ids, values = problem.dirichlet_values(disc.node_set)
    assert np.allclose(u[ids], values)


def test_projected_dirichlet_values_lie_on_surface():
    sub = Subdomain(2, Sphere([0.5, 0.5], 0.25))
    tree = construct_uniform(sub, 4)
    disc = discretize(tree, 1, sub)
    problem = PoissonProblem(sub, 1, ManufacturedSolution("quadratic"), "projected")
    ids, values = problem.dirichlet_values(disc.node_set)
    carved = sub.carved_points(disc.node_set.unit_coordinates()[ids])
    assert np.any(carved)
    points = disc.node_set.physical_coordinates()[ids][carved]
    projected = sub.shape.closest_boundary_point(points)
    assert np.allclose(np.linalg.norm(projected - 0.5, axis=1), 0.25)
    assert np.allclose(values[carved], np.sum(projected ** 2, axis=1))


def test_projected_mode_needs_closest_point():
    sub = Subdomain(2, union(Sphere([0.5, 0.5], 0.25), Box([0.0, 0.0], [0.1, 0.1])))
    tree = construct_uniform(sub, 3)
    disc = discretize(tree, 1, sub)
    problem = PoissonProblem(sub, 1, dirichlet_mode="projected")
    with pytest.raises(SolverError):
        problem.dirichlet_values(disc.node_set)


def test_error_norms_of_exact_interpolant():
    tree = construct_uniform(Subdomain(2), 2)
    disc = discretize(tree, 2)
    problem = PoissonProblem(Subdomain(2), 2, ManufacturedSolution("quadratic"))
    exact = problem.solution.exact(disc.node_set.physical_coordinates())
    l2, linf = error_norms(exact, problem, tree, disc.node_set, disc.governance)
    assert l2 < 1e-12
    assert linf < 1e-12
    l2_off, linf_off = error_norms(exact + 1.0, problem, tree, disc.node_set, disc.governance)
    assert l2_off == pytest.approx(1.0)
    assert linf_off == pytest.approx(1.0)
    with pytest.raises(SolverError):
        error_norms(exact[:-1], problem, tree, disc.node_set, disc.governance)


def test_condition_estimates():
    matrix = sparse.diags([1.0, 2.0, 4.0], format="csr")
    dense = condition_estimate(matrix, "1")
    assert dense.method == "dense"
    assert dense.kappa == pytest.approx(4.0)
    sparse_estimate = condition_estimate(matrix, "1", dense_limit=0)
    assert sparse_estimate.method == "onenormest"
    assert sparse_estimate.kappa == pytest.approx(4.0)
    two = condition_estimate(matrix, "2")
    assert two.kappa == pytest.approx(4.0, rel=1e-4)
    assert not two.singular


def test_condition_estimate_edge_cases():
    singular = condition_estimate(sparse.csr_matrix(np.ones((2, 2))), "1")
    assert singular.singular
    assert math.isinf(singular.kappa)
    with pytest.raises(SolverError):
        condition_estimate(sparse.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]])), "2")
    with pytest.raises(SolverError):
        condition_estimate(sparse.eye(2), "fro")
