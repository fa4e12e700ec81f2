import numpy as np
import pytest
from stl import mesh as stl_mesh

from src.geometry.mesh_shape import MeshShape, mesh_signed_distance
from src.geometry.triangle_mesh import TriangleMesh, box_mesh, icosphere
from src.models.errors import MeshError
from src.models.octant import RegionClass


@pytest.fixture(scope="module")
def cube_shape():
    return MeshShape(box_mesh([0.25, 0.25, 0.25], [0.75, 0.75, 0.75]))


def test_box_mesh_is_closed_and_outward():
    cube = box_mesh([0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
    cube.validate()
    assert cube.boundary_edge_count() == 0
    assert cube.signed_volume() == pytest.approx(6.0)


def test_cube_signed_distance(cube_shape):
    values = cube_shape.evaluate(np.array([[0.5, 0.5, 0.5], [0.9, 0.5, 0.5], [0.3, 0.5, 0.5]]))
    assert values == pytest.approx([0.25, -0.15, 0.05])


def test_cube_region_classes(cube_shape):
    tags = cube_shape.classify_boxes(
        np.array([[0.0, 0.0, 0.0], [0.4, 0.4, 0.4], [0.2, 0.4, 0.4]]),
        np.array([[0.1, 0.1, 0.1], [0.6, 0.6, 0.6], [0.3, 0.6, 0.6]]),
    )
    assert tags.tolist() == [RegionClass.RETAIN_INTERNAL, RegionClass.CARVED, RegionClass.RETAIN_BOUNDARY]


def test_single_point_helper_matches_batch():
    cube = box_mesh([0.25, 0.25, 0.25], [0.75, 0.75, 0.75])
    assert mesh_signed_distance(cube, [0.5, 0.5, 0.6]) == pytest.approx(0.15)


def test_open_mesh_rejected():
    cube = box_mesh([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    with pytest.raises(MeshError):
        TriangleMesh(cube.vertices, cube.faces[:-1]).validate()


def test_inward_mesh_is_flipped():
    cube = box_mesh([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    flipped = TriangleMesh(cube.vertices, cube.faces[:, [0, 2, 1]])
    flipped.validate()
    assert flipped.signed_volume() == pytest.approx(1.0)


def test_stl_round_trip(tmp_path):
    cube = box_mesh([0.25, 0.25, 0.25], [0.75, 0.75, 0.75])
    data = stl_mesh.Mesh(np.zeros(len(cube.faces), dtype=stl_mesh.Mesh.dtype))
    data.vectors[:] = cube.triangles
    path = tmp_path / "cube.stl"
    data.save(str(path))

    loaded = TriangleMesh.from_stl(path)
    assert len(loaded.vertices) == 8
    assert len(loaded.faces) == 12
    assert loaded.signed_volume() == pytest.approx(0.125)


def test_missing_stl_file(tmp_path):
    with pytest.raises(MeshError):
        TriangleMesh.from_stl(tmp_path / "nope.stl")


def test_icosphere_approximates_ball():
    ball = icosphere(2, 0.3, (0.5, 0.5, 0.5))
    shape = MeshShape(ball)
    center_value = float(shape.evaluate(np.array([[0.5, 0.5, 0.5]]))[0])
    assert 0.25 < center_value <= 0.3
    assert float(shape.evaluate(np.array([[0.05, 0.05, 0.05]]))[0]) < 0
