import numpy as np
import pytest

from src.geometry.shapes import (
    Box,
    Sphere,
    classify_point,
    classify_region,
    complement,
    retained_box,
    union,
)
from src.models.errors import MeshError
from src.models.octant import PointClass, RegionClass


def test_sphere_sign_convention():
    disk = Sphere([0.5, 0.5], 0.25)
    values = disk.evaluate(np.array([[0.5, 0.5], [0.75, 0.5], [1.0, 0.5]]))
    assert values == pytest.approx([0.25, 0.0, -0.25])
    assert classify_point(disk, [0.75, 0.5]) == PointClass.CARVED
    assert classify_point(disk, [0.9, 0.5]) == PointClass.RETAINED


def test_region_classification_of_boxes():
    disk = Sphere([0.5, 0.5], 0.25)
    assert classify_region(disk, [0.45, 0.45], [0.55, 0.55]) == RegionClass.CARVED
    assert classify_region(disk, [0.0, 0.0], [0.1, 0.1]) == RegionClass.RETAIN_INTERNAL
    assert classify_region(disk, [0.7, 0.4], [0.8, 0.6]) == RegionClass.RETAIN_BOUNDARY


def test_box_touching_carved_set_from_outside_is_intercepted():
    # 闭包与 ∂C 相切的盒不能算 RetainInternal
    disk = Sphere([0.5, 0.5], 0.25)
    assert classify_region(disk, [0.75, 0.4], [0.85, 0.6]) == RegionClass.RETAIN_BOUNDARY


def test_channel_classification():
    channel = retained_box([0.0, 0.0], [1.0, 0.25])
    assert classify_region(channel, [0.0, 0.0], [0.25, 0.25]) == RegionClass.RETAIN_BOUNDARY
    assert classify_region(channel, [0.25, 0.0625], [0.3125, 0.125]) == RegionClass.RETAIN_INTERNAL
    assert classify_region(channel, [0.0, 0.25], [0.25, 0.5]) == RegionClass.CARVED
    assert classify_region(channel, [0.5, 0.5], [1.0, 1.0]) == RegionClass.CARVED


def test_degenerate_box_rejected():
    with pytest.raises(MeshError):
        classify_region(Sphere([0.5, 0.5], 0.25), [0.1, 0.1], [0.1, 0.2])


def test_union_and_complement():
    left = Box([0.0, 0.0], [0.25, 1.0])
    right = Box([0.75, 0.0], [1.0, 1.0])
    both = union(left, right)
    points = np.array([[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]])
    assert (both.evaluate(points) >= 0).tolist() == [True, False, True]
    assert complement(complement(left)) is left
    assert (complement(both).evaluate(points) >= 0).tolist() == [False, True, False]


def test_sphere_closest_boundary_point():
    disk = Sphere([0.5, 0.5], 0.25)
    q = disk.closest_boundary_point(np.array([[0.5, 0.6], [1.0, 0.5]]))
    assert np.allclose(q, [[0.5, 0.75], [0.75, 0.5]])


def test_invalid_shapes():
    with pytest.raises(MeshError):
        Sphere([0.5, 0.5], 0.0)
    with pytest.raises(MeshError):
        Box([0.0, 0.0], [0.0, 1.0])
    with pytest.raises(MeshError):
        union(Sphere([0.5, 0.5], 0.1), Sphere([0.5, 0.5, 0.5], 0.1))
