import numpy as np
import pytest

from elastoscan.core import InputError
from elastoscan.geometry import (Placement, Scene, balanced_points, component, make_shape,
                                 rotation_matrix, sample_surface)

SHAPES = ("ball", "kite", "peanut", "acorn", "ufo")


def test_ball_surface_area():
    s = sample_surface(make_shape("ball"), Placement(), 48, 48)
    assert s.area == pytest.approx(4 * np.pi, rel=1e-6)
    assert np.allclose(s.normals, s.points, atol=1e-12)


@pytest.mark.parametrize("shape", SHAPES)
def test_shapes_contain_origin_and_have_outward_normals(shape):
    s = sample_surface(make_shape(shape), Placement(), 24, 24)
    assert np.min(np.linalg.norm(s.points, axis=1)) > 0.05
    # divergence theorem: the flux of x through the surface is 3 * volume > 0
    vol = np.sum(s.weights * np.einsum("ij,ij->i", s.points, s.normals)) / 3.0
    assert vol > 0.05


def test_unknown_shape():
    with pytest.raises(InputError):
        make_shape("teapot")


def test_rotation_matrix_zyz():
    R = rotation_matrix((0.3, 0.7, -0.4))
    assert np.allclose(R @ R.T, np.eye(3))
    assert np.linalg.det(R) == pytest.approx(1.0)
    Ry = rotation_matrix((0.0, np.pi, 0.0))
    assert np.allclose(Ry @ [0, 0, 1], [0, 0, -1])


def test_placement_moves_surface():
    shape = make_shape("peanut")
    p = Placement((1.0, -2.0, 0.5), (0.2, 0.4, 0.1), 0.5)
    s0 = sample_surface(shape, Placement(), 16, 16)
    s1 = sample_surface(shape, p, 16, 16)
    R = rotation_matrix(p.euler)
    assert np.allclose(s1.points, 0.5 * s0.points @ R.T + np.array(p.position))
    assert s1.area == pytest.approx(0.25 * s0.area, rel=1e-10)


def test_balanced_points_count():
    pts = balanced_points(make_shape("acorn"), Placement(), 300)
    assert abs(len(pts.points) - 300) <= 30


def test_scene_rejects_overlap():
    with pytest.raises(InputError):
        Scene([component("ball", (0, 0, 0)), component("ball", (1.5, 0, 0))])
    Scene([component("ball", (0, 0, 0)), component("ball", (2.5, 0, 0))])


def test_scene_kind_validation():
    with pytest.raises(InputError):
        Scene([component("ball")], "tiny")
