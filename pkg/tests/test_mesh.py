import math
import struct

import numpy as np
import pytest
from scipy import ndimage

from mastoidseg.mesh import (TriMesh, empty_mesh, enclosed_volume, euler_characteristic,
                             is_watertight, marching_cubes, surface_area, write_obj, write_stl)
from mastoidseg.volume import Volume3

from _oracles import parse_obj


def soft_ball(n=25, r=10.0, spacing=(1.0, 1.0, 1.0)):
    """Partial-volume ball: 1 inside, 0 outside, linear over one voxel."""
    c = (n - 1) / 2
    g = np.indices((n, n, n), dtype=np.float64)
    d = np.sqrt(sum((g[i] - c) ** 2 for i in range(3)))
    return Volume3(np.clip(r + 0.5 - d, 0.0, 1.0), spacing)


@pytest.fixture(scope="module")
def ball_mesh():
    return marching_cubes(soft_ball())


def test_all_below_iso_is_empty():
    assert len(marching_cubes(Volume3(np.zeros((4, 4, 4))), 0.5)) == 0
    assert len(marching_cubes(Volume3(np.ones((4, 4, 4))), 0.5)) == 0


def test_iso_at_extreme_is_empty():
    a = np.zeros((4, 4, 4))
    a[1, 1, 1] = 1
    assert len(marching_cubes(Volume3(a), 1.0)) == 0


def test_thin_volume_errors():
    with pytest.raises(ValueError):
        marching_cubes(Volume3(np.zeros((1, 4, 4))))


def test_single_voxel_is_closed_octahedron():
    a = np.zeros((5, 5, 5))
    a[2, 2, 2] = 1
    m = marching_cubes(Volume3(a), 0.5)
    assert len(m) == 8 and len(m.vertices) == 6
    assert is_watertight(m) and euler_characteristic(m) == 2
    # octahedron with vertices 0.5 from the center: volume 4/3 * 0.5^3
    assert enclosed_volume(m) == pytest.approx(4 / 3 * 0.125, rel=1e-12)


def test_ball_is_watertight_sphere(ball_mesh):
    m = ball_mesh
    assert is_watertight(m)
    assert euler_characteristic(m) == 2
    area = 4 * math.pi * 100
    assert abs(surface_area(m) - area) / area < 0.05
    vol = 4 / 3 * math.pi * 1000
    assert abs(enclosed_volume(m) - vol) / vol < 0.05


def test_normals_point_outward(ball_mesh):
    m = ball_mesh
    centroid = m.vertices[m.triangles].mean(axis=1)
    outward = np.sum(m.normals * (centroid - 12.0), axis=1)
    assert np.all(outward > 0)


def test_no_degenerate_triangles(ball_mesh):
    m = ball_mesh
    assert np.all(0.5 * np.linalg.norm(m._cross(), axis=1) > 1e-12)
    assert m.triangles.min() >= 0 and m.triangles.max() < len(m.vertices)
    assert np.all(np.isfinite(m.vertices))


def test_binary_ball_is_watertight():
    # hard 0/1 data: closed, but the staircase inflates the area
    ball = soft_ball().data >= 0.5
    m = marching_cubes(Volume3(ball.astype(float)), 0.5)
    assert is_watertight(m) and euler_characteristic(m) == 2


def test_spacing_scales_coordinates():
    v = soft_ball(15, 5.0)
    m1 = marching_cubes(v)
    m2 = marching_cubes(Volume3(v.data, (2.0, 2.0, 2.0)))
    assert np.array_equal(m1.triangles, m2.triangles)
    np.testing.assert_allclose(m2.vertices, 2 * m1.vertices, rtol=1e-15)
    assert surface_area(m2) == pytest.approx(4 * surface_area(m1), rel=1e-12)


def test_deterministic(ball_mesh):
    m = marching_cubes(soft_ball())
    assert np.array_equal(m.vertices, ball_mesh.vertices)
    assert np.array_equal(m.triangles, ball_mesh.triangles)


def test_area_agrees_with_scikit_image():
    measure = pytest.importorskip("skimage.measure")
    rng = np.random.default_rng(0)
    for _ in range(3):
        a = ndimage.gaussian_filter(rng.random((20, 18, 16)), 2.0)
        iso = float(np.median(a))
        ours = surface_area(marching_cubes(Volume3(a), iso))
        verts, faces, _, _ = measure.marching_cubes(a, iso)
        theirs = measure.mesh_surface_area(verts, faces)
        assert ours == pytest.approx(theirs, rel=0.01)


# export --------------------------------------------------------------------

def one_triangle():
    return TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


def test_empty_stl_is_84_bytes(tmp_path):
    write_stl(empty_mesh(), tmp_path / "e.stl")
    raw = (tmp_path / "e.stl").read_bytes()
    assert len(raw) == 84 and raw[:80] == bytes(80) and raw[80:] == bytes(4)


def test_one_triangle_stl_layout(tmp_path):
    write_stl(one_triangle(), tmp_path / "t.stl")
    raw = (tmp_path / "t.stl").read_bytes()
    assert len(raw) == 134
    assert struct.unpack("<I", raw[80:84]) == (1,)
    vals = struct.unpack("<12fH", raw[84:])
    assert vals[:3] == (0.0, 0.0, 1.0)
    assert vals[3:12] == (0, 0, 0, 1, 0, 0, 0, 1, 0)
    assert vals[12] == 0


def test_stl_size_matches_count(tmp_path, ball_mesh):
    write_stl(ball_mesh, tmp_path / "b.stl")
    assert (tmp_path / "b.stl").stat().st_size == 84 + 50 * len(ball_mesh)


def test_obj_roundtrip(tmp_path, ball_mesh):
    write_obj(ball_mesh, tmp_path / "b.obj")
    verts, faces = parse_obj(tmp_path / "b.obj")
    assert np.array_equal(faces, ball_mesh.triangles)
    assert np.array_equal(verts, ball_mesh.vertices)
    # indices on disk are 1-based
    assert faces.min() == 0
