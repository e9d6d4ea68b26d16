import numpy as np
import pytest

from nudgefem import mesh as msh


def total_area(m):
    return float(np.sum(m.signed_areas()))


def test_single_cell_counts():
    m = msh.build_structured(1)
    assert m.n_vertices == 4 and m.n_triangles == 2
    assert total_area(m) == pytest.approx(1.0, abs=1e-14)


def test_triangle_count_and_orientation():
    m = msh.build_structured(8)
    assert m.n_triangles == 128
    assert np.all(m.signed_areas() > 0)
    m.check()


def test_diagonal_runs_lower_left_to_upper_right():
    m = msh.build_structured(1)
    # both triangles share the edge (0,0)-(1,1)
    shared = set(map(int, m.triangles[0])) & set(map(int, m.triangles[1]))
    pts = {tuple(m.vertices[k]) for k in shared}
    assert pts == {(0.0, 0.0), (1.0, 1.0)}


def test_box_and_boundary_tags():
    m = msh.build_structured(4, (0.0, 10.0, -1.0, 1.0))
    assert total_area(m) == pytest.approx(20.0)
    assert len(m.boundary_edges) == 16
    for tag in (msh.BOTTOM, msh.RIGHT, msh.TOP, msh.LEFT):
        assert np.sum(m.boundary_tags == tag) == 4
    y = m.vertices[m.boundary_edges[m.boundary_tags == msh.BOTTOM]][..., 1]
    assert np.all(y == -1.0)


@pytest.mark.parametrize("n, box", [(0, (0, 1, 0, 1)), (2, (0, 0, 0, 1)), (2, (1, 0, 0, 1))])
def test_invalid_input(n, box):
    with pytest.raises(ValueError):
        msh.build_structured(n, box)


def test_refine_two_triangles():
    m = msh.barycentric_refine(msh.build_structured(1))
    assert m.n_triangles == 6 and m.n_vertices == 6
    assert total_area(m) == pytest.approx(1.0, abs=1e-14)
    assert np.all(m.signed_areas() > 0)
    m.check()


def test_refine_preserves_area_and_boundary():
    c = msh.build_structured(5, (0, 2, 0, 3))
    m = msh.barycentric_refine(c)
    assert m.n_triangles == 3 * c.n_triangles
    assert m.n_vertices == c.n_vertices + c.n_triangles
    assert total_area(m) == pytest.approx(6.0, rel=1e-14)
    assert np.array_equal(m.boundary_edges, c.boundary_edges)
    # new vertices are interior
    assert not np.intersect1d(m.boundary_vertices(), np.arange(c.n_vertices, m.n_vertices)).size


@pytest.mark.parametrize("refine", [False, True])
def test_locate_reconstructs_points(refine):
    m = msh.build_structured(7, (0, 3, 0, 2))
    m = msh.barycentric_refine(m) if refine else m
    rng = np.random.default_rng(1)
    pts = rng.uniform([0, 0], [3, 2], size=(500, 2))
    pts = np.vstack([pts, m.vertices, [[0, 0], [3, 2], [1.5, 0.0]]])
    tri, bary = m.locate(pts)
    assert np.all(bary >= 0) and np.all(bary <= 1)
    assert np.allclose(bary.sum(axis=1), 1.0, atol=1e-12)
    rec = np.einsum("pk,pkd->pd", bary, m.vertices[m.triangles[tri]])
    assert np.max(np.abs(rec - pts)) <= 1e-10 * m.diameter


def test_locate_matches_brute_force():
    m = msh.barycentric_refine(msh.build_structured(6))
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 1, size=(100, 2))
    tri, bary = m.locate(pts)
    for p, t, b in zip(pts, tri, bary):
        t2, b2 = msh.locate_brute_force(m, p)
        # on shared edges either triangle is acceptable; compare reconstructed points
        x1 = b @ m.vertices[m.triangles[t]]
        x2 = b2 @ m.vertices[m.triangles[t2]]
        assert np.allclose(x1, x2, atol=1e-12)


def test_point_on_edge_has_valid_coordinates():
    m = msh.build_structured(2)
    t, b = msh.locate_point(m, [0.25, 0.25])  # on a diagonal
    assert np.all(b >= 0) and b.sum() == pytest.approx(1.0, abs=1e-12)


def test_outside_point_raises():
    m = msh.build_structured(3)
    with pytest.raises(msh.PointOutsideDomain):
        m.locate([[1.0 + 1e-6, 0.5]])
    with pytest.raises(msh.PointOutsideDomain):
        msh.locate_brute_force(m, [-0.1, 0.5])
    # within the 1e-12 * diam slack the point is accepted and clamped
    tri, bary = m.locate([[1.0 + 1e-14, 0.5]])
    assert tri[0] >= 0
