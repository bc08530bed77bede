import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdeopt import mesh as msh


@pytest.mark.parametrize("n,nodes,tris", [(1, 4, 2), (2, 9, 8), (16, 289, 512)])
def test_unit_square_counts(n, nodes, tris):
    m = msh.unit_square(n)
    assert m.n_nodes == nodes
    assert m.n_triangles == tris
    m.validate()


def test_unit_square_rejects_zero():
    with pytest.raises(ValueError):
        msh.unit_square(0)


def test_unit_square_markers_and_interior_degree():
    m = msh.unit_square(4)
    assert m.marker_set() == {1, 2, 3, 4}
    # interior nodes have degree 6 in the uniform-diagonal pattern
    adj = [set() for _ in range(m.n_nodes)]
    for a, b, c in m.triangles:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    boundary = set(np.unique(m.boundary_edges))
    for i in range(m.n_nodes):
        if i not in boundary:
            assert len(adj[i]) == 6


def test_three_outlet_channel_invariants_and_markers():
    m = msh.three_outlet_channel(1)
    m.validate()
    assert m.marker_set() == {1, 2, 3, 4, 5}
    m2 = msh.three_outlet_channel(3)
    m2.validate()
    assert m2.marker_set() == {1, 2, 3, 4, 5}


def test_three_outlet_channel_refinement_ratio():
    t1 = msh.three_outlet_channel(1).n_triangles
    t2 = msh.three_outlet_channel(2).n_triangles
    ratio = t2 / t1
    assert abs(ratio - 4.0) <= 0.4  # spec allows +-10% around 4


def test_three_outlet_channel_rejects_zero():
    with pytest.raises(ValueError):
        msh.three_outlet_channel(0)


def test_disk_counts_and_quality():
    for n in (1, 4, 8):
        d = msh.disk(n)
        d.validate()
        assert d.n_nodes == 1 + 3 * n * (n + 1)
        assert d.n_triangles == 6 * n * n
        assert msh.min_quality(d) > 0.3


def test_deform_zero_field_is_identity():
    m = msh.unit_square(3)
    out = msh.deform(m, np.zeros_like(m.nodes))
    assert np.array_equal(out.nodes, m.nodes)
    assert out.triangles is m.triangles


def test_deform_rigid_translation_preserves_quality():
    m = msh.unit_square(3)
    out = msh.deform(m, np.tile([1.0, 1.0], (m.n_nodes, 1)))
    assert msh.min_quality(out) == pytest.approx(msh.min_quality(m), abs=1e-14)


def test_deform_inversion_names_triangle():
    m = msh.unit_square(1)
    # collapse node 0 onto the opposite edge of triangle 0: zero signed area
    field = np.zeros_like(m.nodes)
    field[0] = [1.0, 0.5]
    with pytest.raises(msh.MeshInversionError) as err:
        msh.deform(m, field)
    assert err.value.triangle in (0, 1)


def test_deform_shape_mismatch():
    m = msh.unit_square(2)
    with pytest.raises(ValueError):
        msh.deform(m, np.zeros((3, 2)))


def test_quality_oracles():
    equilateral = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
    assert msh.triangle_quality(equilateral) == pytest.approx(1.0, abs=1e-12)
    degenerate = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert msh.triangle_quality(degenerate) == 0.0
    # right isosceles with unit legs: 2 r_in / r_circ = 2 sqrt(2) - 2
    right = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert msh.triangle_quality(right) == pytest.approx(2.0 * np.sqrt(2.0) - 2.0, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    angle=st.floats(0.0, 2.0 * np.pi),
    tx=st.floats(-5.0, 5.0),
    ty=st.floats(-5.0, 5.0),
    scale=st.floats(0.1, 10.0),
)
def test_quality_invariant_under_rigid_motion_and_scaling(angle, tx, ty, scale):
    m = msh.unit_square(2)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    nodes = scale * (m.nodes @ rot.T) + np.array([tx, ty])
    moved = msh.Mesh2D(nodes, m.triangles, m.boundary_edges, m.boundary_markers)
    assert msh.min_quality(moved) == pytest.approx(msh.min_quality(m), rel=1e-9)


def test_validate_rejects_inverted_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 2, 1]])  # clockwise
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    bad = msh.Mesh2D(nodes, tris, edges, np.array([1, 1, 1]))
    with pytest.raises(ValueError, match="signed area"):
        bad.validate()


def test_validate_rejects_interior_edge_as_boundary():
    m = msh.unit_square(2)
    # declare an interior edge as boundary
    interior = None
    boundary = {tuple(sorted(e)) for e in m.boundary_edges}
    for tri in m.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if tuple(sorted((a, b))) not in boundary:
                interior = (a, b)
                break
        if interior:
            break
    edges = np.vstack([m.boundary_edges, [interior]])
    markers = np.append(m.boundary_markers, 1)
    bad = msh.Mesh2D(m.nodes, m.triangles, edges, markers)
    with pytest.raises(ValueError):
        bad.validate()


def test_vtk_roundtrip(tmp_path):
    m = msh.unit_square(2)
    scalar = np.linspace(0.0, 1.0, m.n_nodes)
    vector = np.column_stack([scalar, -scalar])
    path = tmp_path / "mesh.vtk"
    msh.write_vtk(m, path, {"s": scalar, "v": vector})
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert "DATASET UNSTRUCTURED_GRID" in text
    assert "CELL_TYPES 8" in text
    assert all(line == "5" for line in text.splitlines()
               if line and line.split()[0] == "5" and len(line.split()) == 1)
    back, data = msh.read_vtk(path)
    np.testing.assert_allclose(back.nodes, m.nodes)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_allclose(data["s"], scalar)
    np.testing.assert_allclose(data["v"], vector)
