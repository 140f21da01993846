import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastotr.assembly import tri_basis
from elastotr.mesh import (GAMMA_F, GAMMA_I, GAMMA_S_H, GAMMA_S_V, build_dofmap, generate_mesh,
                           rectangle_mesh, sample_points, write_mesh)
from elastotr.scene import FLUID, INCLUSION, TISSUE, InclusionLayout

from conftest import tiny_scene


def test_unit_square_counts():
    m = rectangle_mesh([0, 0.5, 1.0], [0, 0.5, 1.0])
    assert (m.n_triangles, m.n_vertices) == (8, 9)


def test_euler_relation():
    m = rectangle_mesh(np.linspace(0, 1, 6), np.linspace(0, 2, 9))
    V, E, F = m.n_vertices, len(m.edges()), m.n_triangles
    assert V - E + F == 1


def test_interface_edges_border_fluid_and_solid(mesh):
    tris = mesh.triangles
    for a, b in mesh.boundary_edges[mesh.edge_tags == GAMMA_I]:
        owners = [t for t in range(len(tris)) if a in tris[t] and b in tris[t]]
        kinds = sorted(bool(mesh.regions[t] == FLUID) for t in owners)
        assert kinds == [False, True]


def test_no_triangle_straddles_interface(mesh, scene):
    y = mesh.vertices[mesh.triangles][:, :, 1]
    tol = 1e-12
    above = (y > scene.interface_y + tol).any(axis=1)
    below = (y < scene.interface_y - tol).any(axis=1)
    assert not np.any(above & below)


def test_tag_partition_lengths(mesh, scene):
    x0, y0, x1, y1 = scene.domain
    total = mesh.edge_lengths().sum()
    expected = 2 * (x1 - x0) + 2 * (y1 - y0) + (x1 - x0)
    assert total == pytest.approx(expected, rel=1e-12)
    assert mesh.edge_lengths(GAMMA_I).sum() == pytest.approx(x1 - x0, rel=1e-12)
    assert mesh.edge_lengths(GAMMA_S_H).sum() == pytest.approx(x1 - x0, rel=1e-12)
    assert mesh.edge_lengths(GAMMA_S_V).sum() == pytest.approx(2 * (scene.interface_y - y0),
                                                              rel=1e-12)
    assert mesh.edge_lengths(GAMMA_F).sum() == pytest.approx(
        (x1 - x0) + 2 * (y1 - scene.interface_y), rel=1e-12)


def test_refinement_quadruples_triangles():
    a = rectangle_mesh(np.linspace(0, 3, 4), np.linspace(0, 2, 3))
    b = rectangle_mesh(np.linspace(0, 3, 7), np.linspace(0, 2, 5))
    assert b.n_triangles == 4 * a.n_triangles


def test_mesh_respects_target_size():
    sc = tiny_scene(inclusions=())
    h = sc.wavelength / 4
    m = generate_mesh(sc, h)
    assert np.max(np.diff(m.xs)) <= h * (1 + 1e-12)
    assert np.max(np.diff(m.ys)) <= h * (1 + 1e-12)


def test_small_inclusion_is_resolved():
    sc = tiny_scene(inclusions=(InclusionLayout(1.5, 1.0, (0.5, 0.5)),))
    h = sc.inclusions[0].semi_axes[0] / 2
    m = generate_mesh(sc, h)
    assert np.any(m.regions == INCLUSION)


def test_skin_thicker_than_mesh_required():
    sc = tiny_scene()
    with pytest.raises(ValueError):
        generate_mesh(sc, sc.wavelength)
    with pytest.raises(ValueError):
        generate_mesh(sc, -1.0)


def test_sra_nodes_on_sra_line(mesh, scene):
    sra = scene.sras[0]
    pts = mesh.vertices[mesh.sra_nodes[0]]
    assert np.allclose(pts[:, 1], sra.start[1], atol=1e-12)
    assert len(mesh.sra_nodes[0]) == sra.receiver_count
    assert np.all(np.abs(pts[:, 0] - sra.receiver_points()[:, 0]) <= mesh.xs[1] - mesh.xs[0])


def test_dofmap_single_triangle():
    m = rectangle_mesh([0, 1], [0, 1], lambda x, y: np.where(x + y > 1, FLUID, TISSUE))
    dm = build_dofmap(m, 2)
    assert dm.n_fluid == 6 and dm.n_solid_nodes == 6
    dm1 = build_dofmap(m, 1)
    assert len(dm1.interface_nodes) == 2


def test_dofmap_p2_lattice_count():
    m, n = 4, 3
    msh = rectangle_mesh(np.linspace(0, 1, m + 1), np.linspace(0, 1, n + 1))
    dm = build_dofmap(msh, 2)
    assert dm.n_solid_nodes == (2 * m + 1) * (2 * n + 1)
    assert dm.n_fluid == 0


def test_dofmap_contiguous_and_disjoint(dofmap):
    f = dofmap.fluid_index[dofmap.fluid_index >= 0]
    s = dofmap.solid_index[dofmap.solid_index >= 0]
    assert np.array_equal(np.sort(f), np.arange(dofmap.n_fluid))
    assert np.array_equal(np.sort(s), np.arange(dofmap.n_solid_nodes))
    d = dofmap.solid_dofs(np.nonzero(dofmap.solid_index >= 0)[0]).ravel()
    assert d.min() == dofmap.n_fluid and d.max() == dofmap.n_dofs - 1


def test_dofmap_includes_midpoints(mesh, dofmap):
    assert len(dofmap.nodes) == mesh.n_vertices + len(mesh.edges())
    with pytest.raises(ValueError):
        build_dofmap(mesh, 3)


def test_sample_points_corners(mesh, scene):
    sp_ = sample_points(mesh, (2, 2))
    x0, y0, x1, _ = scene.solid_box
    assert np.allclose(sp_.points, [[x0, y0], [x1, y0], [x0, scene.interface_y],
                                    [x1, scene.interface_y]])
    with pytest.raises(ValueError):
        sample_points(mesh, (1, 5))


def test_sample_points_barycentric_sum(mesh):
    sp_ = sample_points(mesh, (17, 9))
    assert np.allclose(sp_.bary.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(sp_.bary > -1e-12)
    assert not np.any(mesh.is_fluid()[sp_.triangles])


@given(st.floats(0.05, 0.95))
def test_interpolant_consistent_across_edge(s):
    # a point on the anti-diagonal shared by the two triangles of one cell
    m = rectangle_mesh([0, 1], [0, 1])
    dm = build_dofmap(m, 2)
    rng = np.random.default_rng(3)
    vals = rng.standard_normal(len(dm.nodes))
    p = np.array([[s, 1.0 - s]])
    out = []
    for t in range(2):
        v = m.vertices[m.triangles[t]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        ref = np.linalg.solve(J, (p - v[0]).T).T
        phi, _ = tri_basis(2, ref)
        out.append(phi[0] @ vals[dm.elem_nodes[t]])
    assert out[0] == pytest.approx(out[1], abs=1e-10)


def test_no_fluid_solid_cross_coupling_in_stiffness(ops):
    # fluid and solid blocks are separate matrices; the monolithic matrix has
    # no fluid-solid entries outside the coupling block
    from elastotr.validation import symmetry_defect

    K = ops.stiffness().tocoo()
    nf = ops.n_fluid
    cross = ((K.row < nf) & (K.col >= nf)) | ((K.row >= nf) & (K.col < nf))
    assert not np.any(cross & (K.data != 0))
    assert symmetry_defect(ops.stiffness()) < 1e-14


def test_write_mesh(tmp_path, mesh):
    p = tmp_path / "mesh.txt"
    write_mesh(mesh, p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# vertices")
    assert sum(1 for l in lines if l.startswith("v ")) == mesh.n_vertices
    assert sum(1 for l in lines if l.startswith("t ")) == mesh.n_triangles
    assert any(l.endswith("GammaI") for l in lines)
