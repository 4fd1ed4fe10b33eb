import numpy as np
import pytest

from gconv.mesh import (
    DIRICHLET,
    PERIODIC,
    build_interval_mesh,
    build_rect_mesh,
    build_space,
)


def test_interval_mesh_uniform():
    m = build_interval_mesh(4, (0.0, 1.0))
    assert np.allclose(m.vertices, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert m.boundary.sum() == 2
    assert m.boundary[0] and m.boundary[-1]


def test_interval_mesh_single_cell():
    m = build_interval_mesh(1)
    assert m.num_cells == 1
    assert m.boundary.all()


def test_interval_mesh_scaled():
    m = build_interval_mesh(8, (0.0, 2.0))
    assert np.allclose(m.cell_measures(), 0.25)


@pytest.mark.parametrize("n_cells", [0, -3])
def test_interval_mesh_rejects_bad_count(n_cells):
    with pytest.raises(ValueError):
        build_interval_mesh(n_cells)


def test_interval_mesh_rejects_degenerate():
    with pytest.raises(ValueError):
        build_interval_mesh(4, (1.0, 1.0))


def test_rect_mesh_counts():
    m = build_rect_mesh(2, 2)
    assert m.num_vertices == 9
    assert m.num_cells == 8
    m = build_rect_mesh(4, 2, (0.0, 2.0, 0.0, 1.0))
    assert m.num_vertices == 15
    assert m.num_cells == 16


def test_rect_mesh_single_square():
    m = build_rect_mesh(1, 1)
    assert m.num_cells == 2
    assert np.allclose(m.cell_measures(), 0.5)


def test_rect_mesh_rejects_degenerate():
    with pytest.raises(ValueError):
        build_rect_mesh(2, 2, (0.0, 1.0, 1.0, 1.0))


@pytest.mark.parametrize("builder,args,measure", [
    (build_interval_mesh, (7, (0.0, 1.0)), 1.0),
    (build_interval_mesh, (5, (-1.0, 3.0)), 4.0),
    (build_rect_mesh, (3, 5, (0.0, 2.0, 0.0, 1.0)), 2.0),
])
def test_cell_measures_sum_to_domain(builder, args, measure):
    m = builder(*args)
    assert abs(m.domain_measure() - measure) <= 1e-12 * measure
    assert np.all(m.cell_measures() > 0)


def test_every_vertex_referenced():
    for m in (build_interval_mesh(6), build_rect_mesh(3, 4)):
        assert np.array_equal(np.unique(m.cells), np.arange(m.num_vertices))


def test_dirichlet_space_counts():
    assert build_space(build_interval_mesh(4), DIRICHLET).num_dofs == 3
    assert build_space(build_rect_mesh(2, 2), DIRICHLET).num_dofs == 1


def test_dirichlet_dofs_are_interior():
    sp = build_space(build_rect_mesh(4, 3), DIRICHLET)
    assert not sp.mesh.boundary[sp.dof_vertices].any()
    owned = sp.dof_of_vertex >= 0
    assert not (owned & sp.mesh.boundary).any()


def test_periodic_space_counts():
    assert build_space(build_interval_mesh(4), PERIODIC).num_dofs == 4
    assert build_space(build_rect_mesh(2, 2), PERIODIC).num_dofs == 4


def test_periodic_identification_idempotent():
    sp = build_space(build_rect_mesh(3, 3), PERIODIC)
    # the representative of every dof maps to itself
    reps = sp.dof_vertices
    assert np.array_equal(sp.dof_of_vertex[reps], np.arange(sp.num_dofs))
    # identification preserves cell measures
    assert abs(sp.mesh.domain_measure() - 1.0) <= 1e-12


def test_unknown_rule_rejected():
    with pytest.raises(ValueError):
        build_space(build_interval_mesh(4), "neumann")


def test_interpolate_nodal_values():
    sp = build_space(build_interval_mesh(8), DIRICHLET)
    u = sp.interpolate(lambda x: x**2)
    assert np.allclose(u, sp.dof_coordinates() ** 2)
