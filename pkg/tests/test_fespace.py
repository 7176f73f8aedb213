import numpy as np
import pytest

from vech.errors import InvalidStateError
from vech.fespace import (assemble_p1_stiffness, discrete_laplacian, lumped_mass, nodal_interpolate, p1_layout,
                          p1_tensor_layout, p2_vector_layout, spaces)
from vech.mesh import build_macro_mesh

UNIT = ((0.0, 1.0), (0.0, 1.0))


def test_layout_sizes(unit_mesh_8):
    m = unit_mesh_8
    n2 = spaces(m).num_p2
    assert p1_layout(m).size == m.num_vertices
    assert p1_tensor_layout(m).size == 3 * m.num_vertices
    assert p2_vector_layout(m).size == 2 * n2
    assert n2 == m.num_vertices + len(m.edges()[0])


def test_lumped_weights_on_reference_split():
    m = build_macro_mesh(UNIT, 1)
    # each of the four triangles has area 1/4; the centre vertex touches all
    w = spaces(m).lumped
    assert np.sum(w) == pytest.approx(1.0)
    centre = np.argmin(np.hypot(*(m.vertices - 0.5).T))
    assert w[centre] == pytest.approx(4 * 0.25 / 3)


def test_local_stiffness_of_right_triangle():
    m = build_macro_mesh(UNIT, 1)
    K = assemble_p1_stiffness(m).toarray()
    assert np.allclose(K, K.T)
    assert np.allclose(K.sum(axis=1), 0)


def test_interpolation_exact_for_linears(unit_mesh_8):
    s = spaces(unit_mesh_8)
    q = nodal_interpolate(lambda x, y: 3 * x - y + 1, unit_mesh_8)
    exact = 3 * s.qx[..., 0] - s.qx[..., 1] + 1
    assert np.sqrt(s.integrate((s.p1_at_quad(q) - exact) ** 2)) < 1e-14


def test_constant_has_zero_laplacian(unit_mesh_8):
    assert np.allclose(discrete_laplacian(unit_mesh_8, np.full(unit_mesh_8.num_vertices, 2.5)), 0, atol=1e-12)


def test_laplacian_identity(unit_mesh_8, rng):
    q, z = rng.standard_normal((2, unit_mesh_8.num_vertices))
    lm = lumped_mass(unit_mesh_8)
    K = spaces(unit_mesh_8).stiffness()
    assert lm.inner(discrete_laplacian(unit_mesh_8, q), z) == pytest.approx(-q @ K @ z, rel=1e-12)


def test_weighted_stiffness_rejects_nonpositive(unit_mesh_8):
    coeff = np.ones(unit_mesh_8.num_vertices)
    coeff[3] = 0.0
    with pytest.raises(InvalidStateError):
        assemble_p1_stiffness(unit_mesh_8, coeff)


def test_lumped_norm_dominates(unit_mesh_8, rng):
    q = rng.standard_normal(unit_mesh_8.num_vertices)
    M = spaces(unit_mesh_8).p1_mass()
    assert lumped_mass(unit_mesh_8).norm(q) ** 2 >= q @ M @ q


def test_p2_mass_integrates_quadratics(unit_mesh_8):
    s = spaces(unit_mesh_8)
    u = np.zeros(2 * s.num_p2)
    u[: s.num_p2] = 1.0
    assert s.integrate(s.p2_at_quad(u)[..., 0]) == pytest.approx(1.0)
