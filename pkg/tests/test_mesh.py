import numpy as np
import pytest

from vech.mesh import (RefinementSpec, build_macro_mesh, interface_band, rebuild, refine_to_indicator,
                       sign_change, transfer)


def test_single_cell():
    m = build_macro_mesh(n=1)
    assert (m.num_vertices, m.num_triangles) == (5, 4)


def test_macro_mesh_properties():
    m = build_macro_mesh(n=32)
    assert m.is_conforming()
    assert np.all(m.signed_areas() > 0)
    assert np.allclose(m.max_angles(), 90.0)
    assert m.diameters().max() == pytest.approx(10 * 2.0**-5)
    assert np.sum(m.signed_areas()) == pytest.approx(100.0)


def test_empty_marking_keeps_mesh():
    m = build_macro_mesh(n=4)
    out = refine_to_indicator(m, [], RefinementSpec(4, 16))
    assert out.same_topology(m)


def test_full_marking_one_level():
    m = build_macro_mesh(n=1)
    out = refine_to_indicator(m, range(4), RefinementSpec(1, 2))
    assert out.num_triangles == 16
    assert out.is_conforming()


def test_fine_diameter_matches_fine_grid():
    spec = RefinementSpec(4, 32)
    m = build_macro_mesh(n=4)
    phi = np.hypot(*m.vertices.T) - 2.0
    for _ in range(4):
        marked = np.union1d(interface_band(m, np.tanh(phi), spec.band_delta), sign_change(m, phi))
        m = refine_to_indicator(m, marked, spec)
        phi = np.hypot(*m.vertices.T) - 2.0
    assert m.diameters().min() == pytest.approx(10 / 32)
    assert m.is_conforming()
    assert np.all(m.max_angles() <= 90.0 + 1e-9)
    assert np.all(m.signed_areas() > 0)


def test_interface_band_trivial_cases():
    m = build_macro_mesh(n=4)
    assert len(interface_band(m, np.ones(m.num_vertices), 0.075)) == 0
    assert len(interface_band(m, np.zeros(m.num_vertices), 0.075)) == m.num_triangles


def test_interface_band_is_annular():
    m = build_macro_mesh(n=32)
    x, y = m.vertices.T
    th = np.arctan2(y, x)
    phi = -np.tanh((np.hypot(x, y) - 5 / 12 * (2 + 0.2 * np.cos(2 * th))) / (np.sqrt(2) * 0.1))
    band = interface_band(m, phi, 0.075)
    centroids = m.vertices[m.triangles[band]].mean(axis=1)
    r = np.hypot(*centroids.T)
    assert r.min() > 0.3 and r.max() < 1.5


def test_rebuild_reproduces_mesh():
    spec = RefinementSpec(4, 16)
    m = build_macro_mesh(n=4)
    m = refine_to_indicator(m, [0, 5, 9], spec)
    again = rebuild(m.box, m.coarse_n, m.requested, m.coarsen_count)
    assert np.array_equal(again.vertices, m.vertices)
    assert np.array_equal(again.triangles, m.triangles)


def test_transfer_exact_for_linear_fields():
    spec = RefinementSpec(4, 16)
    m = build_macro_mesh(n=4)
    fine = refine_to_indicator(m, range(0, m.num_triangles, 3), spec)
    f = 2 * m.vertices[:, 0] - m.vertices[:, 1] + 0.5
    (g,), _ = transfer(m, fine, (f,))
    assert np.allclose(g, 2 * fine.vertices[:, 0] - fine.vertices[:, 1] + 0.5)


def test_coarsening_needs_two_unmarked_calls():
    spec = RefinementSpec(4, 8)
    m = build_macro_mesh(n=4)
    fine = refine_to_indicator(m, [0], spec)
    once = refine_to_indicator(fine, [], spec)
    assert once.num_triangles == fine.num_triangles
    twice = refine_to_indicator(once, [], spec)
    assert twice.num_triangles < fine.num_triangles


def test_refinement_spec_validation():
    with pytest.raises(ValueError):
        RefinementSpec(16, 100)
    assert RefinementSpec(16, 256).fine_level == 8
