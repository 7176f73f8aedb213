import math

import numpy as np
import pytest

from vech import matfun
from vech import model as mdl
from vech.errors import InvalidConfigError
from vech.initial import (InitialSpec, bootstrap_mesh, initial_state, make_phi0, make_sigma0_quasistatic,
                          project_velocity, quasistatic_residual)
from vech.mesh import RefinementSpec, build_macro_mesh
from vech.solver import SolverConfig


def test_phi0_profile_values():
    f = InitialSpec().phi0(0.01)
    assert abs(float(f(0.0, 0.0)) - 1.0) < 1e-10
    assert float(f(5.0, 0.0)) == pytest.approx(-1.0)
    assert float(f(0.0, 5.0)) == pytest.approx(-1.0)


def test_phi0_is_interpolant():
    p = mdl.ModelParams()
    mesh = build_macro_mesh(p.box, 8)
    phi = make_phi0(mesh, p)
    assert np.allclose(phi, InitialSpec().phi0(p.epsilon)(*mesh.vertices.T))


def test_bad_spec_rejected():
    with pytest.raises(InvalidConfigError):
        InitialSpec(sigma0="guess")


def test_quasistatic_constant_without_sources():
    p = mdl.ModelParams(P=0.0, C=0.0, chi_phi=0.0)
    mesh = build_macro_mesh(p.box, 8)
    sigma = make_sigma0_quasistatic(mesh, make_phi0(mesh, p), p)
    assert np.allclose(sigma, 1.0, atol=1e-9)


def test_quasistatic_residual_small():
    p = mdl.ModelParams()
    mesh = build_macro_mesh(p.box, 16)
    phi = make_phi0(mesh, p)
    sigma = make_sigma0_quasistatic(mesh, phi, p)
    assert quasistatic_residual(mesh, phi, sigma, p) < 1e-8
    assert sigma.min() >= -1e-12 and sigma.max() <= 1 + 1e-12


def test_projection_of_zero_velocity():
    mesh = build_macro_mesh(mdl.ModelParams().box, 4)
    assert not np.any(project_velocity(mesh, lambda x, y: np.zeros(np.shape(x) + (2,)), 1e-3))


def test_initial_state_desk_mesh():
    p = mdl.ModelParams(potential="quartic", dt=1e-3)
    st = initial_state(p, RefinementSpec(8, 64), InitialSpec(), SolverConfig())
    assert st.t == 0.0 and st.step == 0
    assert np.all(st.v == 0)
    assert np.allclose(st.B, matfun.IDENTITY)
    assert np.min(matfun.eigenvalues(st.B)) == 1.0
    assert st.mesh.diameters().min() == pytest.approx(10 / 64)
    assert st.mesh.is_conforming()


def test_bootstrap_resolves_interface():
    p = mdl.ModelParams()
    mesh = bootstrap_mesh(p, RefinementSpec(8, 64))
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    fine = mesh.diameters() < 10 / 64 * (1 + 1e-9)
    r = np.hypot(*centroids[fine].T)
    assert r.min() > 0.5 and r.max() < 1.2
    assert math.isclose(mesh.diameters().max(), 10 / 8)
