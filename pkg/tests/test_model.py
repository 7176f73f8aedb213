import math

import numpy as np
import pytest

from vech import matfun
from vech import model as mdl
from vech.errors import InvalidConfigError
from vech.mesh import build_macro_mesh
from vech.state import State

I = matfun.IDENTITY


def test_potential_values():
    assert float(mdl.psi(1.0)) == pytest.approx(0.0)
    assert float(mdl.psi(-1.0)) == pytest.approx(0.0)
    assert float(mdl.psi_prime(1.0)) == pytest.approx(0.0, abs=1e-14)
    assert float(mdl.psi(2.0)) == pytest.approx(1.0)
    assert float(mdl.psi_prime(2.0)) == pytest.approx(2.0)
    assert float(mdl.psi(2.0, "quartic")) == pytest.approx(0.25 * 9)


def test_source_terms_reference_values():
    p = mdl.ModelParams()
    assert float(mdl.gamma_phi(-1.0, 1.0, I, p)) == 0.0
    assert float(mdl.gamma_sigma(-1.0, 1.0, p)) == 0.0
    assert float(mdl.gamma_phi(1.0, 1.0, I, p)) == pytest.approx(2.0)
    assert float(mdl.gamma_sigma(1.0, 1.0, p)) == pytest.approx(10.0)
    assert float(mdl.f_B(I, p.kappa)) == 1.0


def test_coefficients_in_pure_phases():
    p = mdl.ModelParams(eta_1=2000.0, eta_m1=1000.0)
    c = mdl.coefficients(np.array([1.0, -1.0, 0.0]), p)
    assert c.m[0] == pytest.approx(2 + p.m0)
    assert c.m[1] == pytest.approx(1e-12)
    assert c.eta[0] == 2000.0 and c.eta[2] == pytest.approx(1500.0)
    assert c.tau[0] == pytest.approx(p.kappa * p.tau_over_kappa_1)


def _energy(phi, sigma, p, n=4):
    mesh = build_macro_mesh(p.box, n)
    st = State.constant(mesh, phi=phi, sigma=sigma)
    return mdl.discrete_energy(mesh, st.phi, st.sigma, st.v, st.B, p)


def test_energy_of_relaxed_pure_phase():
    p = mdl.ModelParams()
    assert _energy(1.0, 0.0, p).total == pytest.approx(1e6, rel=1e-12)
    assert _energy(-1.0, 0.0, p).total == pytest.approx(1e6, rel=1e-12)
    e = _energy(1.0, 1.0, p)
    assert e.F_chem == pytest.approx(0.0, abs=1e-12)


def test_energy_flags_indefinite_B():
    p = mdl.ModelParams()
    mesh = build_macro_mesh(p.box, 2)
    st = State.constant(mesh)
    st.B[0] = [1.0, 0.0, -0.5]
    assert math.isinf(mdl.discrete_energy(mesh, st.phi, st.sigma, st.v, st.B, p).total)


def test_reference_parameters_validate():
    rep = mdl.validate_params(mdl.ModelParams(), h_min=10 / 1024)
    assert rep.ok
    k = rep.constants
    assert k.R1 == 0.5 and k.R2 == pytest.approx(1.0)
    assert k.a43_margin == pytest.approx(4.2)
    assert k.dt_star > 0
    cfl = next(c for c in rep.checks if c.name == "CFL")
    assert not cfl.passed and not cfl.hard
    assert mdl.cfl_threshold(mdl.ModelParams(), 10 / 1024) == pytest.approx(9.54e-11, rel=1e-3)


def test_no_chemotaxis_margin_positive():
    assert mdl.stability_constants(mdl.ModelParams(chi_phi=0.0)).a43_margin == pytest.approx(5.0)


def test_strong_chemotaxis_rejected():
    p = mdl.ModelParams(chi_phi=100.0, chi_sigma=10.0)
    rep = mdl.validate_params(p)
    assert not rep.ok
    assert [c.name for c in rep.hard_failures()] == ["A4_3 chemotaxis margin"]
    assert rep.hard_failures()[0].margin == pytest.approx(5 - 4000)
    with pytest.raises(InvalidConfigError):
        mdl.dt_star(p)


def test_unknown_potential_rejected():
    with pytest.raises(InvalidConfigError):
        mdl.ModelParams(potential="double-well")
