import numpy as np
import pytest
import scipy.sparse as sp

from vech import assembly as asm
from vech import matfun
from vech import model as mdl
from vech.errors import InvalidStateError, SolverFailure
from vech.fespace import spaces
from vech.mesh import build_macro_mesh
from vech.solver import (SolverConfig, StepMode, advance_step, krylov_solve, newton_ch, solve_saddle)
from vech.state import State

UNIT = ((0.0, 1.0), (0.0, 1.0))


@pytest.fixture(scope="module")
def coarse():
    p = mdl.ModelParams()
    return p, build_macro_mesh(p.box, 4)


def test_size_mismatch_rejected(coarse):
    p, mesh = coarse
    n = mesh.num_vertices
    with pytest.raises(InvalidStateError):
        asm.assemble_ch(mesh, p, np.ones(n - 1), np.zeros(n), np.tile(matfun.IDENTITY, (n, 1)), None)


def test_pure_phase_solves_ch_block(coarse):
    p, mesh = coarse
    n = mesh.num_vertices
    system = asm.assemble_ch(mesh, p, np.ones(n), np.zeros(n), np.tile(matfun.IDENTITY, (n, 1)), None,
                             include_source=False)
    x0 = np.concatenate([np.ones(n), np.zeros(n)])
    assert np.linalg.norm(system.residual(x0)) < 1e-12
    _, hist = newton_ch(system, x0)
    assert hist.iterations <= 1


def test_newton_converges_from_perturbation(rng):
    p = mdl.ModelParams(dt=1e-3)
    mesh = build_macro_mesh(p.box, 32)
    n = mesh.num_vertices
    phi_old = 1.0 + 1e-2 * rng.standard_normal(n)
    system = asm.assemble_ch(mesh, p, phi_old, np.zeros(n), np.tile(matfun.IDENTITY, (n, 1)), None)
    cfg = SolverConfig(newton_rtol=1e-14, newton_atol=1e-10)
    x, hist = newton_ch(system, np.concatenate([phi_old, np.zeros(n)]), cfg)
    assert hist.iterations <= 6
    assert hist.residuals[-1] < 1e-10


def test_oldroyd_relaxation_step():
    p = mdl.ModelParams(kappa=1.0, tau_over_kappa_1=1.0, tau_over_kappa_m1=1.0, dt=0.5)
    mesh = build_macro_mesh(p.box, 2)
    n = mesh.num_vertices
    phi = np.ones(n)
    sys = asm.assemble_oldroyd(mesh, p, np.tile(2 * matfun.IDENTITY, (n, 1)), phi, phi, np.zeros(n), None, None)
    B = asm.unstack_tensor(sp.linalg.spsolve(sys.matrix.tocsc(), sys.rhs), n)
    assert np.allclose(B, np.tile(5 / 3 * matfun.IDENTITY, (n, 1)), atol=1e-13)
    sys = asm.assemble_oldroyd(mesh, p, np.tile(matfun.IDENTITY, (n, 1)), phi, phi, np.zeros(n), None, None)
    B = asm.unstack_tensor(sp.linalg.spsolve(sys.matrix.tocsc(), sys.rhs), n)
    assert np.allclose(B, matfun.IDENTITY, atol=1e-13)


def test_skew_convection_is_skew(rng):
    mesh = build_macro_mesh(UNIT, 4)
    s = spaces(mesh)
    v = np.zeros(2 * s.num_p2)
    v[s.velocity_free] = rng.standard_normal(len(s.velocity_free))
    C = asm.skew_convection_matrix(mesh, v)
    u = rng.standard_normal(C.shape[0])
    assert abs(u @ C @ u) < 1e-12 * np.linalg.norm(u) ** 2 * np.abs(C).max()


def test_homogeneous_stokes_gives_zero():
    mesh = build_macro_mesh(UNIT, 4)
    v, p, _, _ = solve_saddle(asm.assemble_stokes(mesh, 1.0, lambda x, y: np.zeros(x.shape + (2,))))
    assert np.all(v == 0) and np.all(p == 0)


def test_stokes_pressure_mean_zero():
    mesh = build_macro_mesh(UNIT, 8)
    f = lambda x, y: np.stack([np.sin(3 * y), x * y], axis=-1)  # noqa: E731
    v, p, _, st = solve_saddle(asm.assemble_stokes(mesh, 1.0, f))
    assert abs(np.sum(spaces(mesh).lumped * p)) < 1e-12
    assert asm.divergence_residual(mesh, v) < 1e-8


def test_krylov_identity():
    x, st = krylov_solve(sp.identity(10, format="csr"), np.arange(10.0), method="cg", precond="none")
    assert np.allclose(x, np.arange(10.0)) and st.iterations <= 1


@pytest.mark.parametrize("method", ["cg", "minres", "gmres", "bicgstab"])
def test_krylov_matches_direct(method, unit_mesh_8, rng):
    s = spaces(unit_mesh_8)
    A = (s.stiffness() + sp.diags(s.lumped)).tocsr()
    b = rng.standard_normal(A.shape[0])
    x, _ = krylov_solve(A, b, cfg=SolverConfig(rtol=1e-12, atol=1e-14), method=method, precond="jacobi")
    assert np.allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-8)


def test_krylov_failure_is_reported():
    A = sp.diags(np.logspace(0, 8, 400)).tocsr()
    with pytest.raises(SolverFailure):
        krylov_solve(A, np.ones(400), cfg=SolverConfig(maxiter=2), method="cg", precond="none")


def test_stationary_state_is_fixed_point():
    p = mdl.ModelParams(P=0.0, C=0.0, K=0.0, chi_phi=0.0)
    mesh = build_macro_mesh(p.box, 4)
    st = State.constant(mesh, phi=1.0, sigma=0.5)
    new, rep = advance_step(st, p)
    for name in ("phi", "sigma", "v", "B"):
        assert np.allclose(getattr(new, name), getattr(st, name), atol=1e-12), name
    assert rep.min_eig_B == pytest.approx(1.0)


def test_nutrient_conserved_without_flux():
    p = mdl.ModelParams(P=0.0, C=0.0, K=0.0, chi_phi=0.0)
    mesh = build_macro_mesh(p.box, 4)
    st = State.constant(mesh, phi=-1.0, sigma=0.3)
    new, _ = advance_step(st, p, mode=StepMode(freeze_velocity=True))
    assert np.allclose(new.sigma, 0.3, atol=1e-12)
