"""Property suites shared by ``vech selftest`` and the test-suite.

Each function computes the raw metrics; thresholds live with the callers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import assembly as asm
from . import matfun
from . import model as mdl
from .fespace import discrete_laplacian, lumped_mass, nodal_interpolate, spaces
from .mesh import build_macro_mesh
from .solver import SolverConfig, StepMode, advance_step, finite_difference_jacobian, solve_saddle
from .state import State

UNIT_BOX = ((0.0, 1.0), (0.0, 1.0))


def random_symmetric(rng, n, scale=3.0):
    """Packed symmetric matrices with eigenvalues of mixed sign and size."""
    lam = rng.uniform(-scale, scale, (n, 2))
    # a fraction with tiny or repeated eigenvalues to probe the edge cases
    k = n // 10
    lam[:k, 1] = lam[:k, 0]
    lam[k : 2 * k] *= 1e-6
    theta = rng.uniform(0, np.pi, n)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c * c * lam[:, 0] + s * s * lam[:, 1], c * s * (lam[:, 0] - lam[:, 1]),
                     s * s * lam[:, 0] + c * c * lam[:, 1]], axis=-1)


def lemma_suite(n=100_000, deltas=(0.5, 0.25, 0.01), seed=1, tol=1e-10):
    """``{delta: {relation: min slack}}`` over ``n`` random pairs plus the runtime."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    out = {}
    for delta in deltas:
        phi, psi = random_symmetric(rng, n), random_symmetric(rng, n)
        rep = matfun.regularization_check(phi, psi, delta, tol=tol)
        out[delta] = {k: (None if v is None else float(np.min(v))) for k, v in rep.slack.items()}
    return out, time.perf_counter() - t0


def convex_splitting(n=100_000, kind="modified", seed=2):
    """Largest violation of ``(ψ1'(x) + ψ2'(y))(x - y) ≥ ψ(x) - ψ(y)``."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    x, y = rng.uniform(-3, 3, (2, n))
    lhs = (mdl.psi1_prime(x, kind) + mdl.psi2_prime(y, kind)) * (x - y)
    rhs = mdl.psi(x, kind) - mdl.psi(y, kind)
    return float(np.max(rhs - lhs)), time.perf_counter() - t0


def lumped_norm_gap(levels=(4, 8, 16), n_fields=1000, seed=3):
    """Smallest ``‖q‖_h² - ‖q‖²_{L²}`` (relative to ``‖q‖_h²``) over random P1 fields."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for n in levels:
        mesh = build_macro_mesh(UNIT_BOX, n)
        M = spaces(mesh).p1_mass()
        w = spaces(mesh).lumped
        q = rng.standard_normal((mesh.num_vertices, n_fields))
        lumped = np.sum(w[:, None] * q * q, axis=0)
        consistent = np.sum(q * (M @ q), axis=0)
        worst = min(worst, float(np.min((lumped - consistent) / lumped)))
    return worst


def lumping_error_orders(levels=(4, 8, 16, 32)):
    """Observed orders of ``|⟨q,ζ⟩_h - (q,ζ)| / (‖∇q‖‖∇ζ‖)`` for smooth interpolants."""
    q_f = lambda x, y: np.cos(np.pi * x) * np.cos(2 * np.pi * y) + x * y  # noqa: E731
    z_f = lambda x, y: np.sin(2 * np.pi * x) * np.exp(y)  # noqa: E731
    errors = []
    for n in levels:
        mesh = build_macro_mesh(UNIT_BOX, n)
        s = spaces(mesh)
        q = nodal_interpolate(q_f, mesh)
        z = nodal_interpolate(z_f, mesh)
        K = s.stiffness()
        gap = abs(float(np.sum(s.lumped * q * z) - q @ (s.p1_mass() @ z)))
        errors.append(gap / np.sqrt(float(q @ (K @ q)) * float(z @ (K @ z))))
    errors = np.array(errors)
    return errors, np.log2(errors[:-1] / errors[1:])


def laplacian_identity(levels=(4, 8, 16), pairs=20, seed=4):
    """``(max |lumped mean of Δ_h q|, max relative identity error)``."""
    rng = np.random.default_rng(seed)
    worst_mean = worst_id = 0.0
    for n in levels:
        mesh = build_macro_mesh(UNIT_BOX, n)
        s = spaces(mesh)
        K = s.stiffness()
        lm = lumped_mass(mesh)
        for _ in range(pairs):
            q, z = rng.standard_normal((2, mesh.num_vertices))
            lap = discrete_laplacian(mesh, q)
            scale = float(np.sum(s.lumped * np.abs(lap)))
            worst_mean = max(worst_mean, abs(float(np.sum(s.lumped * lap))) / scale)
            lhs = lm.inner(lap, z)
            rhs = -float(q @ (K @ z))
            worst_id = max(worst_id, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return worst_mean, worst_id


@dataclass
class DissipationResult:
    energies: np.ndarray
    max_relative_increase: float
    runtime: float


def ch_dissipation(n=32, steps=200, dt=1e-3, seed=5) -> DissipationResult:
    """Decoupled Cahn-Hilliard run: no flow, ``B = I``, no sources, no chemotaxis."""
    rng = np.random.default_rng(seed)
    p = mdl.ModelParams(P=0.0, A_apop=0.0, C=0.0, chi_phi=0.0, dt=dt, potential="modified")
    mesh = build_macro_mesh(p.box, n)
    x, y = mesh.vertices.T
    phi = np.zeros(mesh.num_vertices)
    for _ in range(6):
        kx, ky = rng.integers(1, 4, 2)
        a, ph = rng.uniform(-0.4, 0.4), rng.uniform(0, 2 * np.pi)
        phi += a * np.cos(np.pi * kx * x / 5 + ph) * np.cos(np.pi * ky * y / 5)
    state = State.constant(mesh, phi=0.0, sigma=p.sigma_inf)
    state.phi = phi
    state.mu = p.A * mdl.psi_prime(phi) - p.B * discrete_laplacian(mesh, phi)
    mode = StepMode(freeze_velocity=True, freeze_B=True, include_phi_source=False)
    cfg = SolverConfig()
    t0 = time.perf_counter()
    energies = [mdl.discrete_energy(mesh, state.phi, state.sigma, state.v, state.B, p).total]
    for _ in range(steps):
        state, rep = advance_step(state, p, cfg, mode, energy_before=energies[-1])
        energies.append(rep.energy_after)
    energies = np.array(energies)
    inc = np.diff(energies) / np.abs(energies[:-1])
    return DissipationResult(energies, float(inc.max()), time.perf_counter() - t0)


def oldroyd_oracle(steps=100, growth=False, n=4):
    """Max nodal deviation from the scalar recurrence for a spatially constant run."""
    p = mdl.ModelParams(G=0.7 if growth else 0.0, growth_source=growth, dt=1e-2, kappa=3.0,
                        tau_over_kappa_1=0.5, tau_over_kappa_m1=0.5)
    mesh = build_macro_mesh(p.box, n)
    nv = mesh.num_vertices
    phi = np.ones(nv)
    sigma = np.full(nv, 0.4)
    B = np.tile([2.0, 0.3, 0.5], (nv, 1))
    ref = np.array([2.0, 0.3, 0.5])
    rate = p.kappa / (p.kappa * p.tau_over_kappa_1)
    gamma = float(mdl.gamma_B(1.0, 0.4, p))
    err = 0.0
    for _ in range(steps):
        sys = asm.assemble_oldroyd(mesh, p, B, phi, phi, sigma, None, None)
        x = _direct(sys.matrix, sys.rhs)
        B = asm.unstack_tensor(x, nv)
        ref = (ref + p.dt * rate * matfun.IDENTITY) / (1.0 + p.dt * (rate + gamma))
        err = max(err, float(np.max(np.abs(B - ref))))
    return err


def _direct(A, b):
    import scipy.sparse.linalg as spla

    return spla.spsolve(A.tocsc(), b)


def jacobian_check(seed=6):
    """Relative Frobenius error of the Newton Jacobian against central differences."""
    rng = np.random.default_rng(seed)
    mesh = build_macro_mesh(((0.0, 1.0), (0.0, 1.0)), 1)
    nv = mesh.num_vertices
    p = mdl.ModelParams(dt=1e-2, epsilon=0.1)
    phi_old = rng.uniform(-0.8, 0.8, nv)
    sigma = rng.uniform(0.1, 0.9, nv)
    lam = rng.uniform(0.5, 2.0, (nv, 2))
    B = np.stack([lam[:, 0], 0.1 * (lam[:, 0] - lam[:, 1]), lam[:, 1]], axis=1)
    free = spaces(mesh).velocity_free
    v = np.zeros(2 * spaces(mesh).num_p2)
    v[free] = rng.uniform(-1, 1, len(free))
    system = asm.assemble_ch(mesh, p, phi_old, sigma, B, v)
    x = np.concatenate([rng.uniform(-0.8, 0.8, nv), rng.standard_normal(nv)])
    J = system.jacobian(x).toarray()
    J_fd = finite_difference_jacobian(system, x, h=1e-6)
    return float(np.linalg.norm(J - J_fd) / np.linalg.norm(J))


# -- manufactured Stokes -------------------------------------------------------------


def _stokes_exact(x, y):
    X, X1 = x**2 * (x - 1) ** 2, 4 * x**3 - 6 * x**2 + 2 * x
    X2, X3 = 12 * x**2 - 12 * x + 2, 24 * x - 12
    Y, Y1 = y**2 * (y - 1) ** 2, 4 * y**3 - 6 * y**2 + 2 * y
    Y2, Y3 = 12 * y**2 - 12 * y + 2, 24 * y - 12
    v = np.stack([X * Y1, -X1 * Y], axis=-1)
    lap = np.stack([X2 * Y1 + X * Y3, -(X3 * Y + X1 * Y2)], axis=-1)
    p = x**3 + y**3 - 0.5
    f = -lap + np.stack([3 * x**2, 3 * y**2], axis=-1)
    return v, p, f


@dataclass
class StokesStudy:
    levels: tuple
    velocity_errors: np.ndarray
    pressure_errors: np.ndarray
    velocity_orders: np.ndarray
    pressure_orders: np.ndarray
    max_div_residual: float
    max_pressure_mean: float
    iterations: list


def manufactured_stokes(levels=(4, 8, 16, 32), cfg: SolverConfig = SolverConfig()) -> StokesStudy:
    ev, ep, div, means, its = [], [], 0.0, 0.0, []
    for n in levels:
        mesh = build_macro_mesh(UNIT_BOX, n)
        s = spaces(mesh)
        system = asm.assemble_stokes(mesh, 1.0, lambda x, y: _stokes_exact(x, y)[2])
        v, pr, _, st = solve_saddle(system, cfg)
        its.append(st.iterations)
        v_ex, p_ex, _ = _stokes_exact(s.qx[..., 0], s.qx[..., 1])
        ev.append(np.sqrt(s.integrate(np.sum((s.p2_at_quad(v) - v_ex) ** 2, axis=-1))))
        ep.append(np.sqrt(s.integrate((s.p1_at_quad(pr) - p_ex) ** 2)))
        div = max(div, asm.divergence_residual(mesh, v))
        means = max(means, abs(float(np.sum(s.lumped * pr))))
    ev, ep = np.array(ev), np.array(ep)
    return StokesStudy(tuple(levels), ev, ep, np.log2(ev[:-1] / ev[1:]), np.log2(ep[:-1] / ep[1:]), div, means, its)
