"""Initial tumour, nutrient, velocity and tensor data, and the start-up mesh."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import model as mdl
from .errors import InvalidConfigError, NonConvergence
from .fespace import discrete_laplacian, spaces
from .matfun import IDENTITY, min_eigenvalue
from .mesh import Mesh, RefinementSpec, bisect_marked, build_macro_mesh
from .solver import SolverConfig, krylov_solve, solve_saddle
from .state import State

log = logging.getLogger(__name__)

SIGMA0_MODES = ("quasi_static", "projection")


@dataclass(frozen=True)
class InitialSpec:
    """Perturbed-circle tumour ``-tanh(r / (√2 ε))`` with
    ``r = |x| - scale * (offset + amplitude * cos(mode * θ))``."""

    radius_scale: float = 5.0 / 12.0
    radius_offset: float = 2.0
    amplitude: float = 0.2
    mode: int = 2
    sigma0: str = "quasi_static"
    sigma0_value: float = 1.0
    v0: tuple = (0.0, 0.0)
    B0: tuple = (1.0, 0.0, 1.0)

    def __post_init__(self):
        if self.sigma0 not in SIGMA0_MODES:
            raise InvalidConfigError(f"sigma0 must be one of {SIGMA0_MODES}")
        if not min_eigenvalue(np.array(self.B0, float)) > 0:
            raise InvalidConfigError("B0 must be symmetric positive definite")

    def phi0(self, epsilon: float):
        def f(x, y):
            theta = np.arctan2(y, x)
            r = np.hypot(x, y) - self.radius_scale * (self.radius_offset + self.amplitude * np.cos(self.mode * theta))
            return -np.tanh(r / (math.sqrt(2.0) * epsilon))

        return f


def make_phi0(mesh: Mesh, p: mdl.ModelParams, spec: InitialSpec = InitialSpec()) -> np.ndarray:
    x, y = mesh.vertices.T
    return spec.phi0(p.epsilon)(x, y)


def _mark_interface(mesh: Mesh, f, band_delta: float) -> np.ndarray:
    """Triangles where ``f`` sampled at the six P2 nodes enters the band or changes sign."""
    edges, _, _ = mesh.edges()
    nodes = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    vals = f(nodes[:, 0], nodes[:, 1])[spaces(mesh).p2_dofs]
    band = np.any(np.abs(vals) <= 1.0 - band_delta, axis=1)
    change = (vals.min(axis=1) < 0) & (vals.max(axis=1) > 0)
    return np.flatnonzero(band | change)


def bootstrap_mesh(p: mdl.ModelParams, refinement: RefinementSpec, spec: InitialSpec = InitialSpec(),
                   max_passes: int = 64) -> Mesh:
    """Refine the macro mesh one level at a time against the analytic initial
    tumour until every triangle touching the interface is at the fine level."""
    mesh = build_macro_mesh(p.box, refinement.coarse_n)
    f = spec.phi0(p.epsilon)
    level = refinement.fine_level
    for _ in range(max_passes):
        marked = _mark_interface(mesh, f, refinement.band_delta)
        marked = marked[mesh.levels[marked] < level]
        if len(marked) == 0:
            return mesh
        mesh = bisect_marked(mesh, marked, level)
    raise NonConvergence("interface bootstrap did not settle")


def _p1_load(mesh: Mesh, f) -> np.ndarray:
    """``∫ f χ_i`` by quadrature for a callable ``f(x, y)``."""
    s = spaces(mesh)
    fq = np.asarray(f(s.qx[..., 0], s.qx[..., 1]), float) * np.ones(s.qw.shape)
    loc = np.einsum("mq,qk->mk", s.qw * fq, s.p1_at_q)
    return np.bincount(mesh.triangles.ravel(), weights=loc.ravel(), minlength=mesh.num_vertices)


def make_sigma0_quasistatic(mesh: Mesh, phi0, p: mdl.ModelParams, cfg: SolverConfig = SolverConfig(),
                            max_clamp_iterations: int = 50) -> np.ndarray:
    """Steady nutrient for the given tumour; the consumption cut-off is
    lagged and iterated until its active set stops changing."""
    n = mesh.num_vertices
    sigma = np.full(n, float(p.sigma_inf))
    state = None
    history = []
    for _ in range(max_clamp_iterations):
        new_state = np.where(sigma < 0.0, -1, np.where(sigma > 1.0, 1, 0))
        if state is not None and np.array_equal(new_state, state):
            return sigma
        state = new_state
        history.append(int(np.sum(state != 0)))
        system = asm.assemble_quasistatic_nutrient(mesh, p, phi0, state)
        sigma, _ = krylov_solve(system.matrix, system.rhs, sigma, cfg, cfg.nutrient_method, cfg.nutrient_precond)
    raise NonConvergence(f"clamp set did not settle; clamped counts {history[-6:]}", history=history)


def quasistatic_residual(mesh: Mesh, phi0, sigma0, p: mdl.ModelParams) -> float:
    """Relative residual of the nonlinear steady nutrient equation."""
    s = spaces(mesh)
    K = s.stiffness()
    r = (p.n0 * (K @ (p.chi_sigma * sigma0 - p.chi_phi * phi0)) + s.lumped * mdl.gamma_sigma(phi0, sigma0, p)
         + p.K * s.boundary_lumped * (sigma0 - p.sigma_inf))
    scale = np.linalg.norm(p.K * s.boundary_lumped * p.sigma_inf) + np.linalg.norm(p.n0 * p.chi_phi * (K @ phi0))
    return float(np.linalg.norm(r) / scale)


def project_sigma(mesh: Mesh, sigma0, dt: float, cfg: SolverConfig = SolverConfig()):
    """Lumped-mass plus ``dt``-stiffness projection with lumped boundary term."""
    s = spaces(mesh)
    A = (sp.diags(s.lumped + dt * s.boundary_lumped) + dt * s.stiffness()).tocsr()
    b = _p1_load(mesh, sigma0)
    x, _ = krylov_solve(A, b, None, cfg, "cg", "jacobi")
    return x, A, b


def project_tensor(mesh: Mesh, B0, dt: float, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Componentwise projection of ``B0(x, y) -> (..., 3)``."""
    s = spaces(mesh)
    A = (sp.diags(s.lumped) + dt * s.stiffness()).tocsr()
    out = np.empty((mesh.num_vertices, 3))
    for c in range(3):
        b = _p1_load(mesh, lambda x, y, c=c: np.asarray(B0(x, y), float)[..., c])
        out[:, c], _ = krylov_solve(A, b, None, cfg, "cg", "jacobi")
    return out


def project_velocity(mesh: Mesh, v0, dt: float, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Projection onto discretely divergence-free P2 fields."""
    s = spaces(mesh)
    eq = s.qw
    lap = np.einsum("mq,mqid,mqjd->mij", eq, s.p2_grads, s.p2_grads)
    K = s.p2p2.matrix(lap)
    A_full = asm.velocity_mass(mesh) + dt * sp.block_diag([K, K], format="csr")
    fq = np.asarray(v0(s.qx[..., 0], s.qx[..., 1]), float) * np.ones(s.qw.shape + (2,))
    rhs = asm._p2_load(s, fq)
    system = asm._build_saddle(mesh, A_full.tocsr(), rhs, np.full(mesh.num_vertices, dt))
    if not np.any(system.rhs):
        return np.zeros(2 * s.num_p2)
    v, _, _, _ = solve_saddle(system, cfg)
    return v


def make_projected_initials(mesh: Mesh, sigma0, v0, B0, dt: float, cfg: SolverConfig = SolverConfig()):
    """``(σ_h⁰, v_h⁰, B_h⁰)`` from the elliptic projections of the data."""
    sigma, _, _ = project_sigma(mesh, sigma0, dt, cfg)
    return sigma, project_velocity(mesh, v0, dt, cfg), project_tensor(mesh, B0, dt, cfg)


def initial_mu(mesh: Mesh, phi, sigma, B, p: mdl.ModelParams) -> np.ndarray:
    """``μ⁰ = Aψ'(φ⁰) - χ_φ σ⁰ - B Δ_h φ⁰`` (plus the phase-dependent elastic term)."""
    mu = p.A * mdl.psi_prime(phi, p.potential) - p.chi_phi * sigma - p.B * discrete_laplacian(mesh, phi)
    if p.phase_dependent_kappa:
        from .matfun import logm, trace

        k1, km1 = p.kappa_phases
        mu = mu + 0.25 * (k1 - km1) * trace(B - logm(B))
    return mu


def initial_state(p: mdl.ModelParams, refinement: RefinementSpec, spec: InitialSpec = InitialSpec(),
                  cfg: SolverConfig = SolverConfig(), mesh: Mesh | None = None) -> State:
    mesh = bootstrap_mesh(p, refinement, spec) if mesh is None else mesh
    n = mesh.num_vertices
    phi = make_phi0(mesh, p, spec)
    if spec.sigma0 == "quasi_static":
        sigma = make_sigma0_quasistatic(mesh, phi, p, cfg)
    else:
        sigma, _, _ = project_sigma(mesh, lambda x, y: np.full(np.shape(x), spec.sigma0_value), p.dt, cfg)
    v0 = np.asarray(spec.v0, float)
    B0 = np.asarray(spec.B0, float)
    if np.any(v0):
        v = project_velocity(mesh, lambda x, y: np.broadcast_to(v0, np.shape(x) + (2,)), p.dt, cfg)
    else:
        v = np.zeros(2 * spaces(mesh).num_p2)
    if np.allclose(B0, IDENTITY):
        B = np.tile(IDENTITY, (n, 1))
    else:
        B = project_tensor(mesh, lambda x, y: np.broadcast_to(B0, np.shape(x) + (3,)), p.dt, cfg)
    mu = initial_mu(mesh, phi, sigma, B, p)
    return State(mesh, phi, mu, sigma, np.zeros(n), v, B, t=0.0, step=0)
