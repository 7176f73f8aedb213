"""Per-step linear and nonlinear systems of the decoupled scheme.

Each routine takes plain nodal arrays (previous-step values and the values
already produced earlier in the current sweep) and returns a system object.
Lumped terms are diagonal and use the vertex weights; every other volume
integral uses the degree-4 quadrature of :mod:`vech.fespace`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import matfun
from . import model as mdl
from .errors import InvalidStateError
from .fespace import spaces
from .mesh import Mesh

TENSOR_COMPONENTS = ("xx", "xy", "yy")


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    kind: str
    symmetric: bool = False


def _check(mesh: Mesh, **arrays):
    n = mesh.num_vertices
    for name, a in arrays.items():
        if a is not None and np.shape(a)[0] != n:
            raise InvalidStateError(f"{name} has {np.shape(a)[0]} entries, mesh has {n} vertices")


def convection_vector(mesh: Mesh, q, v) -> np.ndarray:
    """``c_i = ∫ q v·∇χ_i`` for a P1 field ``q`` and a P2 velocity ``v``."""
    s = spaces(mesh)
    qq = s.p1_at_quad(q)  # (M, Q)
    vq = s.p2_at_quad(v)  # (M, Q, 2)
    flux = np.einsum("mq,mqd->md", s.qw * qq, vq)  # ∫ q v over each element
    loc = np.einsum("md,mkd->mk", flux, s.grads)
    return np.bincount(mesh.triangles.ravel(), weights=loc.ravel(), minlength=mesh.num_vertices)


# -- Cahn-Hilliard ----------------------------------------------------------------


@dataclass
class CHSystem:
    """Nonlinear residual ``R(φ, μ)`` and its exact Jacobian.

    Unknowns are stacked as ``x = [φ, μ]``.
    """

    mesh: Mesh
    params: mdl.ModelParams
    dt: float
    phi_old: np.ndarray
    sigma: np.ndarray
    B: np.ndarray
    weights: np.ndarray
    K_m: sp.csr_matrix
    K: sp.csr_matrix
    conv: np.ndarray
    mu_explicit: np.ndarray
    kappa: np.ndarray
    include_source: bool = True

    @property
    def size(self) -> int:
        return 2 * self.mesh.num_vertices

    def split(self, x):
        n = self.mesh.num_vertices
        return x[:n], x[n:]

    def source(self, phi):
        if not self.include_source:
            return np.zeros_like(phi)
        return mdl.gamma_phi(phi, self.sigma, self.B, self.params, self.kappa)

    def source_dphi(self, phi):
        if not self.include_source:
            return np.zeros_like(phi)
        return mdl.gamma_phi_dphi(phi, self.sigma, self.B, self.params, self.kappa)

    def residual(self, x) -> np.ndarray:
        phi, mu = self.split(x)
        p, w = self.params, self.weights
        r_phi = w * ((phi - self.phi_old) / self.dt - self.source(phi)) + self.K_m @ mu - self.conv
        r_mu = w * (-mu + p.A * mdl.psi1_prime(phi, p.potential) + self.mu_explicit) + p.B * (self.K @ phi)
        return np.concatenate([r_phi, r_mu])

    def jacobian(self, x) -> sp.csr_matrix:
        phi, _ = self.split(x)
        p, w = self.params, self.weights
        d11 = sp.diags(w * (1.0 / self.dt - self.source_dphi(phi)))
        d21 = sp.diags(w * p.A * mdl.psi1_second(phi, p.potential))
        return sp.bmat([[d11, self.K_m], [p.B * self.K + d21, sp.diags(-w)]], format="csr")


def assemble_ch(mesh: Mesh, p: mdl.ModelParams, phi_old, sigma, B, v, dt=None, include_source=True) -> CHSystem:
    """Cahn-Hilliard block with ``σ``, ``B`` and ``v`` frozen at sweep values."""
    _check(mesh, phi_old=phi_old, sigma=sigma, B=B)
    s = spaces(mesh)
    dt = p.dt if dt is None else dt
    phi_old = np.asarray(phi_old, float)
    sigma = np.asarray(sigma, float)
    co = mdl.coefficients(phi_old, p)
    mu_explicit = p.A * mdl.psi2_prime(phi_old, p.potential) - p.chi_phi * sigma
    if p.phase_dependent_kappa:
        k1, km1 = p.kappa_phases
        mu_explicit = mu_explicit + 0.25 * (k1 - km1) * matfun.trace(np.asarray(B) - matfun.logm(B))
    conv = convection_vector(mesh, phi_old, v) if v is not None else np.zeros(mesh.num_vertices)
    return CHSystem(
        mesh=mesh,
        params=p,
        dt=dt,
        phi_old=phi_old,
        sigma=sigma,
        B=np.asarray(B, float),
        weights=s.lumped,
        K_m=s.p1p1.matrix(co.m[mesh.triangles].mean(axis=1)[:, None, None] * s.local_stiffness),
        K=s.stiffness(),
        conv=conv,
        mu_explicit=mu_explicit,
        kappa=co.kappa,
        include_source=include_source,
    )


# -- nutrient ----------------------------------------------------------------------


def assemble_nutrient(mesh: Mesh, p: mdl.ModelParams, sigma_old, phi_new, phi_old, v, dt=None,
                      sigma_inf=None) -> LinearSystem:
    """Linear nutrient system.

    The consumption term is implicit in ``σ`` where the cut-off is inactive
    at ``σ^{n-1}`` and frozen at its clamp value elsewhere.
    """
    _check(mesh, sigma_old=sigma_old, phi_new=phi_new, phi_old=phi_old)
    s = spaces(mesh)
    dt = p.dt if dt is None else dt
    w, wb = s.lumped, s.boundary_lumped
    sigma_inf = p.sigma_inf if sigma_inf is None else sigma_inf
    sigma_inf = np.broadcast_to(np.asarray(sigma_inf, float), (mesh.num_vertices,))
    co = mdl.coefficients(phi_old, p)
    hphi = mdl.h(phi_new)
    if p.nutrient_cutoff:
        lin = (sigma_old > 0.0) & (sigma_old < 1.0)
        const = np.where(sigma_old >= 1.0, 1.0, 0.0)
    else:
        lin = np.ones(mesh.num_vertices, dtype=bool)
        const = np.zeros(mesh.num_vertices)
    K_n = s.p1p1.matrix(co.n[mesh.triangles].mean(axis=1)[:, None, None] * s.local_stiffness)
    diag = w / dt + w * p.C * hphi * lin + p.K * wb
    A = (p.chi_sigma * K_n + sp.diags(diag)).tocsr()
    rhs = w * sigma_old / dt - w * p.C * hphi * const + p.chi_phi * (K_n @ phi_new) + p.K * wb * sigma_inf
    if v is not None:
        rhs = rhs + convection_vector(mesh, sigma_old, v)
    return LinearSystem(A, rhs, "nutrient", symmetric=True)


def assemble_quasistatic_nutrient(mesh: Mesh, p: mdl.ModelParams, phi, clamp_state, sigma_inf=None) -> LinearSystem:
    """Steady nutrient equation with the consumption cut-off frozen by ``clamp_state``.

    ``clamp_state`` holds -1 (σ ≤ 0), 0 (linear branch) or 1 (σ ≥ 1) per vertex.
    """
    s = spaces(mesh)
    w, wb = s.lumped, s.boundary_lumped
    sigma_inf = np.broadcast_to(np.asarray(p.sigma_inf if sigma_inf is None else sigma_inf, float),
                                (mesh.num_vertices,))
    hphi = mdl.h(phi)
    if not p.nutrient_cutoff:
        clamp_state = np.zeros(mesh.num_vertices, dtype=int)
    K = s.stiffness()
    diag = w * p.C * hphi * (clamp_state == 0) + p.K * wb
    A = (p.n0 * p.chi_sigma * K + sp.diags(diag)).tocsr()
    rhs = p.n0 * p.chi_phi * (K @ phi) - w * p.C * hphi * (clamp_state == 1) + p.K * wb * sigma_inf
    return LinearSystem(A, rhs, "nutrient", symmetric=True)


# -- Stokes / Navier-Stokes saddle ---------------------------------------------------


@dataclass
class SaddleSystem:
    """Taylor-Hood system on the free velocity dofs, pressure and gauge multiplier.

    ``matrix = [[A, -D^T, 0], [-D, 0, m], [0, m^T, 0]]`` with ``A`` the
    velocity block (mass, viscosity and skew convection), ``D`` the weak
    divergence and ``m`` the vertex weights so that ``m^T p = ∫ p``.
    """

    mesh: Mesh
    A: sp.csr_matrix
    D: sp.csr_matrix
    m: np.ndarray
    rhs: np.ndarray
    free: np.ndarray
    eta_nodal: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_v(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.D.shape[0]

    @property
    def matrix(self) -> sp.csr_matrix:
        cached = self.extra.get("matrix")
        if cached is None:
            m = sp.csr_matrix(self.m[:, None])
            cached = sp.bmat(
                [[self.A, -self.D.T, None], [-self.D, None, m], [None, m.T, None]], format="csr"
            )
            self.extra["matrix"] = cached
        return cached

    def expand(self, x):
        """Split a solution vector into full velocity, pressure and multiplier."""
        s = spaces(self.mesh)
        v = np.zeros(2 * s.num_p2)
        v[self.free] = x[: self.n_v]
        p = x[self.n_v : self.n_v + self.n_p]
        return v, p, float(x[-1])

    def restrict(self, v, p=None, lam=0.0):
        p = np.zeros(self.n_p) if p is None else p
        return np.concatenate([np.asarray(v)[self.free], p, [lam]])


def _p2_load(s, values_b, test_scalar=True):
    """Scatter ``∫ f_b ψ_i`` (values at quad points, shape (M, Q, 2)) into a 2-block vector."""
    loc = np.einsum("mqb,qi->bmi", s.qw[..., None] * values_b, s.p2_at_q)
    out = np.empty(2 * s.num_p2)
    for b in range(2):
        out[b * s.num_p2 : (b + 1) * s.num_p2] = np.bincount(
            s.p2_dofs.ravel(), weights=loc[b].ravel(), minlength=s.num_p2
        )
    return out


def _p2_grad_load(s, tensor_q):
    """Scatter ``∫ T : ∇w`` for ``w = ψ_i e_b``; ``tensor_q`` has shape (M, Q, 2, 2)."""
    loc = np.einsum("mq,mqbc,mqic->bmi", s.qw, tensor_q, s.p2_grads)
    out = np.empty(2 * s.num_p2)
    for b in range(2):
        out[b * s.num_p2 : (b + 1) * s.num_p2] = np.bincount(
            s.p2_dofs.ravel(), weights=loc[b].ravel(), minlength=s.num_p2
        )
    return out


def viscous_matrix(mesh: Mesh, eta_nodal) -> sp.csr_matrix:
    """``∫ 2 I_h[η] D(u) : D(w)`` on the full 2-block P2 space."""
    s = spaces(mesh)
    eq = s.qw * s.p1_at_quad(eta_nodal)
    G = s.p2_grads
    lap = np.einsum("mq,mqid,mqjd->mij", eq, G, G)
    blocks = [[None, None], [None, None]]
    for b in range(2):
        for a in range(2):
            cross = np.einsum("mq,mqi,mqj->mij", eq, G[..., a], G[..., b])
            blocks[b][a] = s.p2p2.matrix(cross + lap if a == b else cross)
    return sp.bmat(blocks, format="csr")


def skew_convection_matrix(mesh: Mesh, v_old) -> sp.csr_matrix:
    """``½((v_old·∇)u)·w - ½ u·((v_old·∇)w)`` on the 2-block P2 space (antisymmetric)."""
    s = spaces(mesh)
    vq = s.p2_at_quad(v_old)
    adv = np.einsum("mqc,mqjc->mqj", vq, s.p2_grads)
    phi = s.p2_at_q
    half = 0.5 * np.einsum("mq,qi,mqj->mij", s.qw, phi, adv)
    block = s.p2p2.matrix(half - np.transpose(half, (0, 2, 1)))
    return sp.block_diag([block, block], format="csr")


def divergence_matrix(mesh: Mesh) -> sp.csr_matrix:
    """``D[k, (i, b)] = ∫ χ_k ∂_b ψ_i`` on the full 2-block P2 space."""
    s = spaces(mesh)
    cached = getattr(s, "_div", None)
    if cached is None:
        blocks = [
            s.p1p2.matrix(np.einsum("mq,qk,mqi->mki", s.qw, s.p1_at_q, s.p2_grads[..., b])) for b in range(2)
        ]
        cached = s._div = sp.hstack(blocks, format="csr")
    return cached


def velocity_mass(mesh: Mesh) -> sp.csr_matrix:
    s = spaces(mesh)
    M = s.p2_mass()
    return sp.block_diag([M, M], format="csr")


def _build_saddle(mesh, A_full, rhs_full, eta_nodal) -> SaddleSystem:
    s = spaces(mesh)
    free = s.velocity_free
    A = A_full[free][:, free].tocsr()
    D = divergence_matrix(mesh)[:, free].tocsr()
    rhs = np.concatenate([rhs_full[free], np.zeros(mesh.num_vertices), [0.0]])
    return SaddleSystem(mesh, A, D, s.lumped.copy(), rhs, free, np.asarray(eta_nodal, float))


def assemble_saddle(mesh: Mesh, p: mdl.ModelParams, v_old, phi_old, phi_new, mu_new, sigma_old, sigma_new, B,
                    dt=None) -> SaddleSystem:
    """Momentum and incompressibility with ``φ^n, μ^n, σ^n`` from the current
    sweep and ``B`` the most recent tensor field."""
    _check(mesh, phi_old=phi_old, phi_new=phi_new, mu_new=mu_new, sigma_old=sigma_old, sigma_new=sigma_new, B=B)
    s = spaces(mesh)
    dt = p.dt if dt is None else dt
    co = mdl.coefficients(phi_old, p)
    Mv = velocity_mass(mesh)
    A_full = Mv / dt + viscous_matrix(mesh, co.eta) + skew_convection_matrix(mesh, v_old)
    rhs = Mv @ v_old / dt

    kappa_q = s.p1_at_quad(mdl.kappa_of(phi_new, p))
    Bq = matfun.to_matrix(s.p1_at_quad(np.asarray(B) - matfun.IDENTITY))  # (M, Q, 2, 2)
    rhs -= _p2_grad_load(s, kappa_q[..., None, None] * Bq)

    grad_mu = s.p1_gradient(mu_new)
    grad_pot = s.p1_gradient(p.chi_sigma * np.asarray(sigma_new) - p.chi_phi * np.asarray(phi_new))
    force = (s.p1_at_quad(phi_old)[..., None] * grad_mu[:, None, :]
             + s.p1_at_quad(sigma_old)[..., None] * grad_pot[:, None, :])
    if p.phase_dependent_kappa:
        k1, km1 = p.kappa_phases
        tr = matfun.trace(np.asarray(B) - matfun.logm(B))
        force = force - 0.25 * (k1 - km1) * s.p1_at_quad(phi_old)[..., None] * s.p1_gradient(tr)[:, None, :]
    rhs -= _p2_load(s, force)
    return _build_saddle(mesh, A_full, rhs, co.eta)


def assemble_stokes(mesh: Mesh, eta: float, force) -> SaddleSystem:
    """Steady Stokes ``-div(2ηD(v)) + ∇p = f`` with homogeneous Dirichlet data.

    ``force(x, y)`` returns a ``(..., 2)`` array evaluated at quadrature points.
    """
    s = spaces(mesh)
    eta_nodal = np.full(mesh.num_vertices, float(eta))
    fq = np.asarray(force(s.qx[..., 0], s.qx[..., 1]), float)
    return _build_saddle(mesh, viscous_matrix(mesh, eta_nodal), _p2_load(s, fq), eta_nodal)


# -- Oldroyd-B -------------------------------------------------------------------------

# test tensors E (B:E = B_kl) and trial tensors U (B = Σ B_kl U^{kl}) as 2x2 matrices
_E = np.array([[[1, 0], [0, 0]], [[0, 0.5], [0.5, 0]], [[0, 0], [0, 1]]], dtype=float)
_U = np.array([[[1, 0], [0, 0]], [[0, 1], [1, 0]], [[0, 0], [0, 1]]], dtype=float)


def relaxation_rate(phi_old, phi_new, p: mdl.ModelParams):
    """Nodal ``κ(φ^n) / τ(φ^{n-1})``."""
    return mdl.kappa_of(phi_new, p) / mdl.coefficients(phi_old, p).tau


def assemble_oldroyd(mesh: Mesh, p: mdl.ModelParams, B_old, phi_old, phi_new, sigma_old, v_new, v_old, dt=None,
                     lump_products=False) -> LinearSystem:
    """Linear system for the three tensor components stacked as ``[xx | xy | yy]``."""
    _check(mesh, B_old=B_old, phi_old=phi_old, phi_new=phi_new, sigma_old=sigma_old)
    s = spaces(mesh)
    n = mesh.num_vertices
    dt = p.dt if dt is None else dt
    w = s.lumped
    rate = relaxation_rate(phi_old, phi_new, p)
    growth = mdl.gamma_B(phi_old, sigma_old, p)
    diag = w * (1.0 / dt + rate + growth)

    # per-component operator: lumped diagonal + stress diffusion - transport
    per_comp = sp.diags(diag) + p.alpha * s.stiffness()
    if v_old is not None:
        vq = s.p2_at_quad(v_old)
        # T_ij = -∫ χ_j (v_old·∇χ_i)
        adv_i = np.einsum("mqd,mid->mqi", vq, s.grads)
        T = -np.einsum("mq,mqi,qj->mij", s.qw, adv_i, s.p1_at_q)
        per_comp = per_comp + s.p1p1.matrix(T)
    blocks = [[per_comp if a == b else None for b in range(3)] for a in range(3)]

    if v_new is not None:
        L = s.p2_grad_at_quad(v_new)  # (M, Q, 2, 2), L[a, b] = ∂_b v_a
        # coupling[k, l] = ∇v : (E_k U_l)
        EU = np.einsum("kab,lbc->klac", _E, _U)
        coup = np.einsum("mqac,klac->mqkl", L, EU)
        for k in range(3):
            for l in range(3):
                if lump_products:
                    wq = np.einsum("mq,qi,mq->mi", s.qw, s.p1_at_q, coup[:, :, k, l])
                    vals = np.bincount(mesh.triangles.ravel(), weights=wq.ravel(), minlength=n)
                    mat = sp.diags(-2.0 * vals)
                else:
                    blk = np.einsum("mq,qi,qj->mij", s.qw * coup[:, :, k, l], s.p1_at_q, s.p1_at_q)
                    mat = s.p1p1.matrix(-2.0 * blk)
                blocks[k][l] = mat if blocks[k][l] is None else blocks[k][l] + mat

    A = sp.bmat(blocks, format="csr")
    B_old = np.asarray(B_old, float)
    eye = matfun.IDENTITY
    rhs = np.concatenate([w * (B_old[:, c] / dt + rate * eye[c]) for c in range(3)])
    return LinearSystem(A, rhs, "tensor", symmetric=False)


def unstack_tensor(x, n) -> np.ndarray:
    return np.asarray(x).reshape(3, n).T.copy()


def stack_tensor(B) -> np.ndarray:
    return np.asarray(B).T.ravel().copy()


def divergence_residual(mesh: Mesh, v) -> float:
    """``max_k |∫ div v χ_k|`` over the P1 basis."""
    return float(np.max(np.abs(divergence_matrix(mesh) @ v)))
