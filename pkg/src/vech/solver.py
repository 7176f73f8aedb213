"""Krylov solvers, the Newton loop for the Cahn-Hilliard block and the
per-step outer sweep."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from . import matfun
from . import model as mdl
from .errors import InvalidConfigError, NonConvergence, SolverFailure
from .fespace import spaces
from .state import State

log = logging.getLogger(__name__)

KRYLOV_METHODS = ("cg", "minres", "gmres", "bicgstab")
PRECONDITIONERS = ("none", "jacobi", "ilu")


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-9
    atol: float = 1e-12
    maxiter: int = 2000
    gmres_restart: int = 200
    refinements: int = 5
    ch_method: str = "bicgstab"
    ch_precond: str = "ilu"
    nutrient_method: str = "cg"
    nutrient_precond: str = "jacobi"
    saddle_method: str = "gmres"
    tensor_method: str = "gmres"
    tensor_precond: str = "ilu"
    ilu_drop_tol: float = 1e-6
    ilu_fill_factor: float = 20.0
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-10
    newton_maxiter: int = 20
    line_search_factor: float = 0.5
    line_search_max: int = 8
    outer_sweeps: int = 1
    max_dt_halvings: int = 0

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0 or self.newton_rtol <= 0 or self.newton_atol <= 0:
            raise InvalidConfigError("tolerances must be positive")
        if min(self.maxiter, self.newton_maxiter, self.outer_sweeps, self.gmres_restart) < 1:
            raise InvalidConfigError("iteration limits must be at least 1")
        for m in (self.ch_method, self.nutrient_method, self.saddle_method, self.tensor_method):
            if m not in KRYLOV_METHODS:
                raise InvalidConfigError(f"unknown Krylov method {m!r}")
        for pc in (self.ch_precond, self.nutrient_precond, self.tensor_precond):
            if pc not in PRECONDITIONERS:
                raise InvalidConfigError(f"unknown preconditioner {pc!r}")
        if not 0 < self.line_search_factor < 1:
            raise InvalidConfigError("line search factor must lie in (0, 1)")
        if not 0 <= self.max_dt_halvings <= 3:
            raise InvalidConfigError("max_dt_halvings must be between 0 and 3")


@dataclass(frozen=True)
class KrylovStats:
    method: str
    iterations: int
    residual: float
    rhs_norm: float


def make_preconditioner(matrix, kind: str, cfg: SolverConfig):
    if kind == "none":
        return None
    if kind == "jacobi":
        d = matrix.diagonal()
        if np.any(d == 0):
            raise SolverFailure("zero diagonal entry, Jacobi preconditioner undefined")
        inv = 1.0 / d
        return spla.LinearOperator(matrix.shape, matvec=lambda x: inv * x, dtype=float)
    if kind == "ilu":
        try:
            ilu = spla.spilu(sp.csc_matrix(matrix), drop_tol=cfg.ilu_drop_tol, fill_factor=cfg.ilu_fill_factor)
        except RuntimeError as exc:
            raise SolverFailure(f"incomplete factorization failed: {exc}") from exc
        return spla.LinearOperator(matrix.shape, matvec=ilu.solve, dtype=float)
    raise InvalidConfigError(f"unknown preconditioner {kind!r}")


def _run(method, A, b, x0, M, rtol, atol, maxiter, restart):
    count = [0]

    def cb(*_):
        count[0] += 1

    if method == "cg":
        x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=atol, maxiter=maxiter, M=M, callback=cb)
    elif method == "minres":
        x, info = spla.minres(A, b, x0=x0, rtol=rtol, maxiter=maxiter, M=M, callback=cb)
    elif method == "bicgstab":
        x, info = spla.bicgstab(A, b, x0=x0, rtol=rtol, atol=atol, maxiter=maxiter, M=M, callback=cb)
    elif method == "gmres":
        x, info = spla.gmres(A, b, x0=x0, rtol=rtol, atol=atol, restart=restart, maxiter=maxiter, M=M,
                             callback=cb, callback_type="pr_norm")
    else:
        raise InvalidConfigError(f"unknown Krylov method {method!r}")
    return x, info, count[0]


def krylov_solve(matrix, rhs, guess=None, cfg: SolverConfig = SolverConfig(), method="gmres", precond="jacobi"):
    """Solve ``matrix @ x = rhs`` to ``‖Ax - b‖ ≤ max(rtol‖b‖, atol)``.

    ``precond`` is a preconditioner name or a ready ``LinearOperator``.  The
    true residual is recomputed at exit; if the Krylov method stopped early
    on its internal estimate, the correction equation is re-solved (at most
    ``cfg.refinements`` times) before giving up with :class:`SolverFailure`.
    """
    b = np.asarray(rhs, float)
    bnorm = float(np.linalg.norm(b))
    target = max(cfg.rtol * bnorm, cfg.atol)
    x = np.zeros_like(b) if guess is None else np.array(guess, float)
    M = precond if isinstance(precond, spla.LinearOperator) else make_preconditioner(matrix, precond, cfg)
    r = b - matrix @ x
    res = float(np.linalg.norm(r))
    total = 0
    for _ in range(cfg.refinements + 1):
        if res <= target:
            break
        rel = min(0.5, target / res * 0.5)
        d, info, its = _run(method, matrix, r, None, M, rel, 0.0, cfg.maxiter, cfg.gmres_restart)
        total += max(its, 1)
        if info < 0 or not np.all(np.isfinite(d)):
            raise SolverFailure(f"{method} broke down (info={info})", residual=res)
        x = x + d
        r = b - matrix @ x
        res_new = float(np.linalg.norm(r))
        if res_new >= res and info > 0:
            raise SolverFailure(f"{method} stagnated at residual {res_new:.3e} (target {target:.3e})",
                                residual=res_new)
        res = res_new
    if res > target:
        raise SolverFailure(f"{method} did not reach {target:.3e}; residual {res:.3e}", residual=res)
    return x, KrylovStats(method, total, res, bnorm)


# -- saddle-point preconditioner ---------------------------------------------------


def saddle_preconditioner(system: asm.SaddleSystem) -> spla.LinearOperator:
    """Block lower-triangular preconditioner.

    Velocity block: sparse LU of ``A``.  Pressure Schur complement:
    ``diag(w / η)`` with ``w`` the vertex weights; the gauge row is solved in
    closed form against that diagonal.
    """
    lu = spla.splu(sp.csc_matrix(system.A))
    nv, npr = system.n_v, system.n_p
    schur = system.m / system.eta_nodal
    inv_s = 1.0 / schur
    m = system.m
    mSm = float(m @ (inv_s * m))
    D = system.D

    def apply(r):
        xv = lu.solve(r[:nv])
        rp = r[nv : nv + npr] + D @ xv
        rl = r[-1]
        lam = (rl + m @ (inv_s * rp)) / mSm
        xp = inv_s * (m * lam - rp)
        return np.concatenate([xv, xp, [lam]])

    n = nv + npr + 1
    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def solve_saddle(system: asm.SaddleSystem, cfg: SolverConfig = SolverConfig(), guess=None):
    """Returns ``(v_full, p, lam, stats)``."""
    x, stats = krylov_solve(system.matrix, system.rhs, guess, cfg, method=cfg.saddle_method,
                            precond=saddle_preconditioner(system))
    v, p, lam = system.expand(x)
    return v, p, lam, stats


# -- Newton ---------------------------------------------------------------------------


@dataclass
class NewtonHistory:
    residuals: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1


def newton_ch(system: asm.CHSystem, initial, cfg: SolverConfig = SolverConfig()):
    """Damped Newton iteration for the Cahn-Hilliard pair.

    Stops when ``‖R‖ ≤ max(newton_rtol ‖R_0‖, newton_atol)``.  Returns
    ``(x, history)``; raises :class:`NonConvergence` when the line search or
    the iteration budget is exhausted.
    """
    x = np.array(initial, float)
    r = system.residual(x)
    rn = float(np.linalg.norm(r))
    hist = NewtonHistory([rn])
    target = max(cfg.newton_rtol * rn, cfg.newton_atol)
    lin_cfg = SolverConfig(rtol=min(cfg.rtol, 1e-10), atol=cfg.atol * 1e-3, maxiter=cfg.maxiter,
                           gmres_restart=cfg.gmres_restart, ilu_drop_tol=cfg.ilu_drop_tol,
                           ilu_fill_factor=cfg.ilu_fill_factor)
    while rn > target:
        if hist.iterations >= cfg.newton_maxiter:
            raise NonConvergence(f"Newton iteration cap reached (residual {rn:.3e})", rn, hist.residuals)
        J = system.jacobian(x)
        dx, stats = krylov_solve(J, -r, None, lin_cfg, method=cfg.ch_method, precond=cfg.ch_precond)
        hist.linear_iterations.append(stats.iterations)
        step = 1.0
        for k in range(cfg.line_search_max + 1):
            x_try = x + step * dx
            r_try = system.residual(x_try)
            rn_try = float(np.linalg.norm(r_try))
            if rn_try < (1.0 - 1e-4 * step) * rn or rn_try <= target:
                break
            step *= cfg.line_search_factor
        else:
            raise NonConvergence(f"line search exhausted at residual {rn:.3e}", rn, hist.residuals)
        hist.backtracks.append(k)
        x, r, rn = x_try, r_try, rn_try
        hist.residuals.append(rn)
    return x, hist


def finite_difference_jacobian(system: asm.CHSystem, x, h=1e-6) -> np.ndarray:
    """Dense central-difference Jacobian (small systems only)."""
    n = len(x)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (system.residual(x + e) - system.residual(x - e)) / (2 * h)
    return J


# -- one time step ----------------------------------------------------------------------


@dataclass(frozen=True)
class StepMode:
    """Physics switches for reduced runs."""

    freeze_velocity: bool = False
    freeze_B: bool = False
    lump_oldroyd_products: bool = False
    include_phi_source: bool = True


@dataclass(frozen=True)
class StepReport:
    step: int
    t: float
    dt: float
    newton: tuple
    newton_linear: tuple
    nutrient_iterations: int
    saddle_iterations: int
    tensor_iterations: int
    residuals: dict
    wall_time: float
    energy_before: float
    energy_after: float
    min_eig_B: float
    div_residual: float
    flags: tuple = ()


def advance_step(state: State, p: mdl.ModelParams, cfg: SolverConfig = SolverConfig(), mode: StepMode = StepMode(),
                 dt: float | None = None, energy_before: float | None = None):
    """One time step of the decoupled scheme: CH, nutrient, saddle, Oldroyd,
    repeated ``cfg.outer_sweeps`` times. Returns ``(new_state, report)``."""
    t0 = time.perf_counter()
    dt = p.dt if dt is None else dt
    mesh = state.mesh
    n = mesh.num_vertices
    if energy_before is None:
        energy_before = mdl.discrete_energy(mesh, state.phi, state.sigma, state.v, state.B, p).total
    phi, mu, sigma = state.phi.copy(), state.mu.copy(), state.sigma.copy()
    v, pr, B = state.v.copy(), state.pressure.copy(), state.B.copy()
    newton_res, newton_lin = [], []
    its = {"nutrient": 0, "saddle": 0, "tensor": 0}
    res = {}
    lam = 0.0
    for _ in range(cfg.outer_sweeps):
        ch = asm.assemble_ch(mesh, p, state.phi, sigma, B, None if mode.freeze_velocity else v, dt=dt,
                             include_source=mode.include_phi_source)
        x, hist = newton_ch(ch, np.concatenate([phi, mu]), cfg)
        phi, mu = x[:n], x[n:]
        newton_res.extend(hist.residuals)
        newton_lin.extend(hist.linear_iterations)
        res["ch"] = hist.residuals[-1]

        nut = asm.assemble_nutrient(mesh, p, state.sigma, phi, state.phi, None if mode.freeze_velocity else v, dt=dt)
        sigma, st = krylov_solve(nut.matrix, nut.rhs, sigma, cfg, cfg.nutrient_method, cfg.nutrient_precond)
        its["nutrient"] += st.iterations
        res["nutrient"] = st.residual

        if not mode.freeze_velocity:
            sad = asm.assemble_saddle(mesh, p, state.v, state.phi, phi, mu, state.sigma, sigma, B, dt=dt)
            v, pr, lam, st = solve_saddle(sad, cfg, sad.restrict(v, pr, lam))
            its["saddle"] += st.iterations
            res["saddle"] = st.residual

        if not mode.freeze_B:
            old = asm.assemble_oldroyd(mesh, p, state.B, state.phi, phi, state.sigma,
                                       None if mode.freeze_velocity else v,
                                       None if mode.freeze_velocity else state.v, dt=dt,
                                       lump_products=mode.lump_oldroyd_products)
            xb, st = krylov_solve(old.matrix, old.rhs, asm.stack_tensor(B), cfg, cfg.tensor_method,
                                  cfg.tensor_precond)
            B = asm.unstack_tensor(xb, n)
            its["tensor"] += st.iterations
            res["tensor"] = st.residual

    new = State(mesh, phi, mu, sigma, pr, v, B, t=state.t + dt, step=state.step + 1)
    min_eig = float(np.min(matfun.min_eigenvalue(B)))
    flags = ()
    if min_eig < 0:
        flags = ("B_not_positive_definite",)
        log.warning("step %d: min eigenvalue of B is %.3e", new.step, min_eig)
    energy_after = mdl.discrete_energy(mesh, phi, sigma, v, B, p).total
    report = StepReport(
        step=new.step,
        t=new.t,
        dt=dt,
        newton=tuple(newton_res),
        newton_linear=tuple(newton_lin),
        nutrient_iterations=its["nutrient"],
        saddle_iterations=its["saddle"],
        tensor_iterations=its["tensor"],
        residuals=res,
        wall_time=time.perf_counter() - t0,
        energy_before=energy_before,
        energy_after=energy_after,
        min_eig_B=min_eig,
        div_residual=asm.divergence_residual(mesh, v),
        flags=flags,
    )
    return new, report


def advance_with_retry(state: State, p: mdl.ModelParams, cfg: SolverConfig = SolverConfig(),
                       mode: StepMode = StepMode(), dt: float | None = None, depth: int = 0):
    """``advance_step`` that halves the step on solver failure, up to
    ``cfg.max_dt_halvings`` times. Returns ``(state, [reports])``."""
    dt = p.dt if dt is None else dt
    try:
        new, rep = advance_step(state, p, cfg, mode, dt=dt)
        return new, [rep]
    except SolverFailure as exc:
        if depth >= cfg.max_dt_halvings:
            raise
        log.warning("step at t=%.6g failed (%s); retrying with dt=%.3e", state.t, exc, dt / 2)
        mid, r1 = advance_with_retry(state, p, cfg, mode, dt / 2, depth + 1)
        end, r2 = advance_with_retry(mid, p, cfg, mode, dt / 2, depth + 1)
        end.step = state.step + 1
        return end, r1 + r2
