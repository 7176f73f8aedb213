"""Model parameters, potential, source and coefficient functions, discrete
energy, stability constants and the assumption checks run before a simulation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import matfun
from .errors import DomainError, InvalidConfigError
from .fespace import spaces

POTENTIALS = ("modified", "quartic")


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical constants. Defaults are the reference tumour set."""

    epsilon: float = 0.01
    beta: float = 0.1
    P: float = 2.0
    A_apop: float = 0.0
    C: float = 10.0
    G: float = 0.0
    chi_sigma: float = 500.0
    chi_phi: float = 10.0
    alpha: float = 1e-3
    m0: float = 1e-12
    n0: float = 0.002
    K: float = 1000.0
    eta_1: float = 5000.0
    eta_m1: float = 5000.0
    kappa: float = 1e4
    kappa_1: float | None = None
    kappa_m1: float | None = None
    tau_over_kappa_1: float = 1.0
    tau_over_kappa_m1: float = 1.0
    sigma_inf: float = 1.0
    dt: float = 5e-4
    t_end: float = 2.0
    box_min: float = -5.0
    box_max: float = 5.0
    growth_source: bool = False
    phase_dependent_kappa: bool = False
    potential: str = "modified"
    nutrient_cutoff: bool = True
    R1: float = 0.5
    trace_constant_sq: float | None = None
    cfl_cstar: float = 1.0

    def __post_init__(self):
        if self.potential not in POTENTIALS:
            raise InvalidConfigError(f"potential must be one of {POTENTIALS}, got {self.potential!r}")
        if self.phase_dependent_kappa and (self.kappa_1 is None or self.kappa_m1 is None):
            raise InvalidConfigError("phase_dependent_kappa requires kappa_1 and kappa_m1")
        if not self.box_max > self.box_min:
            raise InvalidConfigError("empty domain")

    @property
    def A(self) -> float:
        return self.beta / self.epsilon

    @property
    def B(self) -> float:
        return self.beta * self.epsilon

    @property
    def side(self) -> float:
        return self.box_max - self.box_min

    @property
    def box(self):
        return ((self.box_min, self.box_max), (self.box_min, self.box_max))

    @property
    def kappa_phases(self):
        """(kappa at phi=1, kappa at phi=-1)."""
        if self.phase_dependent_kappa:
            return self.kappa_1, self.kappa_m1
        return self.kappa, self.kappa

    @property
    def tau_phases(self):
        k1, km1 = self.kappa_phases
        return self.tau_over_kappa_1 * k1, self.tau_over_kappa_m1 * km1

    @property
    def kappa_max(self) -> float:
        return max(self.kappa_phases)

    def with_updates(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


# -- cut-offs -----------------------------------------------------------------


def h(x):
    return np.clip(0.5 * (1.0 + np.asarray(x, float)), 0.0, 1.0)


def h_prime(x):
    x = np.asarray(x, float)
    return np.where(np.abs(x) < 1.0, 0.5, 0.0)


def g(s):
    return np.clip(np.asarray(s, float), 0.0, 1.0)


def g_prime(s):
    s = np.asarray(s, float)
    return np.where((s > 0.0) & (s < 1.0), 1.0, 0.0)


# -- potential ----------------------------------------------------------------


def psi(t, kind="modified"):
    t = np.asarray(t, float)
    quartic = 0.25 * (1.0 - t * t) ** 2
    if kind == "quartic":
        return quartic
    return np.where(t > 1.0, (t - 1.0) ** 2, np.where(t < -1.0, (t + 1.0) ** 2, quartic))


def psi_prime(t, kind="modified"):
    return psi1_prime(t, kind) + psi2_prime(t, kind)


def psi1_prime(t, kind="modified"):
    """Derivative of the convex part (treated implicitly)."""
    t = np.asarray(t, float)
    if kind == "quartic":
        return t**3
    return np.where(t > 1.0, 2.0 * t - 1.0, np.where(t < -1.0, 2.0 * t + 1.0, t**3))


def psi1_second(t, kind="modified"):
    t = np.asarray(t, float)
    if kind == "quartic":
        return 3.0 * t * t
    return np.where(np.abs(t) > 1.0, 2.0, 3.0 * t * t)


def psi2_prime(t, kind="modified"):
    """Derivative of the concave part (treated explicitly)."""
    t = np.asarray(t, float)
    if kind == "quartic":
        return -t
    return -np.clip(t, -1.0, 1.0)


# -- sources and coefficients -------------------------------------------------


def kappa_of(phi, p: ModelParams):
    k1, km1 = p.kappa_phases
    phi = np.asarray(phi, float)
    if not p.phase_dependent_kappa:
        return np.full_like(phi, p.kappa)
    return 0.5 * k1 * (1.0 + phi) + 0.5 * km1 * (1.0 - phi)


def f_B(b, kappa):
    """Stress-dependent proliferation damping ``(1 + |κ(B - I)|²)^(-1/2)``."""
    return 1.0 / np.sqrt(1.0 + matfun.frobenius(matfun.elastic_stress(b, kappa)) ** 2)


def _nutrient(sigma, p):
    return g(sigma) if p.nutrient_cutoff else np.asarray(sigma, float)


def gamma_phi(phi, sigma, b, p: ModelParams, kappa=None):
    phi = np.asarray(phi, float)
    kappa = kappa_of(phi, p) if kappa is None else kappa
    return h(1.1 * phi) * (p.P * _nutrient(sigma, p) * f_B(b, kappa) - p.A_apop)


def gamma_phi_dphi(phi, sigma, b, p: ModelParams, kappa=None):
    """Derivative in phi with sigma, B and kappa frozen."""
    phi = np.asarray(phi, float)
    kappa = kappa_of(phi, p) if kappa is None else kappa
    return 1.1 * h_prime(1.1 * phi) * (p.P * _nutrient(sigma, p) * f_B(b, kappa) - p.A_apop)


def gamma_sigma(phi, sigma, p: ModelParams):
    return p.C * h(phi) * _nutrient(sigma, p)


def gamma_B(phi, sigma, p: ModelParams):
    if not p.growth_source:
        return np.zeros_like(np.asarray(phi, float))
    return p.G * _nutrient(sigma, p) * h(phi)


@dataclass(frozen=True)
class Coefficients:
    m: np.ndarray
    n: np.ndarray
    eta: np.ndarray
    tau: np.ndarray
    kappa: np.ndarray


def coefficients(phi, p: ModelParams) -> Coefficients:
    phi = np.asarray(phi, float)
    hp, hm = h(phi), h(-phi)
    tau1, taum1 = p.tau_phases
    return Coefficients(
        m=2.0 * hp**2 + p.m0,
        n=np.full_like(phi, p.n0),
        eta=p.eta_m1 * hm + p.eta_1 * hp,
        tau=taum1 * hm + tau1 * hp,
        kappa=kappa_of(phi, p),
    )


# -- energy -------------------------------------------------------------------

ENERGY_COMPONENTS = ("F_psi", "F_grad", "F_sigma", "F_chem", "F_kin", "F_elastic")


@dataclass(frozen=True)
class Energy:
    F_psi: float
    F_grad: float
    F_sigma: float
    F_chem: float
    F_kin: float
    F_elastic: float
    finite: bool = True

    @property
    def total(self) -> float:
        return self.F_psi + self.F_grad + self.F_sigma + self.F_chem + self.F_kin + self.F_elastic

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ENERGY_COMPONENTS}
        d["F_total"] = self.total
        return d


def discrete_energy(mesh, phi, sigma, v, b, p: ModelParams) -> Energy:
    """Lumped discrete free energy with its six components.

    ``v`` is a P2 velocity vector (or ``None`` for zero velocity), ``b`` an
    ``(N, 3)`` tensor field.  A non positive definite ``b`` gives an infinite
    elastic part and ``finite=False`` instead of raising.
    """
    s = spaces(mesh)
    w = s.lumped
    phi = np.asarray(phi, float)
    sigma = np.asarray(sigma, float)
    grad = s.p1_gradient(phi)
    f_grad = 0.5 * p.B * float(np.sum(s.area * np.sum(grad * grad, axis=1)))
    if v is None:
        f_kin = 0.0
    else:
        v = np.asarray(v, float).reshape(2, s.num_p2)
        M = s.p2_mass()
        f_kin = 0.5 * float(v[0] @ (M @ v[0]) + v[1] @ (M @ v[1]))
    try:
        dens = matfun.elastic_trace_energy(b)
        f_el = float(np.sum(w * kappa_of(phi, p) * dens))
        finite = True
    except DomainError:
        f_el, finite = math.inf, False
    return Energy(
        F_psi=float(np.sum(w * p.A * psi(phi, p.potential))),
        F_grad=f_grad,
        F_sigma=float(np.sum(w * 0.5 * p.chi_sigma * sigma**2)),
        F_chem=float(np.sum(w * p.chi_phi * sigma * (1.0 - phi))),
        F_kin=f_kin,
        F_elastic=f_el,
        finite=finite,
    )


# -- growth constants and time-step bound --------------------------------------

_SCAN = np.concatenate([-np.logspace(-3, 12, 4000)[::-1], np.linspace(-3, 3, 60001), np.logspace(-3, 12, 4000)])


def potential_constants(p: ModelParams):
    """``(R1, R2, R3)`` for the configured potential.

    ``R1`` is the configured quadratic lower-bound slope; ``R2`` and ``R3``
    are suprema evaluated on a dense scan that includes very large |t|, where
    the linear branches attain their limits.  The quartic potential has cubic
    derivative growth, so its ``R3`` is infinite.
    """
    t = _SCAN
    R1 = p.R1
    R2 = float(np.max(R1 * t * t - psi(t, p.potential)))
    if p.potential == "quartic":
        R3 = math.inf
    else:
        ratio = np.maximum(np.abs(psi1_prime(t)), np.abs(psi2_prime(t))) / (1.0 + np.abs(t))
        R3 = float(np.max(ratio))
    return R1, max(R2, 0.0), R3


def source_bound(p: ModelParams, n=401) -> float:
    """Numerical ``R0 = sup (|Γ_φ| + |Γ_σ|) / (1 + |φ| + |σ|)``.

    ``f(B)`` ranges over ``(0, 1]``; its extreme values are sampled.
    """
    phi = np.linspace(-3, 3, n)[:, None, None]
    sig = np.concatenate([np.linspace(-3, 3, n), [1e3, 1e6]])[None, :, None]
    f = np.array([0.0, 1.0])[None, None, :]
    hp = h(1.1 * phi)
    gs = _nutrient(sig, p)
    val = np.abs(hp * (p.P * gs * f - p.A_apop)) + np.abs(p.C * h(phi) * gs)
    return float(np.max(val / (1.0 + np.abs(phi) + np.abs(sig))))


def trace_constant_sq(p: ModelParams) -> float:
    """Boundary trace constant for a square of side l: ``4/l + 2√2``.

    Follows from ``u(x,0)² ≤ u(x,y)² + 2∫|u||∂_y u|`` averaged over each
    side and Young's inequality; overridable in the config.
    """
    if p.trace_constant_sq is not None:
        return float(p.trace_constant_sq)
    return 4.0 / p.side + 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class StabilityConstants:
    R0: float
    R1: float
    R2: float
    R3: float
    c: dict = field(default_factory=dict)
    a43_margin: float = 0.0
    dt_star: float = 0.0

    def __getitem__(self, key):
        return self.c[key]


def stability_constants(p: ModelParams) -> StabilityConstants:
    R0 = source_bound(p)
    R1, R2, R3 = potential_constants(p)
    tau_hi = max(p.tau_phases)
    eta_lo = min(p.eta_1, p.eta_m1)
    ctr2 = trace_constant_sq(p)
    A, Bc = p.A, p.B
    chi_s, chi_p = p.chi_sigma, p.chi_phi
    c = {
        "c1": p.m0 / 2,
        "c2": p.n0 * chi_s**2 / 2,
        "c3": p.K * chi_s / 4,
        "c4": 2 * eta_lo,
        "c5": p.kappa_max**2 / (2 * tau_hi),
        "c6": 3 * R0**2 + 1.5 * chi_s**2 + 4 * chi_p**2,
        "c7": 4 * A**2 * R3**2,
    }
    tr = p.K * ctr2 * (chi_p**2 / (2 * chi_s) + 1)
    c["c8"] = c["c7"] + 3 * R0**2 + 1.5 * chi_p**2 + tr
    c["c9"] = 2 * Bc**2 / p.m0 + tr + p.n0 * chi_p**2
    margin = A * R1 - 4 * chi_p**2 / chi_s
    if margin > 0 and math.isfinite(c["c8"]):
        dts = min(Bc / (2 * c["c9"]), chi_s / (4 * c["c6"]), margin / c["c8"])
    else:
        dts = 0.0
    return StabilityConstants(R0, R1, R2, R3, c, margin, dts)


def dt_star(p: ModelParams, constants: StabilityConstants | None = None) -> float:
    """Energy-stability time-step bound; raises if the chemotaxis margin fails."""
    constants = constants or stability_constants(p)
    if constants.a43_margin <= 0:
        raise InvalidConfigError(
            f"A*R1 - 4*chi_phi^2/chi_sigma = {constants.a43_margin:.6g} must be positive"
        )
    return constants.dt_star


def cfl_threshold(p: ModelParams, h_min: float, cstar: float | None = None) -> float:
    cstar = p.cfl_cstar if cstar is None else cstar
    return cstar * p.alpha**2 * h_min**2


# -- assumption checks ----------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    hard: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL" if self.hard else "ADVISORY")
        return f"[{status}] {self.name}: {self.detail} (margin {self.margin:.6g})"


@dataclass
class ValidationReport:
    checks: list
    constants: StabilityConstants

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    def hard_failures(self) -> list:
        return [c for c in self.checks if c.hard and not c.passed]

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append("R0=%.6g R1=%.6g R2=%.6g R3=%.6g dt*=%.6g" % (
            self.constants.R0, self.constants.R1, self.constants.R2, self.constants.R3, self.constants.dt_star))
        lines.append("overall: " + ("OK" if self.ok else "REJECTED"))
        return "\n".join(lines)


def _lipschitz_estimate(p: ModelParams, n=20000, seed=0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3, 3, (2, n, 2))
    b = np.broadcast_to(matfun.IDENTITY, (n, 3))
    g1 = gamma_phi(x[0, :, 0], x[0, :, 1], b, p) + gamma_sigma(x[0, :, 0], x[0, :, 1], p)
    g2 = gamma_phi(x[1, :, 0], x[1, :, 1], b, p) + gamma_sigma(x[1, :, 0], x[1, :, 1], p)
    dist = np.linalg.norm(x[0] - x[1], axis=1)
    return float(np.max(np.abs(g1 - g2) / dist))


def validate_params(p: ModelParams, h_min: float | None = None, b0_min_eig: float = 1.0,
                    enforce_dt_star=False, enforce_cfl=False) -> ValidationReport:
    """Check the standing assumptions; each check carries a numeric margin."""
    k = stability_constants(p)
    checks = []
    add = checks.append
    add(Check("A1 domain", p.side > 0, p.side, True, f"square box of side {p.side:g}"))
    add(Check("A2 source growth", math.isfinite(k.R0), k.R0, True, f"R0 = {k.R0:.6g}"))
    pos = {"A": p.A, "B": p.B, "chi_sigma": p.chi_sigma, "K": p.K, "alpha": p.alpha,
           "kappa": min(p.kappa_phases), "m0": p.m0, "n0": p.n0,
           "eta": min(p.eta_1, p.eta_m1), "tau": min(p.tau_phases)}
    worst = min(pos, key=pos.get)
    add(Check("A3 positivity", pos[worst] > 0 and p.chi_phi >= 0, pos[worst], True,
              f"smallest positive constant {worst} = {pos[worst]:.6g}; chi_phi = {p.chi_phi:g}"))
    phis = np.linspace(-3, 3, 601)
    co = coefficients(phis, p)
    lo = min(co.m.min(), co.n.min(), co.eta.min(), co.tau.min())
    add(Check("A3 coefficient bounds", bool(lo > 0), float(lo), True,
              "m, n, eta, tau bounded below on the cut-off range"))
    add(Check("A4 potential growth", math.isfinite(k.R3), k.R3 if math.isfinite(k.R3) else -1.0,
              False, f"R1 = {k.R1:g}, R2 = {k.R2:.6g}, R3 = {k.R3:.6g} ({p.potential} potential)"))
    add(Check("A4_3 chemotaxis margin", k.a43_margin > 0, k.a43_margin, True,
              f"A*R1 - 4 chi_phi^2/chi_sigma = {p.A * k.R1:g} - {4 * p.chi_phi**2 / p.chi_sigma:g}"))
    add(Check("A5 initial B", b0_min_eig > 0, b0_min_eig, True, "B0 symmetric positive definite"))
    add(Check("A6 dimension", True, 2.0, True, "d = 2"))
    lip = _lipschitz_estimate(p)
    add(Check("A7 source Lipschitz", math.isfinite(lip), lip, True, f"empirical constant {lip:.6g}"))
    margin_dt = k.dt_star - p.dt
    add(Check("dt < dt*", margin_dt > 0, margin_dt, enforce_dt_star,
              f"dt = {p.dt:g}, dt* = {k.dt_star:.6g}"))
    if h_min is not None:
        thr = cfl_threshold(p, h_min)
        add(Check("CFL", p.dt <= thr, thr - p.dt, enforce_cfl,
                  f"dt = {p.dt:g} vs c* alpha^2 h_min^2 = {thr:.6g}"))
    return ValidationReport(checks, k)
