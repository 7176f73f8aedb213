"""Spectral calculus for symmetric 2x2 matrices.

A symmetric matrix is stored as its three independent entries
``(a_xx, a_xy, a_yy)`` in the trailing axis of an array, so a whole field of
tensors is just an ``(N, 3)`` array.  Eigendecompositions use the closed form
``theta = atan2(2 a_xy, a_xx - a_yy) / 2`` which stays accurate for nearly
repeated eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

IDENTITY = np.array([1.0, 0.0, 1.0])
_DIAG_TOL = 1e-14


def sym2(a_xx, a_xy, a_yy) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*(np.asarray(v, float) for v in (a_xx, a_xy, a_yy))), axis=-1)


def to_matrix(m) -> np.ndarray:
    m = np.asarray(m, float)
    return np.stack([np.stack([m[..., 0], m[..., 1]], -1), np.stack([m[..., 1], m[..., 2]], -1)], -2)


def from_matrix(a) -> np.ndarray:
    """Symmetric part of a (..., 2, 2) array in packed form."""
    a = np.asarray(a, float)
    return np.stack([a[..., 0, 0], 0.5 * (a[..., 0, 1] + a[..., 1, 0]), a[..., 1, 1]], axis=-1)


def trace(m):
    m = np.asarray(m)
    return m[..., 0] + m[..., 2]


def det(m):
    m = np.asarray(m)
    return m[..., 0] * m[..., 2] - m[..., 1] ** 2


def frobenius(m):
    m = np.asarray(m)
    return np.sqrt(m[..., 0] ** 2 + 2 * m[..., 1] ** 2 + m[..., 2] ** 2)


def ddot(a, b):
    """Frobenius product ``A : B``."""
    a, b = np.asarray(a), np.asarray(b)
    return a[..., 0] * b[..., 0] + 2 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def eigh(m):
    """Eigenvalues ``(lam_min, lam_max)`` and rotation angle of the eigenbasis.

    The eigenvector of ``lam_max`` is ``(cos t, sin t)``, the one of
    ``lam_min`` is ``(-sin t, cos t)``.
    """
    m = np.asarray(m, float)
    a, b, c = m[..., 0], m[..., 1], m[..., 2]
    scale = np.sqrt(a * a + 2 * b * b + c * c)
    b = np.where(np.abs(b) < _DIAG_TOL * scale, 0.0, b)
    half = 0.5 * (a - c)
    r = np.hypot(half, b)
    mean = 0.5 * (a + c)
    lam = np.stack([mean - r, mean + r], axis=-1)
    theta = 0.5 * np.arctan2(b, half)
    return lam, theta


def eigenvalues(m) -> np.ndarray:
    return eigh(m)[0]


def min_eigenvalue(m):
    return eigh(m)[0][..., 0]


def _assemble(f_lo, f_hi, theta, repeated):
    c, s = np.cos(theta), np.sin(theta)
    quarter = theta == 0.5 * np.pi  # diagonal input with a_xx < a_yy
    c = np.where(quarter, 0.0, c)
    s = np.where(quarter, 1.0, s)
    out = np.stack([f_lo * s * s + f_hi * c * c, (f_hi - f_lo) * c * s, f_lo * c * c + f_hi * s * s], axis=-1)
    if np.any(repeated):
        out[repeated] = f_lo[repeated][..., None] * IDENTITY
    return out


def spectral_apply(f, m, domain=None) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of symmetric ``m``.

    ``f`` must accept numpy arrays.  ``domain`` is an optional predicate on
    eigenvalues; if it fails anywhere, :class:`DomainError` is raised.
    """
    lam, theta = eigh(m)
    if domain is not None and not np.all(domain(lam)):
        raise DomainError(f"eigenvalue outside domain (min eigenvalue {np.min(lam):.3e})")
    with np.errstate(all="ignore"):
        fl = np.asarray(f(lam), float)
    if not np.all(np.isfinite(fl)):
        raise DomainError("function is not finite at some eigenvalue")
    repeated = lam[..., 0] == lam[..., 1]
    return _assemble(fl[..., 0], fl[..., 1], theta, repeated)


def logm(m):
    return spectral_apply(np.log, m, domain=lambda lam: lam > 0)


def inv(m):
    """Inverse of a symmetric matrix (closed form, raises on singular input)."""
    m = np.asarray(m, float)
    d = det(m)
    if np.any(d == 0):
        raise DomainError("singular matrix")
    return np.stack([m[..., 2], -m[..., 1], m[..., 0]], axis=-1) / d[..., None]


# -- regularized scalar family ------------------------------------------------


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def g_delta(s, delta):
    """Concave C1 regularization of ln: linear below ``delta``."""
    _check_delta(delta)
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s < delta, s / delta + np.log(delta) - 1.0, np.log(np.maximum(s, delta)))


def g_delta_prime(s, delta):
    _check_delta(delta)
    return 1.0 / np.maximum(np.asarray(s, float), delta)


def beta_delta(s, delta):
    _check_delta(delta)
    return np.maximum(np.asarray(s, float), delta)


def g_L(s, L):
    """ln(s) on (0, L), continued linearly for s >= L."""
    if L <= 1:
        raise ValueError(f"L must exceed 1, got {L}")
    s = np.asarray(s, float)
    if np.any(s <= 0):
        raise DomainError("g_L is defined for positive arguments only")
    return np.where(s < L, np.log(np.minimum(s, L)), s / L + np.log(L) - 1.0)


def g_L_prime(s, L):
    if L <= 1:
        raise ValueError(f"L must exceed 1, got {L}")
    s = np.asarray(s, float)
    if np.any(s <= 0):
        raise DomainError("g_L is defined for positive arguments only")
    return 1.0 / np.minimum(s, L)


def beta_L(s, L):
    return np.minimum(np.asarray(s, float), L)


def h_delta(s, delta):
    """``H_delta = G^{1/delta}``."""
    _check_delta(delta)
    return g_L(s, 1.0 / delta)


def neg_part(s):
    return np.minimum(np.asarray(s, float), 0.0)


# -- regularization inequality suite ---------------------------------------------

LEMMA_LABELS = ("a", "b", "c", "d", "e", "f", "g", "h")


@dataclass
class InequalityReport:
    """Outcome of the regularization inequality suite.

    ``slack[k]`` is ``lhs - rhs`` (for (a): minus the residual norm), so an
    inequality holds when its slack is at least ``-tol``.  Entries (g) and
    (h) are ``None`` when ``delta > 1/2``.
    """

    delta: float
    tol: float
    slack: dict = field(default_factory=dict)

    @property
    def holds(self) -> dict:
        return {k: (None if v is None else bool(np.all(v >= -self.tol))) for k, v in self.slack.items()}

    @property
    def all_hold(self) -> bool:
        return all(v is not False for v in self.holds.values())

    def failures(self) -> dict:
        return {k: int(np.sum(v < -self.tol)) for k, v in self.slack.items() if v is not None}


def regularization_check(phi, psi, delta, tol=1e-10) -> InequalityReport:
    """Evaluate both sides of the eight regularization inequalities.

    ``phi`` and ``psi`` are packed symmetric matrices (any leading shape);
    slacks are scaled by ``1 + |lhs| + |rhs|`` so ``tol`` is relative.
    """
    _check_delta(delta)
    phi = np.asarray(phi, float)
    psi = np.asarray(psi, float)
    G = lambda m: spectral_apply(lambda s: g_delta(s, delta), m)  # noqa: E731
    dG = lambda m: spectral_apply(lambda s: g_delta_prime(s, delta), m)  # noqa: E731
    beta = spectral_apply(lambda s: beta_delta(s, delta), phi)
    dG_phi, dG_psi = dG(phi), dG(psi)
    G_phi, G_psi = G(phi), G(psi)
    eye = np.broadcast_to(IDENTITY, phi.shape)

    def rel(lhs, rhs):
        return (lhs - rhs) / (1.0 + np.abs(lhs) + np.abs(rhs))

    prod = to_matrix(beta) @ to_matrix(dG_phi)
    prod_t = to_matrix(dG_phi) @ to_matrix(beta)
    res_a = np.maximum(
        np.linalg.norm(prod - np.eye(2), axis=(-2, -1)), np.linalg.norm(prod_t - np.eye(2), axis=(-2, -1))
    )
    slack = {
        "a": -res_a,
        "b": rel(trace(beta + inv(beta) - 2 * eye), 0.0),
        "c": rel(trace(phi - G_phi - eye), 0.0),
        "d": rel(ddot(phi - beta, eye - dG_phi), 0.0),
        "e": rel(ddot(phi - psi, dG_psi), trace(G_phi - G_psi)),
        "f": rel(-ddot(phi - psi, dG_phi - dG_psi), delta**2 * frobenius(dG_phi - dG_psi) ** 2),
    }
    if delta <= 0.5:
        lhs_g = trace(phi - G_phi)
        neg = spectral_apply(neg_part, phi)
        rhs_g = np.maximum(0.5 * frobenius(phi), frobenius(neg) / (2 * delta))
        slack["g"] = rel(lhs_g, rhs_g)
        slack["h"] = rel(ddot(phi, eye - dG_phi), 0.5 * frobenius(phi) - 2.0)
    else:
        slack["g"] = slack["h"] = None
    return InequalityReport(delta, tol, slack)


# -- elastic energy density and stress ------------------------------------------


def elastic_trace_energy(b):
    """``½ tr(B - ln B)`` for positive definite ``B`` (unit elastic modulus)."""
    return 0.5 * trace(np.asarray(b, float) - logm(b))


def elastic_stress(b, kappa):
    """``κ (B - I)``; ``kappa`` may be a scalar or broadcast over leading axes."""
    b = np.asarray(b, float)
    return np.asarray(kappa, float)[..., None] * (b - IDENTITY)
