from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidStateError
from .fespace import spaces
from .matfun import IDENTITY
from .mesh import Mesh


@dataclass
class State:
    """All unknowns at one time level.

    ``v`` stores the two velocity components as consecutive blocks over the
    P2 nodes; ``B`` is an ``(N, 3)`` array of ``(xx, xy, yy)`` entries.
    """

    mesh: Mesh
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pressure: np.ndarray
    v: np.ndarray
    B: np.ndarray
    t: float = 0.0
    step: int = 0

    def __post_init__(self):
        self.check()

    def check(self):
        n = self.mesh.num_vertices
        n2 = spaces(self.mesh).num_p2
        for name in ("phi", "mu", "sigma", "pressure"):
            if np.shape(getattr(self, name)) != (n,):
                raise InvalidStateError(f"{name} must have {n} entries")
        if np.shape(self.v) != (2 * n2,):
            raise InvalidStateError(f"v must have {2 * n2} entries")
        if np.shape(self.B) != (n, 3):
            raise InvalidStateError(f"B must have shape ({n}, 3)")

    def copy(self) -> "State":
        return replace(
            self,
            phi=self.phi.copy(),
            mu=self.mu.copy(),
            sigma=self.sigma.copy(),
            pressure=self.pressure.copy(),
            v=self.v.copy(),
            B=self.B.copy(),
        )

    @classmethod
    def constant(cls, mesh: Mesh, phi=1.0, sigma=0.0, mu=0.0) -> "State":
        n = mesh.num_vertices
        n2 = spaces(mesh).num_p2
        return cls(
            mesh,
            np.full(n, float(phi)),
            np.full(n, float(mu)),
            np.full(n, float(sigma)),
            np.zeros(n),
            np.zeros(2 * n2),
            np.tile(IDENTITY, (n, 1)),
        )
