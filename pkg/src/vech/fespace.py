"""P1 / P2 finite element spaces on a :class:`~vech.mesh.Mesh`.

Geometry, quadrature tables and sparsity patterns are computed once per mesh
and cached on it (see :func:`spaces`).  Assembly everywhere follows the same
pattern: build a dense ``(M, a, b)`` block of element matrices with numpy and
scatter it into a fixed CSR pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidStateError
from .mesh import Mesh, p2_basis_values

# 6-point symmetric rule, exact for degree 4 (barycentric points, weights sum to 1)
_A1, _W1 = 0.445948490915964886318329253883, 0.223381589678011465944819976
_A2, _W2 = 0.091576213509770743459571463402, 0.109951743655321867388513356
QUAD_POINTS = np.array(
    [
        [1 - 2 * _A1, _A1, _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [_A1, _A1, 1 - 2 * _A1],
        [1 - 2 * _A2, _A2, _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [_A2, _A2, 1 - 2 * _A2],
    ]
)
QUAD_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class DofLayout:
    """Degree-of-freedom numbering for one field.

    ``kind`` is one of ``"P1"``, ``"P1-symtensor"`` or ``"P2-vector"``.  Scalar
    nodes are numbered vertices first, then edge midpoints (P2 only); the
    components of vector/tensor fields are stored as separate blocks, so the
    dof of component ``c`` at node ``k`` is ``c * num_nodes + k``.
    """

    kind: str
    num_nodes: int
    components: int
    num_vertices: int
    num_edges: int = 0

    @property
    def size(self) -> int:
        return self.num_nodes * self.components

    def vertex_dofs(self, component=0) -> np.ndarray:
        return component * self.num_nodes + np.arange(self.num_vertices)

    def edge_dofs(self, component=0) -> np.ndarray:
        return component * self.num_nodes + self.num_vertices + np.arange(self.num_edges)


def p1_layout(mesh: Mesh) -> DofLayout:
    return DofLayout("P1", mesh.num_vertices, 1, mesh.num_vertices)


def p1_tensor_layout(mesh: Mesh) -> DofLayout:
    return DofLayout("P1-symtensor", mesh.num_vertices, 3, mesh.num_vertices)


def p2_vector_layout(mesh: Mesh) -> DofLayout:
    edges, _, _ = mesh.edges()
    n = mesh.num_vertices + len(edges)
    return DofLayout("P2-vector", n, 2, mesh.num_vertices, len(edges))


class Pattern:
    """Fixed CSR sparsity for element blocks with given row/column dof maps."""

    def __init__(self, row_dofs, col_dofs, shape):
        m, a = row_dofs.shape
        b = col_dofs.shape[1]
        rows = np.broadcast_to(row_dofs[:, :, None], (m, a, b)).ravel()
        cols = np.broadcast_to(col_dofs[:, None, :], (m, a, b)).ravel()
        key = rows.astype(np.int64) * shape[1] + cols
        uniq, self.scatter = np.unique(key, return_inverse=True)
        self.indices = (uniq % shape[1]).astype(np.int32)
        urows = uniq // shape[1]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(urows, minlength=shape[0]))]).astype(np.int32)
        self.shape = shape
        self.nnz = len(uniq)

    def matrix(self, blocks) -> sp.csr_matrix:
        data = np.bincount(self.scatter, weights=np.ascontiguousarray(blocks).ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


class Spaces:
    """Per-mesh geometry and quadrature data shared by all assembly routines."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv = mesh.num_vertices
        t = mesh.triangles
        p = mesh.vertices[t]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns = edge vectors
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            raise InvalidStateError("mesh has non-positively oriented triangles")
        self.area = 0.5 * det
        inv_t = np.empty_like(jac)  # inverse transpose of the jacobian
        inv_t[:, 0, 0] = jac[:, 1, 1] / det
        inv_t[:, 0, 1] = -jac[:, 1, 0] / det
        inv_t[:, 1, 0] = -jac[:, 0, 1] / det
        inv_t[:, 1, 1] = jac[:, 0, 0] / det
        self.grads = np.einsum("mij,kj->mki", inv_t, _REF_GRADS)  # (M, 3, 2)
        self.local_stiffness = self.area[:, None, None] * np.einsum("mid,mjd->mij", self.grads, self.grads)

        self.lumped = np.bincount(t.ravel(), weights=np.repeat(self.area / 3.0, 3), minlength=nv)
        be = mesh.boundary_edges
        self.boundary_edge_lengths = np.linalg.norm(mesh.vertices[be[:, 0]] - mesh.vertices[be[:, 1]], axis=1)
        self.boundary_lumped = np.bincount(
            be.ravel(), weights=np.repeat(0.5 * self.boundary_edge_lengths, 2), minlength=nv
        )
        self.p1 = p1_layout(mesh)
        self.p1p1 = Pattern(t, t, (nv, nv))

        # P2 data
        edges, tri_edges, counts = mesh.edges()
        self.edges = edges
        self.p2_dofs = np.hstack([t, nv + tri_edges])
        self.num_p2 = nv + len(edges)
        self.velocity = p2_vector_layout(mesh)
        self.qx = np.einsum("qk,mkd->mqd", QUAD_POINTS, p)  # physical quad points
        self.qw = self.area[:, None] * QUAD_WEIGHTS[None, :]  # (M, Q)
        self.p1_at_q = QUAD_POINTS  # (Q, 3)
        self.p2_at_q = p2_basis_values(QUAD_POINTS)  # (Q, 6)
        self.p2_grads = self._p2_gradients()  # (M, Q, 6, 2)
        self.p2p2 = Pattern(self.p2_dofs, self.p2_dofs, (self.num_p2, self.num_p2))
        self.p1p2 = Pattern(t, self.p2_dofs, (nv, self.num_p2))
        self.p2p1 = Pattern(self.p2_dofs, t, (self.num_p2, nv))

        bnodes = np.zeros(self.num_p2, dtype=bool)
        bnodes[mesh.boundary_vertices()] = True
        bnodes[nv + np.flatnonzero(counts == 1)] = True
        self.p2_boundary = bnodes
        free = np.flatnonzero(~bnodes)
        self.velocity_free = np.concatenate([free, self.num_p2 + free])

    def _p2_gradients(self):
        lam = QUAD_POINTS
        g = self.grads  # (M, 3, 2) gradients of barycentrics
        out = np.empty((len(g), len(lam), 6, 2))
        for k in range(3):
            out[:, :, k, :] = (4 * lam[:, k] - 1)[None, :, None] * g[:, None, k, :]
        for j, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
            out[:, :, 3 + j, :] = 4 * (
                lam[None, :, a, None] * g[:, None, b, :] + lam[None, :, b, None] * g[:, None, a, :]
            )
        return out

    # -- evaluation helpers ---------------------------------------------------

    def p1_at_quad(self, q) -> np.ndarray:
        """Values of a P1 nodal field at element quadrature points, shape (M, Q, ...)."""
        q = np.asarray(q)
        return np.einsum("qk,mk...->mq...", self.p1_at_q, q[self.mesh.triangles])

    def p1_gradient(self, q) -> np.ndarray:
        """Elementwise-constant gradient of a P1 field, shape (M, 2)."""
        return np.einsum("mk,mkd->md", np.asarray(q)[self.mesh.triangles], self.grads)

    def p2_at_quad(self, u) -> np.ndarray:
        """Values of a P2 vector field (2 blocks) at quadrature points, shape (M, Q, 2)."""
        u = np.asarray(u).reshape(2, self.num_p2)
        loc = u[:, self.p2_dofs]  # (2, M, 6)
        return np.einsum("qk,cmk->mqc", self.p2_at_q, loc)

    def p2_grad_at_quad(self, u) -> np.ndarray:
        """Gradient ``G[i, j] = d u_i / d x_j`` of a P2 vector field, shape (M, Q, 2, 2)."""
        u = np.asarray(u).reshape(2, self.num_p2)
        loc = u[:, self.p2_dofs]
        return np.einsum("cmk,mqkd->mqcd", loc, self.p2_grads)

    def stiffness(self) -> sp.csr_matrix:
        """Unweighted P1 stiffness (cached)."""
        cached = getattr(self, "_stiffness", None)
        if cached is None:
            cached = self._stiffness = self.p1p1.matrix(self.local_stiffness)
        return cached

    def p1_mass(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix."""
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return self.p1p1.matrix(self.area[:, None, None] * ref[None])

    def p2_mass(self) -> sp.csr_matrix:
        """Consistent scalar P2 mass matrix (degree-4 quadrature, exact)."""
        cached = getattr(self, "_p2_mass", None)
        if cached is None:
            phi = self.p2_at_q
            blocks = np.einsum("mq,qi,qj->mij", self.qw, phi, phi)
            cached = self._p2_mass = self.p2p2.matrix(blocks)
        return cached

    def integrate(self, values_at_quad) -> float:
        return float(np.sum(self.qw * values_at_quad))


def spaces(mesh: Mesh) -> Spaces:
    """Cached :class:`Spaces` for ``mesh``."""
    s = mesh._cache.get("spaces")
    if s is None:
        s = Spaces(mesh)
        mesh._cache["spaces"] = s
    return s


@dataclass(frozen=True)
class LumpedMass:
    """Vertex weights of the lumped inner products on the domain and its boundary."""

    weights: np.ndarray
    boundary_weights: np.ndarray

    def inner(self, a, b) -> float:
        return float(np.sum(self.weights * a * b))

    def boundary_inner(self, a, b) -> float:
        return float(np.sum(self.boundary_weights * a * b))

    def norm(self, a) -> float:
        return float(np.sqrt(self.inner(a, a)))


def lumped_mass(mesh: Mesh, layout: DofLayout | None = None) -> LumpedMass:
    """Lumped P1 weights: one third of the incident triangle areas per vertex,
    half the incident boundary-edge lengths per boundary vertex."""
    if layout is not None and layout.num_vertices != mesh.num_vertices:
        raise InvalidStateError("layout does not belong to this mesh")
    s = spaces(mesh)
    return LumpedMass(s.lumped, s.boundary_lumped)


def nodal_interpolate(f, mesh: Mesh, layout: DofLayout | None = None) -> np.ndarray:
    """Nodal interpolant ``I_h f``: ``f(x, y)`` evaluated at every vertex.

    ``f`` may return scalars, or trailing-dimension arrays for tensor fields
    (e.g. shape ``(N, 3)`` for symmetric 2x2 tensors).
    """
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    out = np.asarray(f(x, y), dtype=float)
    if out.ndim == 0:
        out = np.full(mesh.num_vertices, float(out))
    if layout is not None and layout.components > 1 and out.ndim == 1:
        out = np.repeat(out[:, None], layout.components, axis=1)
    return out


def assemble_p1_stiffness(mesh: Mesh, coeff=1.0) -> sp.csr_matrix:
    """Weighted P1 stiffness ``∫ I_h[coeff] ∇φ_i · ∇φ_j``.

    ``coeff`` is a positive constant or a positive per-vertex array.
    """
    s = spaces(mesh)
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        if coeff <= 0:
            raise InvalidStateError(f"stiffness coefficient must be positive, got {float(coeff)}")
        return s.p1p1.matrix(float(coeff) * s.local_stiffness)
    if coeff.shape != (mesh.num_vertices,):
        raise InvalidStateError("coefficient must hold one value per vertex")
    if np.any(coeff <= 0):
        raise InvalidStateError(f"non-positive stiffness coefficient at {int(np.sum(coeff <= 0))} vertices")
    mean = coeff[mesh.triangles].mean(axis=1)
    return s.p1p1.matrix(mean[:, None, None] * s.local_stiffness)


def discrete_laplacian(mesh: Mesh, q, stiffness=None) -> np.ndarray:
    """Lumped Neumann Laplacian: ``(Δ_h q)(P) = -(K q)(P) / w(P)``."""
    s = spaces(mesh)
    q = np.asarray(q, dtype=float)
    if q.shape != (mesh.num_vertices,):
        raise InvalidStateError("q must hold one value per vertex")
    K = stiffness if stiffness is not None else s.stiffness()
    return -(K @ q) / s.lumped


def l2_norm(mesh: Mesh, q) -> float:
    """Exact L2 norm of a P1 field (consistent mass)."""
    q = np.asarray(q, dtype=float)
    return float(np.sqrt(q @ (spaces(mesh).p1_mass() @ q)))


def h1_seminorm(mesh: Mesh, q) -> float:
    s = spaces(mesh)
    g = s.p1_gradient(q)
    return float(np.sqrt(np.sum(s.area * np.sum(g * g, axis=1))))
