"""Conforming triangulations of a square with newest-vertex bisection.

The macro mesh is a criss-cross grid: every square cell is split into four
right-isosceles triangles about its centre.  Each triangle is stored with its
newest vertex first, so that the refinement edge (the hypotenuse) is always
``(tri[1], tri[2])``.  Bisecting the hypotenuse of a right-isosceles triangle
yields two right-isosceles children, hence every mesh produced here is
non-obtuse.

Triangles are identified by a bisection-tree key ``(macro_id, path)`` where
``path`` starts at 1 for a macro triangle and appends one bit per bisection.
Vertices carry exact integer lattice coordinates, which makes field transfer
between nested meshes a matter of exact lookups plus local evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

# lattice units per macro cell side; midpoints stay integral for ~2*24 levels
_LATTICE_BITS = 24


@dataclass(frozen=True)
class RefinementSpec:
    """Resolution targets for interface-driven refinement."""

    coarse_n: int
    fine_n: int
    band_delta: float = 0.075

    def __post_init__(self):
        ratio = self.fine_n // self.coarse_n
        if self.coarse_n < 1 or ratio * self.coarse_n != self.fine_n or ratio & (ratio - 1):
            raise ValueError("fine_n must be coarse_n times a power of 2")
        if not 0.0 < self.band_delta < 1.0:
            raise ValueError("band_delta must lie in (0, 1)")

    @property
    def fine_level(self) -> int:
        """Bisection level whose diameter matches a fine_n x fine_n grid."""
        return 2 * int(round(np.log2(self.fine_n // self.coarse_n)))


@dataclass(eq=False)
class Mesh:
    """Immutable conforming triangulation with its bisection-tree bookkeeping.

    Attributes
    ----------
    vertices : (N, 2) float array
    triangles : (M, 3) int array, newest vertex first, counter-clockwise
    boundary_edges : (E, 2) int array
    levels : (M,) int array, bisection depth of each triangle
    keys : list of (macro_id, path) tree keys, one per triangle
    lattice : (N, 2) int64 array of exact vertex coordinates
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    levels: np.ndarray
    keys: list
    lattice: np.ndarray
    box: tuple
    coarse_n: int
    requested: frozenset = frozenset()
    coarsen_count: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def key_index(self) -> dict:
        idx = self._cache.get("key_index")
        if idx is None:
            idx = {k: i for i, k in enumerate(self.keys)}
            self._cache["key_index"] = idx
        return idx

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lens = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return np.max(lens, axis=0)

    def max_angles(self) -> np.ndarray:
        """Largest interior angle of every triangle, in degrees."""
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return np.max(angles, axis=0)

    def edges(self):
        """Unique edges and the triangle-to-edge map.

        Local edge ``j`` of a triangle is opposite to local vertex ``j``.
        Returns ``(edges, tri_edges, counts)`` where ``counts`` holds the
        number of triangles sharing each edge.
        """
        cached = self._cache.get("edges")
        if cached is None:
            t = self.triangles
            local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
            local = np.sort(local, axis=1)
            edges, inverse, counts = np.unique(local, axis=0, return_inverse=True, return_counts=True)
            cached = (edges, inverse.reshape(-1, 3), counts)
            self._cache["edges"] = cached
        return cached

    def is_conforming(self) -> bool:
        _, _, counts = self.edges()
        if np.any(counts > 2):
            return False
        edges, _, counts = self.edges()
        boundary = {tuple(e) for e in edges[counts == 1]}
        registered = {tuple(sorted(e)) for e in self.boundary_edges.tolist()}
        return boundary == registered and self._boundary_on_box(edges[counts == 1])

    def _boundary_on_box(self, bedges) -> bool:
        (x0, x1), (y0, y1) = self.box
        p = self.vertices[bedges]
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        on_x = (np.abs(p[..., 0] - x0) < tol) | (np.abs(p[..., 0] - x1) < tol)
        on_y = (np.abs(p[..., 1] - y0) < tol) | (np.abs(p[..., 1] - y1) < tol)
        same_side = (on_x[:, 0] & on_x[:, 1] & (np.abs(p[:, 0, 0] - p[:, 1, 0]) < tol)) | (
            on_y[:, 0] & on_y[:, 1] & (np.abs(p[:, 0, 1] - p[:, 1, 1]) < tol)
        )
        length = np.linalg.norm(p[:, 0] - p[:, 1], axis=1).sum()
        return bool(np.all(same_side)) and abs(length - 2 * (x1 - x0 + y1 - y0)) < tol * 10

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def same_topology(self, other: "Mesh") -> bool:
        return self.keys == other.keys

    def __repr__(self):
        return f"Mesh({self.num_vertices} vertices, {self.num_triangles} triangles)"


def _lattice_scale(box, n):
    (x0, x1), _ = box
    return (x1 - x0) / (n * 2**_LATTICE_BITS)


def _macro_cells(n):
    """Lattice geometry of the criss-cross macro triangles (newest vertex first)."""
    u = 2**_LATTICE_BITS
    tris = []
    for j in range(n):
        for i in range(n):
            p00 = (i * u, j * u)
            p10 = ((i + 1) * u, j * u)
            p11 = ((i + 1) * u, (j + 1) * u)
            p01 = (i * u, (j + 1) * u)
            c = (i * u + u // 2, j * u + u // 2)
            tris.extend([(c, p00, p10), (c, p10, p11), (c, p11, p01), (c, p01, p00)])
    return tris


class _Builder:
    """Mutable bisection state used while (re)building a mesh."""

    def __init__(self, n):
        self.n = n
        self.coords = []
        self.vid = {}
        self.leaves = {}
        self.edge_map = {}
        for m, tri in enumerate(_macro_cells(n)):
            ids = tuple(self._vertex(p) for p in tri)
            self._add_leaf((m, 1), ids)

    def _vertex(self, p):
        v = self.vid.get(p)
        if v is None:
            v = len(self.coords)
            self.vid[p] = v
            self.coords.append(p)
        return v

    def _add_leaf(self, key, ids):
        self.leaves[key] = ids
        n, a, b = ids
        for e in ((n, a), (a, b), (b, n)):
            self.edge_map.setdefault(e if e[0] < e[1] else (e[1], e[0]), []).append(key)

    def _remove_leaf(self, key):
        n, a, b = self.leaves.pop(key)
        for e in ((n, a), (a, b), (b, n)):
            self.edge_map[e if e[0] < e[1] else (e[1], e[0])].remove(key)

    def _split(self, key):
        n, a, b = self.leaves[key]
        pa, pb = self.coords[a], self.coords[b]
        m = self._vertex(((pa[0] + pb[0]) // 2, (pa[1] + pb[1]) // 2))
        self._remove_leaf(key)
        macro, path = key
        self._add_leaf((macro, 2 * path), (m, n, a))
        self._add_leaf((macro, 2 * path + 1), (m, b, n))

    def bisect(self, key):
        """Bisect a leaf, first bisecting neighbours as needed for conformity."""
        while key in self.leaves:
            _, a, b = self.leaves[key]
            edge = (a, b) if a < b else (b, a)
            others = [k for k in self.edge_map[edge] if k != key]
            if not others:
                self._split(key)
                return
            nb = others[0]
            _, na, nb_b = self.leaves[nb]
            if {na, nb_b} == {a, b}:
                self._split(key)
                self._split(nb)
                return
            self.bisect(nb)

    def finish(self, box, requested, coarsen_count):
        keys = sorted(self.leaves)
        lattice = np.array(self.coords, dtype=np.int64)
        # canonical vertex order: row-major on the lattice
        order = np.lexsort((lattice[:, 0], lattice[:, 1]))
        renum = np.empty(len(order), dtype=np.int64)
        renum[order] = np.arange(len(order))
        tris = renum[np.array([self.leaves[k] for k in keys], dtype=np.int64)]
        lattice = lattice[order]
        scale = _lattice_scale(box, self.n)
        verts = np.empty(lattice.shape, dtype=float)
        verts[:, 0] = box[0][0] + lattice[:, 0] * scale
        verts[:, 1] = box[1][0] + lattice[:, 1] * scale
        bedges = sorted(e for e, owners in self.edge_map.items() if len(owners) == 1)
        bedges = np.sort(renum[np.array(bedges, dtype=np.int64)], axis=1) if bedges else np.zeros((0, 2), int)
        bedges = bedges[np.lexsort((bedges[:, 1], bedges[:, 0]))]
        levels = np.array([p.bit_length() - 1 for _, p in keys], dtype=np.int64)
        return Mesh(
            vertices=verts,
            triangles=tris,
            boundary_edges=bedges,
            levels=levels,
            keys=keys,
            lattice=lattice,
            box=box,
            coarse_n=self.n,
            requested=frozenset(requested),
            coarsen_count=dict(coarsen_count),
        )


def _build(box, n, requested, coarsen_count=None) -> Mesh:
    b = _Builder(n)
    # one pass per level; closure may split requested nodes early
    pending = sorted(k for k in requested if k in b.leaves)
    while pending:
        for key in pending:
            b.bisect(key)
        pending = sorted(k for k in requested if k in b.leaves)
    return b.finish(box, requested, coarsen_count or {})


def build_macro_mesh(box=((-5.0, 5.0), (-5.0, 5.0)), n: int = 32) -> Mesh:
    """Criss-cross grid of ``n x n`` squares, each split into 4 triangles.

    Returns a mesh with ``(n+1)**2 + n**2`` vertices and ``4 n**2`` triangles.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    box = tuple(tuple(float(c) for c in side) for side in box)
    (x0, x1), (y0, y1) = box
    if not np.isclose(x1 - x0, y1 - y0) or x1 <= x0:
        raise ValueError("box must be a non-degenerate square")
    return _build(box, n, frozenset())


def _descendants_to_level(key, level):
    macro, path = key
    out = []
    frontier = [path]
    while frontier:
        nxt = []
        for p in frontier:
            if p.bit_length() - 1 < level:
                out.append((macro, p))
                nxt.extend((2 * p, 2 * p + 1))
        frontier = nxt
    return out


def refine_to_indicator(mesh: Mesh, marked, spec: RefinementSpec) -> Mesh:
    """Adapt ``mesh`` so every marked triangle reaches the fine level.

    Marked triangles are bisected (with conforming closure) until their
    diameter matches a ``fine_n`` grid.  A bisection whose two children are
    unmarked leaves for two consecutive calls is undone, so the mesh relaxes
    toward the coarse grid away from the marked region.  Returns ``mesh``
    itself when nothing changes.
    """
    marked = {int(i) for i in marked}
    if not marked and not mesh.requested:
        return mesh
    level = spec.fine_level
    requested = set(mesh.requested)
    marked_keys = {mesh.keys[i] for i in marked}
    for key in marked_keys:
        if key[1].bit_length() - 1 < level:
            requested.update(_ancestors(key))
            requested.update(_descendants_to_level(key, level))

    counts = {}
    leaf_set = mesh.key_index()
    for node in mesh.requested:
        macro, path = node
        kids = ((macro, 2 * path), (macro, 2 * path + 1))
        if all(k in leaf_set for k in kids) and not any(k in marked_keys for k in kids):
            c = mesh.coarsen_count.get(node, 0) + 1
            if c >= 2:
                requested.discard(node)
            else:
                counts[node] = c
    if requested == set(mesh.requested):
        if counts == mesh.coarsen_count:
            return mesh
        return replace(mesh, coarsen_count=counts, _cache=mesh._cache)
    new = _build(mesh.box, mesh.coarse_n, requested, counts)
    if new.same_topology(mesh):
        return replace(mesh, requested=new.requested, coarsen_count=counts, _cache=mesh._cache)
    return new


def _ancestors(key):
    macro, path = key
    out = []
    path >>= 1
    while path >= 1:
        out.append((macro, path))
        path >>= 1
    return out


def bisect_marked(mesh: Mesh, marked, max_level: int) -> Mesh:
    """Bisect each marked triangle once (if below ``max_level``), with closure."""
    requested = set(mesh.requested)
    for i in marked:
        key = mesh.keys[int(i)]
        if key[1].bit_length() - 1 < max_level:
            requested.add(key)
            requested.update(_ancestors(key))
    if requested == set(mesh.requested):
        return mesh
    return _build(mesh.box, mesh.coarse_n, requested, mesh.coarsen_count)


def rebuild(box, coarse_n, requested, coarsen_count=None) -> Mesh:
    """Reconstruct a mesh from its stored refinement history."""
    box = tuple(tuple(float(c) for c in side) for side in box)
    return _build(box, coarse_n, frozenset(requested), coarsen_count or {})


def interface_band(mesh: Mesh, phi, band_delta: float) -> np.ndarray:
    """Triangles with at least one vertex where ``|phi| <= 1 - band_delta``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.num_vertices,):
        raise ValueError("phi must hold one value per vertex")
    near = np.abs(phi) <= 1.0 - band_delta
    return np.flatnonzero(near[mesh.triangles].any(axis=1))


def sign_change(mesh: Mesh, phi) -> np.ndarray:
    """Triangles across which ``phi`` changes sign."""
    v = np.asarray(phi)[mesh.triangles]
    return np.flatnonzero((v.max(axis=1) > 0) & (v.min(axis=1) < 0))


# -- field transfer between nested meshes -------------------------------------


def p2_nodes(mesh: Mesh):
    """Doubled lattice coordinates of vertices and edge midpoints (P2 nodes)."""
    edges, tri_edges, _ = mesh.edges()
    lat2 = np.vstack([2 * mesh.lattice, mesh.lattice[edges[:, 0]] + mesh.lattice[edges[:, 1]]])
    return lat2, tri_edges


def _match(old_keys, new_keys):
    """Index into ``old_keys`` for each row of ``new_keys`` (-1 if absent)."""
    both = np.vstack([old_keys, new_keys])
    _, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.ravel()
    lookup = np.full(inv.max() + 1, -1, dtype=np.int64)
    lookup[inv[: len(old_keys)]] = np.arange(len(old_keys))
    return lookup[inv[len(old_keys):]]


def _containing_old(old: Mesh, new: Mesh):
    """Old triangle containing each new triangle, or -1 if the new one is coarser."""
    old_idx = old.key_index()
    out = np.full(new.num_triangles, -1, dtype=np.int64)
    for i, (macro, path) in enumerate(new.keys):
        p = path
        while p >= 1:
            j = old_idx.get((macro, p))
            if j is not None:
                out[i] = j
                break
            p >>= 1
    return out


def _barycentric(old: Mesh, tri_idx, points):
    p = old.vertices[old.triangles[tri_idx]]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = points - p[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def transfer(old: Mesh, new: Mesh, p1_fields=(), p2_fields=()):
    """Interpolate fields from ``old`` onto the nested mesh ``new``.

    ``p1_fields`` are arrays with leading dimension ``old.num_vertices``;
    ``p2_fields`` have leading dimension equal to the number of P2 nodes
    (vertices first, then edges in :meth:`Mesh.edges` order).  Nodes shared by
    both meshes are copied exactly; new nodes are evaluated in the old
    triangle that contains them.
    """
    if old is new or old.keys == new.keys:
        return [np.array(f) for f in p1_fields], [np.array(f) for f in p2_fields]
    container = _containing_old(old, new)
    out1, out2 = [], []

    if p1_fields:
        hit = _match(2 * old.lattice, 2 * new.lattice)
        miss = np.flatnonzero(hit < 0)
        owner, tri_of = _node_owner(new, miss, container, vertex_nodes=True)
        lam = _barycentric(old, container[owner], new.vertices[miss]) if len(miss) else np.zeros((0, 3))
        for f in p1_fields:
            f = np.asarray(f)
            g = np.empty((new.num_vertices,) + f.shape[1:], dtype=f.dtype)
            g[hit >= 0] = f[hit[hit >= 0]]
            if len(miss):
                vals = f[old.triangles[container[owner]]]
                g[miss] = np.einsum("nk,nk...->n...", lam, vals)
            out1.append(g)

    if p2_fields:
        old_lat2, old_te = p2_nodes(old)
        new_lat2, new_te = p2_nodes(new)
        hit = _match(old_lat2, new_lat2)
        miss = np.flatnonzero(hit < 0)
        owner, _ = _node_owner(new, miss, container, vertex_nodes=False)
        tri = container[owner]
        pts = new_lat2[miss].astype(float) * 0.5
        scale = _lattice_scale(new.box, new.coarse_n)
        pts = np.column_stack([new.box[0][0] + pts[:, 0] * scale, new.box[1][0] + pts[:, 1] * scale])
        lam = _barycentric(old, tri, pts) if len(miss) else np.zeros((0, 3))
        basis = p2_basis_values(lam)
        nv_old = old.num_vertices
        old_dofs = np.hstack([old.triangles, nv_old + old_te])
        for f in p2_fields:
            f = np.asarray(f)
            g = np.empty((len(new_lat2),) + f.shape[1:], dtype=f.dtype)
            g[hit >= 0] = f[hit[hit >= 0]]
            if len(miss):
                vals = f[old_dofs[tri]]
                g[miss] = np.einsum("nk,nk...->n...", basis, vals)
            out2.append(g)
    return out1, out2


def _node_owner(new: Mesh, nodes, container, vertex_nodes):
    """A new triangle with a known old container that owns each node."""
    if len(nodes) == 0:
        return np.zeros(0, dtype=np.int64), None
    if vertex_nodes:
        local = new.triangles
    else:
        _, tri_edges, _ = new.edges()
        local = np.hstack([new.triangles, new.num_vertices + tri_edges])
    ok = container >= 0
    tri_ids = np.repeat(np.arange(new.num_triangles), local.shape[1])
    flat = local.ravel()
    sel = ok[tri_ids]
    owner_of = np.full(flat.max() + 1, -1, dtype=np.int64)
    owner_of[flat[sel]] = tri_ids[sel]
    owner = owner_of[nodes]
    if np.any(owner < 0):
        raise RuntimeError("new node without a containing old triangle; meshes are not nested")
    return owner, local


def p2_basis_values(lam):
    """P2 Lagrange basis at barycentric points: 3 vertex then 3 edge functions.

    Edge function ``j`` lives on the edge opposite local vertex ``j``.
    """
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ],
        axis=-1,
    )


def write_vtk_mesh(mesh: Mesh, path, point_data=None, title="vech mesh"):
    """Legacy-VTK ASCII unstructured grid (triangles, cell type 5)."""
    from .vtkio import write_vtk

    write_vtk(path, mesh.vertices, mesh.triangles, point_data or {}, title=title)
