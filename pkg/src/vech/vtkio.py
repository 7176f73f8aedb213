"""Legacy-VTK ASCII field files and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidStateError
from .fespace import spaces
from .matfun import frobenius
from .mesh import rebuild
from .state import State

CHECKPOINT_MAGIC = b"VECH"
CHECKPOINT_VERSION = 1
_FMT = "%.17g"


class CheckpointVersionError(InvalidStateError):
    def __init__(self, found, expected=CHECKPOINT_VERSION):
        super().__init__(f"checkpoint version {found} is not supported (this build reads version {expected})")
        self.found = found
        self.expected = expected


# -- VTK ---------------------------------------------------------------------------


def write_vtk(path, points, triangles, point_data=None, title="vech"):
    """Unstructured grid of triangles with point scalars ``(N,)`` and
    vectors ``(N, 2)`` or ``(N, 3)``; values keep 17 significant digits."""
    points = np.asarray(points, float)
    triangles = np.asarray(triangles, np.int64)
    n = len(points)
    pts3 = np.zeros((n, 3))
    pts3[:, : points.shape[1]] = points
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title.splitlines()[0] if title else 'vech'}\nASCII\n")
        fh.write(f"DATASET UNSTRUCTURED_GRID\nPOINTS {n} double\n")
        np.savetxt(fh, pts3, fmt=_FMT)
        fh.write(f"CELLS {len(triangles)} {4 * len(triangles)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(triangles), 3), triangles]), fmt="%d")
        fh.write(f"CELL_TYPES {len(triangles)}\n")
        np.savetxt(fh, np.full(len(triangles), 5), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {n}\n")
            for name, values in point_data.items():
                values = np.asarray(values, float)
                if values.shape == (n,):
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    np.savetxt(fh, values, fmt=_FMT)
                elif values.ndim == 2 and values.shape[0] == n and values.shape[1] in (2, 3):
                    vec = np.zeros((n, 3))
                    vec[:, : values.shape[1]] = values
                    fh.write(f"VECTORS {name} double\n")
                    np.savetxt(fh, vec, fmt=_FMT)
                else:
                    raise ValueError(f"point field {name!r} has shape {values.shape}")
    return path


def read_vtk(path):
    """Inverse of :func:`write_vtk`: ``(points (N, 3), triangles, point_data)``."""
    tokens = Path(path).read_text().split()
    pos = 0

    def take(k):
        nonlocal pos
        out = tokens[pos : pos + k]
        pos += k
        return out

    while tokens[pos] != "POINTS":
        pos += 1
    pos += 1
    n = int(take(2)[0])
    points = np.array(take(3 * n), float).reshape(n, 3)
    assert take(1)[0] == "CELLS"
    m, _ = map(int, take(2))
    cells = np.array(take(4 * m), np.int64).reshape(m, 4)[:, 1:]
    assert take(1)[0] == "CELL_TYPES"
    take(1 + m)
    data = {}
    if pos < len(tokens) and tokens[pos] == "POINT_DATA":
        take(2)
        while pos < len(tokens):
            kind, name = take(2)
            if kind == "SCALARS":
                take(4)  # type, ncomp, LOOKUP_TABLE default
                data[name] = np.array(take(n), float)
            elif kind == "VECTORS":
                take(1)
                data[name] = np.array(take(3 * n), float).reshape(n, 3)
            else:
                raise ValueError(f"unsupported VTK section {kind}")
    return points, cells, data


def state_point_data(state: State, kappa=None) -> dict:
    """Point fields written for a state: scalars, the P2 velocity at the
    vertices, the tensor components and ``|T_el| = κ |B - I|``."""
    n = state.mesh.num_vertices
    n2 = spaces(state.mesh).num_p2
    v = state.v.reshape(2, n2)[:, :n].T
    dev = state.B - np.array([1.0, 0.0, 1.0])
    tel = frobenius(dev) * (1.0 if kappa is None else np.asarray(kappa, float))
    return {
        "phi": state.phi,
        "mu": state.mu,
        "sigma": state.sigma,
        "p": state.pressure,
        "v": v,
        "B_xx": state.B[:, 0],
        "B_xy": state.B[:, 1],
        "B_yy": state.B[:, 2],
        "T_el": tel,
    }


def write_state_vtk(path, state: State, kappa=None, title=None):
    title = title or f"vech t={state.t!r} step={state.step}"
    return write_vtk(path, state.mesh.vertices, state.mesh.triangles, state_point_data(state, kappa), title)


# -- checkpoints -----------------------------------------------------------------


_ARRAYS = ("phi", "mu", "sigma", "pressure", "v", "B")


def write_checkpoint(path, state: State, extra: dict | None = None):
    """``VECH`` + u32 version + u32 header length + JSON header + float64 blocks.

    The header carries the mesh refinement history (enough to rebuild the
    identical mesh), the dof layouts and the array table.
    """
    mesh = state.mesh
    table, blobs, offset = [], [], 0
    for name in _ARRAYS:
        arr = np.ascontiguousarray(getattr(state, name), dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "t": state.t,
        "step": state.step,
        "mesh": {
            "box": [list(side) for side in mesh.box],
            "coarse_n": mesh.coarse_n,
            "requested": sorted([int(a), int(b)] for a, b in mesh.requested),
            "coarsen_count": sorted([int(a), int(b), int(c)] for (a, b), c in mesh.coarsen_count.items()),
            "num_vertices": mesh.num_vertices,
            "num_triangles": mesh.num_triangles,
        },
        "layouts": {"p1": mesh.num_vertices, "p2": spaces(mesh).num_p2, "velocity": "2 blocks over p2 nodes",
                    "tensor": "xx, xy, yy per vertex"},
        "arrays": table,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)
    return path


def read_checkpoint_header(path) -> dict:
    with Path(path).open("rb") as fh:
        return _header(fh)


def _header(fh):
    if fh.read(4) != CHECKPOINT_MAGIC:
        raise InvalidStateError("not a checkpoint file (bad magic)")
    version, length = struct.unpack("<II", fh.read(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(version)
    return json.loads(fh.read(length))


def read_checkpoint(path):
    """Returns ``(state, header)`` with the mesh rebuilt from its history."""
    with Path(path).open("rb") as fh:
        header = _header(fh)
        payload = fh.read()
    m = header["mesh"]
    mesh = rebuild(m["box"], m["coarse_n"], [tuple(k) for k in m["requested"]],
                   {(a, b): c for a, b, c in m["coarsen_count"]})
    if mesh.num_vertices != m["num_vertices"] or mesh.num_triangles != m["num_triangles"]:
        raise InvalidStateError("rebuilt mesh does not match the checkpoint")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = np.frombuffer(payload, "<f8", count, entry["offset"]).reshape(entry["shape"]).copy()
    state = State(mesh, t=header["t"], step=header["step"], **arrays)
    return state, header
