"""Triangle meshes, Wavefront OBJ I/O and rest-state precomputation."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegeneracyError, MalformedInputError, TopologyError

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangle mesh.

    ``edges`` holds unique undirected pairs (lower index first).  ``hinges``
    holds one row ``(v0, v1, a, b)`` per interior edge: the face containing
    the directed edge ``v0 -> v1`` has opposite vertex ``a``, the other face
    has opposite vertex ``b``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    edges: np.ndarray = field(init=False)
    edge_faces: np.ndarray = field(init=False)
    hinges: np.ndarray = field(init=False)
    hinge_edges: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MalformedInputError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MalformedInputError(f"faces must have shape (F, 3), got {f.shape}")
        if len(v) == 0 or len(f) == 0:
            raise MalformedInputError("mesh has no vertices or no faces")
        if f.min() < 0 or f.max() >= len(v):
            raise MalformedInputError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            bad = int(np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))[0])
            raise TopologyError(f"face {bad} repeats a vertex: {f[bad].tolist()}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        edges, edge_faces, hinges, hinge_edges = _build_topology(f)
        for arr in (edges, edge_faces, hinges, hinge_edges):
            arr.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_faces", edge_faces)
        object.__setattr__(self, "hinges", hinges)
        object.__setattr__(self, "hinge_edges", hinge_edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def interior_edges(self) -> np.ndarray:
        return self.edges[self.hinge_edges]

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(np.asarray(vertices, dtype=np.float64), self.faces)

    def face_normals(self, x=None) -> np.ndarray:
        x = self.vertices if x is None else x
        t = x[self.faces]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def vertex_normals(self, x=None) -> np.ndarray:
        x = self.vertices if x is None else x
        t = x[self.faces]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        out = np.zeros_like(x)
        for k in range(3):
            np.add.at(out, self.faces[:, k], n)
        norm = np.linalg.norm(out, axis=1, keepdims=True)
        return out / np.where(norm > 0, norm, 1.0)

    def bounding_box_diagonal(self, x=None) -> float:
        x = self.vertices if x is None else x
        return float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))


def _build_topology(faces):
    nf = len(faces)
    # directed half-edges (a -> b) with opposite vertex c
    a = faces[:, [0, 1, 2]].ravel()
    b = faces[:, [1, 2, 0]].ravel()
    c = faces[:, [2, 0, 1]].ravel()
    fid = np.repeat(np.arange(nf), 3)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    key = np.stack([lo, hi], axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max() > 2:
        e = edges[int(np.argmax(counts > 2))]
        raise TopologyError(f"non-manifold edge ({int(e[0])}, {int(e[1])}) has {int(counts.max())} incident faces")

    edge_faces = np.full((len(edges), 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv_sorted[1:] != inv_sorted[:-1]
    edge_faces[inv_sorted[first], 0] = fid[order[first]]
    edge_faces[inv_sorted[~first], 1] = fid[order[~first]]

    interior = np.flatnonzero(counts == 2)
    # half-edge slots for each interior edge
    h0 = order[first][np.isin(inv_sorted[first], interior)]
    h1 = order[~first]
    # both arrays are sorted by edge id, and every interior edge appears once in each
    hinges = np.stack([a[h0], b[h0], c[h0], c[h1]], axis=1).astype(np.int64)
    return edges.astype(np.int64), edge_faces, hinges, interior.astype(np.int64)


@dataclass(frozen=True, eq=False)
class RestState:
    """Rest-state quantities consumed by the energies and the metrics.

    ``rest_tangent_bases`` stores, per face, the 2x2 matrix whose columns are
    the two edge vectors ``x1 - x0`` and ``x2 - x0`` expressed in an
    isometric 2D frame of that face.  ``rest_tangent_inverses`` caches their
    inverses.  ``hinge_weights`` is the discrete-shells factor
    ``|e|^2 / (A1 + A2)`` per interior edge.
    """

    rest_edge_lengths: np.ndarray
    rest_areas: np.ndarray
    rest_dihedrals: np.ndarray
    rest_tangent_bases: np.ndarray
    rest_tangent_inverses: np.ndarray
    vertex_masses: np.ndarray
    hinge_weights: np.ndarray
    density: float

    @property
    def total_mass(self) -> float:
        return float(self.vertex_masses.sum())


def triangle_areas(x, faces):
    t = x[faces]
    return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)


def dihedral_angles(x, hinges):
    """Signed dihedral angle per hinge; zero for coplanar faces."""
    x0, x1, xa, xb = (x[hinges[:, k]] for k in range(4))
    e = x1 - x0
    n1 = np.cross(e, xa - x0)
    n2 = np.cross(-e, xb - x1)
    en = e / np.linalg.norm(e, axis=1, keepdims=True)
    sin = np.einsum("ij,ij->i", np.cross(n1, n2), en)
    cos = np.einsum("ij,ij->i", n1, n2)
    return np.arctan2(sin, cos)


def compute_rest_state(mesh: TriMesh, density: float = 0.15) -> RestState:
    if not density > 0:
        raise ValueError(f"density must be positive, got {density}")
    x = mesh.vertices
    areas = triangle_areas(x, mesh.faces)
    if np.any(areas < DEGENERATE_AREA):
        bad = int(np.flatnonzero(areas < DEGENERATE_AREA)[0])
        raise DegeneracyError(f"face {bad} {mesh.faces[bad].tolist()} is degenerate (area {areas[bad]:.3e} m^2)")

    t = x[mesh.faces]
    e1 = t[:, 1] - t[:, 0]
    e2 = t[:, 2] - t[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    u = e1 / l1[:, None]
    bases = np.zeros((len(areas), 2, 2))
    bases[:, 0, 0] = l1
    bases[:, 0, 1] = np.einsum("ij,ij->i", e2, u)
    bases[:, 1, 1] = 2.0 * areas / l1
    inverses = np.linalg.inv(bases)

    lengths = np.linalg.norm(x[mesh.edges[:, 1]] - x[mesh.edges[:, 0]], axis=1)
    masses = np.zeros(len(x))
    share = density * areas / 3.0
    for k in range(3):
        np.add.at(masses, mesh.faces[:, k], share)

    dihedrals = dihedral_angles(x, mesh.hinges)
    ef = mesh.edge_faces[mesh.hinge_edges]
    elen = lengths[mesh.hinge_edges]
    hinge_weights = elen**2 / (areas[ef[:, 0]] + areas[ef[:, 1]])

    out = RestState(lengths, areas, dihedrals, bases, inverses, masses, hinge_weights, float(density))
    for arr in (lengths, areas, dihedrals, bases, inverses, masses, hinge_weights):
        arr.setflags(write=False)
    return out


def load_obj(path) -> TriMesh:
    """Read the ``v`` and ``f`` records of an OBJ file.

    Polygons are fan-triangulated, ``/vt/vn`` suffixes are dropped and
    negative (relative) indices are resolved.
    """
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MalformedInputError("vertex record needs 3 coordinates", lineno)
                try:
                    verts.append([float(p) for p in parts[1:4]])
                except ValueError as exc:
                    raise MalformedInputError(f"bad vertex coordinate ({exc})", lineno) from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MalformedInputError("face record needs at least 3 vertices", lineno)
                idx = []
                for p in parts[1:]:
                    head = p.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MalformedInputError(f"bad face index {p!r}", lineno) from None
                    if i > 0:
                        i -= 1
                    elif i < 0:
                        i += len(verts)
                    else:
                        raise MalformedInputError("face index 0 is invalid in OBJ", lineno)
                    if not 0 <= i < len(verts):
                        raise MalformedInputError(f"face index {p} refers to an undefined vertex", lineno)
                    idx.append(i)
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not faces:
        raise MalformedInputError(f"{path}: no vertices or faces found")
    return TriMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def save_obj(mesh: TriMesh, path, vertices=None) -> None:
    x = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    if len(x) == 0 or mesh.n_faces == 0:
        raise MalformedInputError("refusing to write an empty mesh")
    lines = ["v %.9g %.9g %.9g\n" % tuple(p) for p in x.tolist()]
    lines += ["f %d %d %d\n" % (a + 1, b + 1, c + 1) for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def subdivide(mesh: TriMesh, vertices=None):
    """Midpoint 1-to-4 subdivision.

    Returns the new mesh and a sparse description of each new vertex as
    ``(parents, coefficients)`` rows of width 2 so per-vertex data can be
    carried over linearly.
    """
    x = mesh.vertices if vertices is None else vertices
    n = len(x)
    mid = n + np.arange(len(mesh.edges))
    new_x = np.concatenate([x, 0.5 * (x[mesh.edges[:, 0]] + x[mesh.edges[:, 1]])])
    lookup = {(int(a), int(b)): int(m) for (a, b), m in zip(mesh.edges, mid)}

    def m(a, b):
        return lookup[(a, b) if a < b else (b, a)]

    faces = []
    for a, b, c in mesh.faces.tolist():
        ab, bc, ca = m(a, b), m(b, c), m(c, a)
        faces += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    parents = np.concatenate([np.stack([np.arange(n), np.arange(n)], 1), mesh.edges])
    coeffs = np.concatenate([np.tile([1.0, 0.0], (n, 1)), np.full((len(mesh.edges), 2), 0.5)])
    return TriMesh(new_x, np.array(faces, dtype=np.int64)), parents, coeffs
