"""Self-supervised cloth loss: StVK membrane, dihedral bending, body collision
and gravity, each returning ``(energy, grad)`` with analytic gradients.

Gravity acts along ``-y``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .geometry import EDGE_AB, EDGE_BC, EDGE_CA, VERT_A, VERT_B, VERT_C, MeshProximity
from .mesh import RestState, TriMesh, compute_rest_state
from .rig import BodyModel, pose_capsules, skin_body


@dataclass(frozen=True)
class MaterialParams:
    density: float = 0.15
    mu: float = 20.0
    lambda_lame: float = 10.0
    bending_stiffness: float = 2e-5
    collision_stiffness: float = 1e4
    collision_margin: float = 0.003
    gravity_g: float = 9.81
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError("density must be positive")
        if min(self.mu, self.lambda_lame, self.bending_stiffness, self.collision_stiffness) < 0:
            raise ValueError("stiffnesses must be non-negative")
        if not self.collision_margin > 0:
            raise ValueError("collision margin must be positive")
        object.__setattr__(self, "loss_weights", tuple(float(v) for v in self.loss_weights))
        if len(self.loss_weights) != 4:
            raise ValueError("expected four loss weights")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "MaterialParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown material parameters: {sorted(unknown)}")
        return cls(**doc)


class CapsuleCollider:
    """Union of posed capsules with analytic signed distance."""

    def __init__(self, p0, p1, radii):
        self.p0 = np.ascontiguousarray(p0, dtype=np.float64).reshape(-1, 3)
        self.p1 = np.ascontiguousarray(p1, dtype=np.float64).reshape(-1, 3)
        self.radii = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)

    @classmethod
    def from_body(cls, body: BodyModel, pose) -> "CapsuleCollider":
        return cls(*pose_capsules(body, pose))

    def query(self, points):
        return kernels.capsule_sdf(np.ascontiguousarray(points, dtype=np.float64), self.p0, self.p1, self.radii)

    def penalty(self, x, stiffness, margin, grad=None):
        return kernels.capsule_collision(x, self.p0, self.p1, self.radii, stiffness, margin, grad)


class MeshCollider:
    """Posed body mesh; sign from angle-weighted pseudo-normals."""

    def __init__(self, mesh: TriMesh, vertices=None):
        self.mesh = mesh
        x = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        self.x = x
        self.proximity = MeshProximity(mesh, x)
        tri = x[mesh.faces]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        fn /= np.linalg.norm(fn, axis=1, keepdims=True)
        self.face_normals = fn
        vn = np.zeros_like(x)
        for k in range(3):
            u = tri[:, (k + 1) % 3] - tri[:, k]
            v = tri[:, (k + 2) % 3] - tri[:, k]
            cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vn, mesh.faces[:, k], ang[:, None] * fn)
        self.vertex_normals = vn
        en = np.zeros((len(mesh.edges), 3))
        for s in range(2):
            f = mesh.edge_faces[:, s]
            ok = f >= 0
            en[ok] += fn[f[ok]]
        self.edge_normals = en
        lookup = {}
        for i, (a, b) in enumerate(mesh.edges.tolist()):
            lookup[(a, b)] = i
        self._edge_lookup = lookup

    @classmethod
    def from_body(cls, body: BodyModel, pose) -> "MeshCollider":
        posed = skin_body(body, pose)
        return cls(body.body_mesh, posed.vertices)

    def _edge_index(self, a, b):
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        return np.array([self._edge_lookup[(int(i), int(j))] for i, j in zip(lo, hi)], dtype=np.int64)

    def query(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        face, _, q, feat, dist = self.proximity.query(points)
        f = self.mesh.faces[face]
        pseudo = self.face_normals[face].copy()
        for code, k in ((VERT_A, 0), (VERT_B, 1), (VERT_C, 2)):
            sel = feat == code
            pseudo[sel] = self.vertex_normals[f[sel, k]]
        for code, (i, j) in ((EDGE_AB, (0, 1)), (EDGE_BC, (1, 2)), (EDGE_CA, (2, 0))):
            sel = feat == code
            if np.any(sel):
                pseudo[sel] = self.edge_normals[self._edge_index(f[sel, i], f[sel, j])]
        diff = points - q
        sign = np.where(np.einsum("ij,ij->i", diff, pseudo) < 0, -1.0, 1.0)
        sd = sign * dist
        normal = np.empty_like(points)
        nz = dist > 0
        normal[nz] = sign[nz, None] * diff[nz] / dist[nz, None]
        pn = pseudo[~nz]
        normal[~nz] = pn / np.linalg.norm(pn, axis=1, keepdims=True)
        return sd, normal

    def penalty(self, x, stiffness, margin, grad=None):
        sd, normal = self.query(x)
        pen = np.maximum(0.0, margin - sd)
        if grad is not None:
            grad -= (2.0 * stiffness * pen)[:, None] * normal
        return float(stiffness * np.dot(pen, pen))


def stvk_energy(rest: RestState, mesh: TriMesh, x, params: MaterialParams = MaterialParams()):
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    e = kernels.stvk(x, mesh.faces, rest.rest_tangent_inverses, rest.rest_areas, params.mu,
                     params.lambda_lame, grad)
    return e, grad


def bending_energy(rest: RestState, mesh: TriMesh, x, params: MaterialParams = MaterialParams()):
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    e = kernels.bending(x, mesh.hinges, rest.rest_dihedrals, rest.hinge_weights, params.bending_stiffness, grad)
    return e, grad


def collision_energy(collider, x, params: MaterialParams = MaterialParams()):
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    e = collider.penalty(x, params.collision_stiffness, params.collision_margin, grad)
    return e, grad


def gravity_energy(masses, x, g: float = 9.81):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    grad[:, 1] = g * masses
    return float(g * np.dot(masses, x[:, 1])), grad


@dataclass
class EnergyModel:
    """Everything needed to evaluate the weighted physics loss on one garment."""

    mesh: TriMesh
    rest: RestState
    params: MaterialParams = field(default_factory=MaterialParams)

    @classmethod
    def build(cls, mesh: TriMesh, params: MaterialParams = MaterialParams()) -> "EnergyModel":
        return cls(mesh, compute_rest_state(mesh, params.density), params)

    def evaluate(self, x, collider, want_grad: bool = True):
        """Returns ``(loss, grad or None, per-energy breakdown)``."""
        return _weighted_sum(self.rest, self.mesh, collider, self.rest.vertex_masses, self.params, x, want_grad)


def total_loss(rest: RestState, mesh: TriMesh, collider, masses, params: MaterialParams, x):
    loss, grad, _ = _weighted_sum(rest, mesh, collider, masses, params, x, True)
    return loss, grad


def _weighted_sum(rest, mesh, collider, masses, params, x, want_grad):
    x = np.ascontiguousarray(x, dtype=np.float64)
    l1, l2, l3, l4 = params.loss_weights
    grad = np.zeros_like(x) if want_grad else None
    parts = {}
    scratch = np.zeros_like(x) if want_grad else None

    def add(name, lam, fn):
        if lam == 0.0:
            parts[name] = 0.0
            return 0.0
        if want_grad:
            scratch.fill(0.0)
        e = fn(scratch)
        if want_grad:
            grad.__iadd__(lam * scratch)
        parts[name] = e
        return lam * e

    loss = add("stvk", l1, lambda g: kernels.stvk(x, mesh.faces, rest.rest_tangent_inverses, rest.rest_areas,
                                                   params.mu, params.lambda_lame, g))
    loss += add("bending", l2, lambda g: kernels.bending(x, mesh.hinges, rest.rest_dihedrals, rest.hinge_weights,
                                                          params.bending_stiffness, g))
    loss += add("collision", l3, lambda g: collider.penalty(x, params.collision_stiffness,
                                                             params.collision_margin, g))
    if l4 != 0.0:
        parts["gravity"] = float(params.gravity_g * np.dot(masses, x[:, 1]))
        loss += l4 * parts["gravity"]
        if want_grad:
            grad[:, 1] += l4 * params.gravity_g * masses
    else:
        parts["gravity"] = 0.0
    return float(loss), grad, parts
