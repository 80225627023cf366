"""Skeleton hierarchy, pose parametrization, body skinning and pose sampling.

Poses are per-active-joint XYZ Euler triples (radians).  A bone rotation
``R = Rz(c) @ Ry(b) @ Rx(a)`` is applied in the bone's own rest frame, so
the posed world transform of bone ``i`` is

    posed[i] = posed[parent] @ inv(rest[parent]) @ rest[i] @ R_i

Internally bones carry their world motion ``posed @ inv(rest)`` so the zero
pose reproduces the rest transforms bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MalformedInputError
from .mesh import TriMesh


def euler_xyz(angles) -> np.ndarray:
    """3x3 rotation ``Rz(c) @ Ry(b) @ Rx(a)`` for ``angles = (a, b, c)``."""
    a, b, c = angles
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def affine_inverse(t):
    out = np.eye(4)
    r = t[:3, :3]
    if np.allclose(r @ r.T, np.eye(3), atol=1e-12):
        rinv = r.T
    else:
        rinv = np.linalg.inv(r)
    out[:3, :3] = rinv
    out[:3, 3] = -rinv @ t[:3, 3]
    return out


@dataclass(frozen=True)
class Capsule:
    bone: int
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"capsule radius must be positive, got {self.radius}")
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=np.float64))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Skeleton:
    names: tuple
    parents: tuple
    rest: np.ndarray                # (b, 4, 4) world-space bind transforms
    tails: np.ndarray               # (b, 3) bone segment end points, canonical pose
    active_joints: tuple            # bone indices carrying 3 rotational DOFs each
    limits: np.ndarray              # (p, 2) min/max per DOF
    rest_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        rest = np.asarray(self.rest, dtype=np.float64)
        limits = np.asarray(self.limits, dtype=np.float64).reshape(-1, 2)
        tails = np.asarray(self.tails, dtype=np.float64).reshape(-1, 3)
        b = len(self.parents)
        if rest.shape != (b, 4, 4) or tails.shape != (b, 3) or len(self.names) != b:
            raise DimensionError("bone arrays disagree on bone count")
        for i, p in enumerate(self.parents):
            if p is not None and not 0 <= p < i:
                raise MalformedInputError(f"bone {i} has parent {p}; bones must be topologically sorted")
        if len(limits) != 3 * len(self.active_joints):
            raise DimensionError(f"expected {3 * len(self.active_joints)} joint limits, got {len(limits)}")
        if np.any(limits[:, 0] > 0) or np.any(limits[:, 1] < 0):
            raise MalformedInputError("joint limits must bracket zero")
        object.__setattr__(self, "rest", rest)
        object.__setattr__(self, "limits", limits)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "rest_inv", np.stack([affine_inverse(t) for t in rest]))

    @property
    def n_bones(self) -> int:
        return len(self.parents)

    @property
    def pose_dim(self) -> int:
        return 3 * len(self.active_joints)

    def zero_pose(self) -> np.ndarray:
        return np.zeros(self.pose_dim)

    def bone_segments(self):
        """Canonical bone segments ``(heads, tails)``, each (b, 3)."""
        return self.rest[:, :3, 3].copy(), self.tails.copy()


@dataclass(frozen=True, eq=False)
class BodyModel:
    body_mesh: TriMesh
    skeleton: Skeleton
    body_skin_weights: np.ndarray   # (n_body, b) dense, rows sum to 1
    capsules: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.body_skin_weights, dtype=np.float64)
        if w.shape != (self.body_mesh.n_vertices, self.skeleton.n_bones):
            raise DimensionError(f"body skin weights have shape {w.shape}")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise MalformedInputError("body skin weights must sum to 1 per vertex")
        object.__setattr__(self, "body_skin_weights", w)


def _motions(skeleton: Skeleton, pose):
    theta = np.asarray(pose, dtype=np.float64)
    if theta.shape != (skeleton.pose_dim,):
        raise DimensionError(f"pose has shape {theta.shape}, expected ({skeleton.pose_dim},)")
    rot = [None] * skeleton.n_bones
    for k, bone in enumerate(skeleton.active_joints):
        if np.any(theta[3 * k:3 * k + 3] != 0):
            rot[bone] = theta[3 * k:3 * k + 3]
    motion = [None] * skeleton.n_bones   # None means exact identity
    for i, p in enumerate(skeleton.parents):
        g = None if p is None else motion[p]
        if rot[i] is not None:
            r = np.eye(4)
            r[:3, :3] = euler_xyz(rot[i])
            local = skeleton.rest[i] @ r @ skeleton.rest_inv[i]
            g = local if g is None else g @ local
        motion[i] = g
    return motion


def pose_to_joint_transforms(skeleton: Skeleton, pose) -> np.ndarray:
    motion = _motions(skeleton, pose)
    return np.stack([
        skeleton.rest[i].copy() if g is None else g @ skeleton.rest[i] for i, g in enumerate(motion)
    ])


def bone_motion(skeleton: Skeleton, pose) -> np.ndarray:
    """Per-bone world motion ``posed @ inv(rest)``; exactly identity at the zero pose."""
    motion = _motions(skeleton, pose)
    return np.stack([np.eye(4) if g is None else g for g in motion])


def skin_body(body: BodyModel, pose) -> TriMesh:
    theta = np.asarray(pose, dtype=np.float64)
    if not np.any(theta):
        return body.body_mesh
    g = bone_motion(body.skeleton, theta)
    x = body.body_mesh.vertices
    blend = np.einsum("vb,bij->vij", body.body_skin_weights, g[:, :3, :])
    y = np.einsum("vij,vj->vi", blend[:, :, :3], x) + blend[:, :, 3]
    return body.body_mesh.with_vertices(y)


def pose_capsules(body: BodyModel, pose):
    """World-space capsule endpoints (k, 3), (k, 3) and radii (k,) for a pose."""
    g = bone_motion(body.skeleton, pose)
    caps = body.capsules
    p0 = np.array([g[c.bone, :3, :3] @ c.p0 + g[c.bone, :3, 3] for c in caps]).reshape(-1, 3)
    p1 = np.array([g[c.bone, :3, :3] @ c.p1 + g[c.bone, :3, 3] for c in caps]).reshape(-1, 3)
    r = np.array([c.radius for c in caps], dtype=np.float64)
    return p0, p1, r


def curriculum_scale(epoch: int) -> float:
    return min(1.0, 0.1 * (1 + epoch // 100))


def pose_limits(skeleton: Skeleton, scale: float = 1.0):
    """Per-DOF sampling bounds shrunk by ``scale`` toward zero."""
    return scale * skeleton.limits[:, 0], scale * skeleton.limits[:, 1]


def sample_pose(skeleton: Skeleton, epoch: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = pose_limits(skeleton, curriculum_scale(int(epoch)))
    return rng.uniform(lo, hi)


def sample_poses(skeleton: Skeleton, epoch: int, rng: np.random.Generator, count: int) -> np.ndarray:
    return np.stack([sample_pose(skeleton, epoch, rng) for _ in range(count)])


# -- JSON scene description -------------------------------------------------

def _affine_from_12(values):
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (12,):
        raise MalformedInputError(f"rest transform needs 12 numbers, got {v.size}")
    t = np.eye(4)
    t[:3, :] = v.reshape(3, 4)
    return t


def skeleton_to_dict(skeleton: Skeleton, capsules=()) -> dict:
    bones = []
    for i, name in enumerate(skeleton.names):
        p = skeleton.parents[i]
        bones.append({
            "name": name,
            "parent": None if p is None else skeleton.names[p],
            "rest": skeleton.rest[i, :3, :].ravel().tolist(),
            "tail": skeleton.tails[i].tolist(),
        })
    return {
        "bones": bones,
        "active_joints": [skeleton.names[i] for i in skeleton.active_joints],
        "limits": skeleton.limits.tolist(),
        "capsules": [
            {"bone": skeleton.names[c.bone], "p0": c.p0.tolist(), "p1": c.p1.tolist(), "radius": c.radius}
            for c in capsules
        ],
    }


def skeleton_from_dict(doc: dict):
    """Parse a scene/skeleton document; returns ``(skeleton, capsules)``."""
    try:
        bones = doc["bones"]
        names = tuple(b["name"] for b in bones)
        index = {n: i for i, n in enumerate(names)}
        parents = tuple(None if b.get("parent") is None else index[b["parent"]] for b in bones)
        rest = np.stack([_affine_from_12(b["rest"]) for b in bones])
        tails = np.array([b.get("tail", b["rest"][3::4]) for b in bones], dtype=np.float64)
        active = tuple(index[n] for n in doc["active_joints"])
        limits = np.asarray(doc["limits"], dtype=np.float64)
        skeleton = Skeleton(names, parents, rest, tails, active, limits)
        capsules = tuple(
            Capsule(index[c["bone"]], c["p0"], c["p1"], float(c["radius"])) for c in doc.get("capsules", [])
        )
    except (KeyError, TypeError) as exc:
        raise MalformedInputError(f"bad skeleton document: missing or invalid field {exc}") from None
    return skeleton, capsules


def load_skeleton(path):
    return skeleton_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
