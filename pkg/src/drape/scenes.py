"""Procedural test scenes: capsule-skinned articulated bodies with loose garments.

All scenes use metres, ``+y`` up, and place the body at standing height so
gravity potential is measured from the floor.
"""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import DrapeError, MalformedInputError
from .mesh import TriMesh, load_obj
from .rig import BodyModel, Capsule, Skeleton, pose_capsules, skeleton_from_dict, skeleton_to_dict

SCENES = ("capsule-arm-sleeve", "capsule-biped-skirt", "capsule-biped-poncho")
MARGIN = 0.003


def _translation(p):
    t = np.eye(4)
    t[:3, 3] = p
    return t


def _skeleton(bones, active, limits):
    names = tuple(b[0] for b in bones)
    index = {n: i for i, n in enumerate(names)}
    parents = tuple(None if b[1] is None else index[b[1]] for b in bones)
    rest = np.stack([_translation(b[2]) for b in bones])
    tails = np.array([b[3] for b in bones], dtype=np.float64)
    return Skeleton(names, parents, rest, tails, tuple(index[a] for a in active), np.asarray(limits, dtype=np.float64))


def grid_tube(points_fn, around: int, along: int, closed: bool = True) -> TriMesh:
    """Tube-topology grid: ``points_fn(u, v)`` with ``u`` around in [0, 1), ``v`` along in [0, 1]."""
    u = np.arange(around) / around
    v = np.linspace(0.0, 1.0, along)
    uu, vv = np.meshgrid(u, v)
    x = points_fn(uu.ravel(), vv.ravel())
    faces = []
    for i in range(along - 1):
        for j in range(around if closed else around - 1):
            a = i * around + j
            b = i * around + (j + 1) % around
            c = (i + 1) * around + (j + 1) % around
            d = (i + 1) * around + j
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(x, np.array(faces, dtype=np.int64))


def capsule_mesh(p0, p1, radius, around: int = 16, cap_rings: int = 4) -> TriMesh:
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length if length > 0 else np.array([0.0, 1.0, 0.0])
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    rings = []
    for k in range(1, cap_rings + 1):
        a = -np.pi / 2 + k * (np.pi / 2) / cap_rings
        rings.append((p0, np.sin(a), np.cos(a)))
    start = 0 if length > 0 else 1
    for k in range(start, cap_rings):
        a = k * (np.pi / 2) / cap_rings
        rings.append((p1, np.sin(a), np.cos(a)))
    phi = 2 * np.pi * np.arange(around) / around
    circle = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    verts = [p0 - radius * axis]
    for centre, s, c in rings:
        verts.extend(centre + radius * (s * axis + c * circle))
    verts.append(p1 + radius * axis)
    verts = np.array(verts)
    faces = []
    nr = len(rings)
    for j in range(around):
        faces.append((0, 1 + (j + 1) % around, 1 + j))
    for r in range(nr - 1):
        base = 1 + r * around
        for j in range(around):
            a, b = base + j, base + (j + 1) % around
            c, d = b + around, a + around
            faces += [(a, b, c), (a, c, d)]
    top = len(verts) - 1
    base = 1 + (nr - 1) * around
    for j in range(around):
        faces.append((top, base + j, base + (j + 1) % around))
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def body_from_capsules(skeleton: Skeleton, capsules) -> BodyModel:
    verts, faces, weights = [], [], []
    offset = 0
    for cap in capsules:
        m = capsule_mesh(cap.p0, cap.p1, cap.radius)
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        w = np.zeros((m.n_vertices, skeleton.n_bones))
        w[:, cap.bone] = 1.0
        weights.append(w)
        offset += m.n_vertices
    mesh = TriMesh(np.concatenate(verts), np.concatenate(faces))
    return BodyModel(mesh, skeleton, np.concatenate(weights), tuple(capsules))


def scale_body(body: BodyModel, factor: float) -> BodyModel:
    """Same rig with every capsule radius multiplied by ``factor``."""
    caps = tuple(replace(c, radius=c.radius * factor) for c in body.capsules)
    return body_from_capsules(body.skeleton, caps)


def check_clearance(garment: TriMesh, body: BodyModel, margin: float = MARGIN) -> float:
    """Smallest garment-to-body signed distance at the zero pose; raises if below ``margin``."""
    from .physics import CapsuleCollider
    collider = CapsuleCollider(*pose_capsules(body, body.skeleton.zero_pose()))
    sd, _ = collider.query(garment.vertices)
    worst = float(sd.min())
    if worst < margin:
        raise DrapeError(f"garment vertex {int(np.argmin(sd))} starts {worst:.4f} m from the body (< {margin})")
    return worst


# -- built-in scenes ---------------------------------------------------------

def _arm_sleeve(around=24, along=48):
    bones = [
        ("torso", None, (0.0, 1.10, 0.0), (0.0, 1.32, 0.0)),
        ("upper_arm", "torso", (0.18, 1.40, 0.0), (0.48, 1.40, 0.0)),
        ("forearm", "upper_arm", (0.48, 1.40, 0.0), (0.74, 1.40, 0.0)),
    ]
    limits = [(-0.8, 0.8), (-1.0, 1.0), (-1.0, 1.2),      # shoulder: twist, swing, raise
              (-0.5, 0.5), (-2.2, 0.0), (-0.2, 0.2)]      # elbow: twist, flexion, side
    skel = _skeleton(bones, ["upper_arm", "forearm"], limits)
    caps = (
        Capsule(0, (0.0, 1.00, 0.0), (0.0, 1.32, 0.0), 0.13),
        Capsule(1, (0.18, 1.40, 0.0), (0.48, 1.40, 0.0), 0.05),
        Capsule(2, (0.48, 1.40, 0.0), (0.74, 1.40, 0.0), 0.045),
        Capsule(2, (0.84, 1.40, 0.0), (0.84, 1.40, 0.0), 0.09),   # fist keeps the cuff on
    )
    radius, x0, x1 = 0.075, 0.16, 0.66

    def sleeve(u, v):
        phi = 2 * np.pi * u
        return np.stack([x0 + (x1 - x0) * v, 1.40 + radius * np.cos(phi), radius * np.sin(phi)], axis=1)

    return grid_tube(sleeve, around, along), body_from_capsules(skel, caps)


def _biped_skirt(around=48, along=20):
    bones = [
        ("pelvis", None, (0.0, 0.92, 0.0), (0.0, 1.25, 0.0)),
        ("l_thigh", "pelvis", (0.09, 0.90, 0.0), (0.09, 0.50, 0.0)),
        ("l_shin", "l_thigh", (0.09, 0.50, 0.0), (0.09, 0.08, 0.0)),
        ("r_thigh", "pelvis", (-0.09, 0.90, 0.0), (-0.09, 0.50, 0.0)),
        ("r_shin", "r_thigh", (-0.09, 0.50, 0.0), (-0.09, 0.08, 0.0)),
    ]
    limits = [(-1.5, 0.5), (-0.5, 0.5), (-0.4, 0.6),
              (0.0, 2.2), (-0.2, 0.2), (-0.1, 0.1),
              (-1.5, 0.5), (-0.5, 0.5), (-0.6, 0.4),
              (0.0, 2.2), (-0.2, 0.2), (-0.1, 0.1)]
    skel = _skeleton(bones, ["l_thigh", "l_shin", "r_thigh", "r_shin"], limits)
    caps = (
        Capsule(0, (0.0, 1.05, 0.0), (0.0, 1.35, 0.0), 0.12),
        Capsule(0, (-0.08, 0.92, 0.0), (0.08, 0.92, 0.0), 0.15),
        Capsule(1, (0.09, 0.90, 0.0), (0.09, 0.50, 0.0), 0.075),
        Capsule(2, (0.09, 0.50, 0.0), (0.09, 0.10, 0.0), 0.055),
        Capsule(3, (-0.09, 0.90, 0.0), (-0.09, 0.50, 0.0), 0.075),
        Capsule(4, (-0.09, 0.50, 0.0), (-0.09, 0.10, 0.0), 0.055),
    )

    def skirt(u, v):
        phi = 2 * np.pi * u
        r = 0.17 + (0.42 - 0.17) * v
        return np.stack([r * np.cos(phi), 1.10 - 0.55 * v, r * np.sin(phi)], axis=1)

    return grid_tube(skirt, around, along), body_from_capsules(skel, caps)


def _biped_poncho(cells=30):
    bones = [
        ("spine", None, (0.0, 1.00, 0.0), (0.0, 1.45, 0.0)),
        ("l_arm", "spine", (0.20, 1.42, 0.0), (0.20, 0.95, 0.0)),
        ("r_arm", "spine", (-0.20, 1.42, 0.0), (-0.20, 0.95, 0.0)),
    ]
    limits = [(-1.2, 1.2), (-0.5, 0.5), (-0.2, 1.5),
              (-1.2, 1.2), (-0.5, 0.5), (-1.5, 0.2)]
    skel = _skeleton(bones, ["l_arm", "r_arm"], limits)
    caps = (
        Capsule(0, (0.0, 1.00, 0.0), (0.0, 1.35, 0.0), 0.15),
        Capsule(0, (-0.20, 1.42, 0.0), (0.20, 1.42, 0.0), 0.07),
        Capsule(0, (0.0, 1.62, 0.0), (0.0, 1.62, 0.0), 0.10),
        Capsule(1, (0.20, 1.42, 0.0), (0.20, 0.95, 0.0), 0.05),
        Capsule(2, (-0.20, 1.42, 0.0), (-0.20, 0.95, 0.0), 0.05),
    )
    half, hole, height = 0.45, 0.10, 1.53
    g = np.linspace(-half, half, cells + 1)
    xx, zz = np.meshgrid(g, g, indexing="ij")
    verts = np.stack([xx.ravel(), np.full(xx.size, height), zz.ravel()], axis=1)
    faces = []
    for i in range(cells):
        for j in range(cells):
            cx, cz = 0.5 * (g[i] + g[i + 1]), 0.5 * (g[j] + g[j + 1])
            if abs(cx) < hole and abs(cz) < hole:
                continue
            a = i * (cells + 1) + j
            b, c, d = a + cells + 1, a + cells + 2, a + 1
            faces += [(a, b, c), (a, c, d)]
    faces = np.array(faces, dtype=np.int64)
    used = np.unique(faces)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    garment = TriMesh(verts[used], remap[faces])
    return garment, body_from_capsules(skel, caps)


_BUILDERS = {
    "capsule-arm-sleeve": _arm_sleeve,
    "capsule-biped-skirt": _biped_skirt,
    "capsule-biped-poncho": _biped_poncho,
}


def make_test_scene(name: str, resolution=None):
    """Return ``(garment, body)`` for a built-in scene.

    ``resolution`` overrides the garment grid: ``(around, along)`` for the
    sleeve and skirt, a cell count for the poncho.
    """
    if name not in _BUILDERS:
        raise KeyError(f"unknown scene {name!r}; choose from {', '.join(SCENES)}")
    args = () if resolution is None else (tuple(resolution) if np.ndim(resolution) else (resolution,))
    garment, body = _BUILDERS[name](*args)
    check_clearance(garment, body)
    return garment, body


def scene_to_dict(body: BodyModel, garment_path=None) -> dict:
    doc = skeleton_to_dict(body.skeleton, body.capsules)
    if garment_path is not None:
        doc["garment"] = str(garment_path)
    return doc


def load_scene_file(path):
    """Custom scene JSON: skeleton + capsules + ``garment`` OBJ path (+ optional ``body_mesh``)."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    skeleton, capsules = skeleton_from_dict(doc)
    if "garment" not in doc:
        raise MalformedInputError("scene file needs a 'garment' OBJ path")
    garment = load_obj(path.parent / doc["garment"])
    if "body_mesh" in doc:
        mesh = load_obj(path.parent / doc["body_mesh"])
        if "body_bone" not in doc:
            raise MalformedInputError("a custom body mesh needs 'body_bone' (rigid binding bone name)")
        w = np.zeros((mesh.n_vertices, skeleton.n_bones))
        w[:, skeleton.names.index(doc["body_bone"])] = 1.0
        body = BodyModel(mesh, skeleton, w, capsules)
    else:
        if not capsules:
            raise MalformedInputError("scene file needs capsules or a body mesh")
        body = body_from_capsules(skeleton, capsules)
    return garment, body


def body_variants(garment: TriMesh, body: BodyModel, factors=(0.9, 1.0, 1.1), margin: float = MARGIN):
    """Radius-scaled copies of ``body`` that still clear the garment at rest."""
    out = []
    for f in factors:
        variant = body if f == 1.0 else scale_body(body, f)
        try:
            check_clearance(garment, variant, margin)
        except DrapeError:
            continue
        out.append(variant)
    return out
