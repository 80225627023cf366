"""Full-size latency model: 40 active joints, 4x512 pose network, 4x128 node network."""
from __future__ import annotations

import numpy as np

from ..nodes import build_nodes
from ..rig import Skeleton
from ..scenes import make_test_scene
from .flat import export_flat


def extended_skeleton(base: Skeleton, joints: int) -> Skeleton:
    """``base`` plus leaf bones under its root so that ``joints`` bones are active."""
    extra = joints - base.n_bones
    if extra < 0:
        raise ValueError("joint count below the base skeleton's bone count")
    rest = [t for t in base.rest]
    tails = list(base.tails)
    names = list(base.names)
    parents = list(base.parents)
    root = base.rest[0, :3, 3]
    for k in range(extra):
        t = np.eye(4)
        t[:3, 3] = root + (0.0, -0.02 * (k + 1), 0.0)
        rest.append(t)
        tails.append(t[:3, 3] + (0.0, -0.01, 0.0))
        names.append(f"extra{k}")
        parents.append(0)
    limits = np.tile([[-0.5, 0.5]], (3 * joints, 1))
    return Skeleton(tuple(names), tuple(parents), np.stack(rest), np.array(tails), tuple(range(joints)), limits)


def latency_model(joints: int = 40, m: int = 128, resolution=(64, 80), pose_hidden=(512,) * 4,
                  node_hidden=(128,) * 4, seed: int = 0):
    """Randomly initialized full-size model; returns ``(flat, drape_model, skeleton, garment)``."""
    from ..neural import DrapeModel, NetworkDims

    garment, body = make_test_scene("capsule-arm-sleeve", resolution)
    skel = extended_skeleton(body.skeleton, joints)
    nodes = build_nodes(garment, skel, m, bones=np.arange(body.skeleton.n_bones))
    model = DrapeModel(skel.pose_dim, nodes, NetworkDims(pose_hidden=tuple(pose_hidden),
                                                         node_hidden=tuple(node_hidden)), seed=seed)
    rng = np.random.default_rng(seed)
    last = model.node_deformer.weights[-1]
    last[:] = rng.uniform(-1e-3, 1e-3, last.shape)   # non-trivial deltas so no stage is skipped
    signal, _ = model.body_signal(body)
    return export_flat(model, skel, garment, signal), model, skel, garment
