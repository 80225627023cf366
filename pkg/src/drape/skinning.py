"""Two-stage linear blend skinning: skeleton -> nodes -> garment vertices.

Node transforms are arrays of shape (m, 12) holding the top 3x4 block of each
4x4 affine, row-major.  Because the rest transforms have identity linear
part, ``chi @ inv(chi_rest) @ x == A (x - c) + t`` for ``chi = [A | t]`` and
rest centre ``c``; the kernels use that form.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .mesh import TriMesh
from .nodes import NodeSet
from .rig import Skeleton, bone_motion


def rest_node_transforms(nodes: NodeSet) -> np.ndarray:
    out = np.zeros((nodes.m, 3, 4))
    out[:, 0, 0] = out[:, 1, 1] = out[:, 2, 2] = 1.0
    out[:, :, 3] = nodes.centers
    return out.reshape(nodes.m, 12)


def lbs_nodes_from_pose(nodes: NodeSet, skeleton: Skeleton, pose) -> np.ndarray:
    g = bone_motion(skeleton, pose)[nodes.bones]            # (m, 4, 4)
    out = np.empty((nodes.m, 3, 4))
    out[:, :, :3] = g[:, :3, :3]
    out[:, :, 3] = np.einsum("mij,mj->mi", g[:, :3, :3], nodes.centers) + g[:, :3, 3]
    return out.reshape(nodes.m, 12)


def normalize_weights(raw):
    return raw / raw.sum(axis=1, keepdims=True)


def lbs_vertices(garment: TriMesh, nodes: NodeSet, transforms, weights=None, out=None) -> np.ndarray:
    """Deform the garment's rest vertices by node transforms.

    ``weights`` overrides the node set's (already normalized) weights.
    """
    w = nodes.weights if weights is None else weights
    out = np.empty((garment.n_vertices, 3)) if out is None else out
    return kernels.lbs_forward(garment.vertices, nodes.support, np.ascontiguousarray(w),
                               np.ascontiguousarray(transforms, dtype=np.float64), nodes.centers, out)


def apply_deltas(skinned, deltas) -> np.ndarray:
    skinned = np.asarray(skinned)
    deltas = np.asarray(deltas)
    if skinned.shape != deltas.shape:
        raise ValueError(f"delta shape {deltas.shape} does not match transforms {skinned.shape}")
    return skinned + deltas


def backprop_lbs(garment: TriMesh, nodes: NodeSet, transforms, grad_vertices, raw_weights=None):
    """Adjoint of :func:`lbs_vertices`.

    Returns ``(grad_transforms (m, 12), grad_raw_weights (n, K))``.  The
    weight gradient is taken with respect to the unnormalized weights
    ``raw_weights`` (defaults to the stored, already normalized ones) and so
    includes the Jacobian of ``raw / raw.sum()``.
    """
    raw = nodes.weights if raw_weights is None else raw_weights
    total = raw.sum(axis=1, keepdims=True)
    w = raw / total
    gchi = np.zeros((nodes.m, 12))
    gw = np.empty_like(w)
    kernels.lbs_backward(garment.vertices, nodes.support, np.ascontiguousarray(w),
                         np.ascontiguousarray(transforms, dtype=np.float64), nodes.centers,
                         np.ascontiguousarray(grad_vertices, dtype=np.float64), gchi, gw)
    graw = (gw - np.sum(w * gw, axis=1, keepdims=True)) / total
    return gchi, graw


def project_to_simplex_rows(raw, fallback=None):
    """Clamp at zero and renormalize each row; rows that vanish keep ``fallback``."""
    out = np.maximum(raw, 0.0)
    total = out.sum(axis=1, keepdims=True)
    dead = total[:, 0] <= 0.0
    if np.any(dead):
        if fallback is None:
            raise ValueError("weight row collapsed to zero")
        out[dead] = fallback[dead]
        total[dead] = out[dead].sum(axis=1, keepdims=True)
    return out / total
