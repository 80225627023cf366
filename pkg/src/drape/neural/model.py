"""The stacked network: body encoder -> pose network -> node corrector.

The pose network reads the pose vector and is modulated by the body signal;
its output is split into the node corrector's scale/shift modulation.  The
node corrector reads the skinned node transforms relative to their rest
values and returns per-node transform deltas.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from ..nodes import NodeSet
from ..rig import BodyModel, Skeleton
from ..skinning import lbs_nodes_from_pose, lbs_vertices, rest_node_transforms
from .hyper import HyperConfig, HyperModulator, body_point_sample
from .mlp import Mlp, Modulation


@dataclass(frozen=True)
class NetworkDims:
    pose_hidden: tuple = (512, 512, 512, 512)
    node_hidden: tuple = (128, 128, 128, 128)
    hyper: HyperConfig = field(default_factory=HyperConfig)


@dataclass
class ForwardCache:
    pose: tuple
    node: tuple
    hyper: list           # per batch row: (body index, hyper cache)
    body_index: np.ndarray


class DrapeModel:
    def __init__(self, pose_dim: int, nodes: NodeSet, dims: NetworkDims = NetworkDims(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.nodes = nodes
        self.seed = int(seed)
        m12 = 12 * nodes.m
        self.node_deformer = Mlp((m12, *dims.node_hidden, m12), rng=rng, zero_last=True)
        s_nd = self.node_deformer.modulation_size
        self.pose_modulator = Mlp((pose_dim, *dims.pose_hidden, 2 * s_nd), rng=rng)
        self.hyper = HyperModulator(self.pose_modulator.modulation_size, dims.hyper, rng=rng)
        self.rest_flat = rest_node_transforms(nodes).reshape(-1)

    @property
    def pose_dim(self) -> int:
        return self.pose_modulator.sizes[0]

    def parameters(self):
        """Every trainable array, in a fixed order, as ``(name, array)``."""
        out = [("pose." + k, v) for k, v in self.pose_modulator.parameters()]
        out += [("node." + k, v) for k, v in self.node_deformer.parameters()]
        out += [("hyper." + k, v) for k, v in self.hyper.parameters()]
        return out

    # -- body signal -------------------------------------------------------------

    def body_points(self, body: BodyModel):
        return body_point_sample(body, self.dims.hyper.points, self.seed)

    def body_signal(self, body: BodyModel):
        pts, nrm = self.body_points(body)
        return self.hyper.forward(pts, nrm)

    # -- forward / backward ------------------------------------------------------

    def forward(self, thetas, chi_skin, body_signals, body_index=None):
        """Batched deltas (B, 12m).

        ``body_signals`` is a list of ``(Modulation, hyper_cache)`` pairs and
        ``body_index`` picks one per batch row (default all zero).
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        chi_skin = np.atleast_2d(np.asarray(chi_skin, dtype=np.float64))
        batch = thetas.shape[0]
        if chi_skin.shape != (batch, self.rest_flat.size):
            raise DimensionError(f"skinned node transforms have shape {chi_skin.shape}")
        idx = np.zeros(batch, dtype=np.int64) if body_index is None else np.asarray(body_index, dtype=np.int64)
        gamma = np.stack([body_signals[i][0].gamma for i in idx])
        beta = np.stack([body_signals[i][0].beta for i in idx])
        pm_out, pm_cache = self.pose_modulator.forward(thetas, Modulation(gamma, beta))
        deltas, nd_cache = self.node_deformer.forward(chi_skin - self.rest_flat, Modulation.from_raw(pm_out))
        hyper = [(int(i), body_signals[i][1]) for i in sorted(set(idx.tolist()))]
        return deltas, ForwardCache(pm_cache, nd_cache, hyper, idx)

    def backward(self, cache: ForwardCache, grad_deltas):
        """Gradients for :meth:`parameters`, same order, from d(loss)/d(deltas)."""
        gw_n, gb_n, gmod_n, _ = self.node_deformer.backward(cache.node, grad_deltas)
        graw = np.concatenate([gmod_n.gamma, gmod_n.beta], axis=1)
        gw_p, gb_p, gmod_p, _ = self.pose_modulator.backward(cache.pose, graw)
        ghyper = None
        for body, hcache in cache.hyper:
            rows = cache.body_index == body
            g = self.hyper.backward(hcache, Modulation(gmod_p.gamma[rows].sum(axis=0), gmod_p.beta[rows].sum(axis=0)))
            if ghyper is None:
                ghyper = g
            else:
                for k in ghyper:
                    ghyper[k] += g[k]
        grads = []
        for gw, gb in zip(gw_p, gb_p):
            grads += [gw, gb]
        for gw, gb in zip(gw_n, gb_n):
            grads += [gw, gb]
        grads += [ghyper[k] for k, _ in self.hyper.parameters()]
        return grads

    # -- reference drape -----------------------------------------------------------

    def drape(self, garment, skeleton: Skeleton, pose, body_signal, weights=None):
        """Double-precision drape for one pose; returns ``(vertices, node transforms)``."""
        chi_skin = lbs_nodes_from_pose(self.nodes, skeleton, pose)
        deltas, _ = self.forward(pose[None], chi_skin.reshape(1, -1), [body_signal])
        chi = chi_skin + deltas.reshape(self.nodes.m, 12)
        return lbs_vertices(garment, self.nodes, chi, weights), chi
