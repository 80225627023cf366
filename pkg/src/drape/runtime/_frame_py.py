"""numpy version of the frame kernel, same stages and buffers."""
from __future__ import annotations

import time

import numpy as np

from ..errors import DimensionError

NAME = "python"
SLOPE = np.float32(0.01)


def _rotation(a, b, g):
    ca, sa, cb, sb, cg, sg = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(g), np.sin(g)
    return np.array([
        [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa, 0.0],
        [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa, 0.0],
        [-sb, cb * sa, cb * ca, 0.0],
    ], dtype=np.float32)


def _compose(a, b):
    out = a[:, :3] @ b
    out[:, 3] += a[:, 3]
    return out


class FrameKernel:
    def __init__(self, flat):
        self.pose_layers = flat.layers("pose")
        self.node_layers = flat.layers("node")
        self.p = self.pose_layers[0][0].shape[0]
        self.m = flat["nodes.centers"].shape[0]
        self.s_pose = sum(w.shape[1] for w, _ in self.pose_layers[:-1])
        self.s_node = sum(w.shape[1] for w, _ in self.node_layers[:-1])
        if self.node_layers[0][0].shape[0] != 12 * self.m or self.pose_layers[-1][0].shape[1] != 2 * self.s_node:
            raise ValueError("network dimensions do not match the node count")
        self.parents = flat.ints("skeleton.parents")
        self.n_bones = len(self.parents)
        self.joint_of_bone = np.full(self.n_bones, -1)
        for j, bone in enumerate(flat.ints("skeleton.active")):
            self.joint_of_bone[bone] = j
        self.rest = flat["skeleton.rest"].reshape(-1, 3, 4)
        self.rest_inv = flat["skeleton.rest_inv"].reshape(-1, 3, 4)
        self.centers = flat["nodes.centers"]
        self.node_bone = flat.ints("nodes.bones")
        rest_flat = np.zeros((self.m, 12), dtype=np.float32)
        rest_flat[:, 0] = rest_flat[:, 5] = rest_flat[:, 10] = 1.0
        rest_flat[:, 3::4] = self.centers
        self.rest_flat = rest_flat
        self.support = flat.ints("skin.support")
        self.n, self.k_support = self.support.shape
        self.weights = flat["skin.weights"]
        self.garment = flat["garment.rest"]
        self.set_body_signal(flat["body.gamma"], flat["body.beta"])
        self.theta = np.zeros(self.p, dtype=np.float32)
        self.chi_skin = np.zeros((self.m, 12), dtype=np.float32)
        self.node_in = np.zeros(12 * self.m, dtype=np.float32)
        self.pose_out = np.zeros(2 * self.s_node, dtype=np.float32)
        self.deltas = np.zeros(12 * self.m, dtype=np.float32)
        self.out = np.zeros((self.n, 3), dtype=np.float32)

    def set_body_signal(self, gamma, beta):
        g = np.asarray(gamma, dtype=np.float32).reshape(-1)
        b = np.asarray(beta, dtype=np.float32).reshape(-1)
        if g.size != self.s_pose or b.size != self.s_pose:
            raise ValueError(f"body signal has size {g.size}, expected {self.s_pose}")
        self.body_gamma, self.body_beta = g.copy(), b.copy()

    def load_pose(self, theta):
        theta = np.asarray(theta)
        if theta.dtype != np.float32:
            raise TypeError("pose must be a contiguous float32 array")
        if theta.size != self.p:
            raise DimensionError(f"pose has {theta.size} values, expected {self.p}")
        self.theta[:] = theta.reshape(-1)

    def skin_nodes(self):
        motion = [None] * self.n_bones
        for i, par in enumerate(self.parents):
            g = None if par < 0 else motion[par]
            j = self.joint_of_bone[i]
            if j >= 0 and np.any(self.theta[3 * j:3 * j + 3] != 0):
                rot = _rotation(*self.theta[3 * j:3 * j + 3].astype(np.float64))
                local = _compose(self.rest[i], _compose(rot, self.rest_inv[i]))
                g = local if g is None else _compose(g, local)
            motion[i] = g
        for j in range(self.m):
            g = motion[self.node_bone[j]]
            if g is None:
                self.chi_skin[j] = self.rest_flat[j]
            else:
                chi = self.chi_skin[j].reshape(3, 4)
                chi[:, :3] = g[:, :3]
                chi[:, 3] = g[:, :3] @ self.centers[j] + g[:, 3]
        np.subtract(self.chi_skin.reshape(-1), self.rest_flat.reshape(-1), out=self.node_in)

    @staticmethod
    def _run(layers, x, gamma, beta):
        h = x
        off = 0
        for w, b in layers[:-1]:
            z = h @ w + b
            z = np.where(z > 0, z, SLOPE * z)
            width = w.shape[1]
            h = gamma[off:off + width] * z + beta[off:off + width]
            off += width
        w, b = layers[-1]
        return h @ w + b

    def pose_modulator(self):
        self.pose_out[:] = self._run(self.pose_layers, self.theta, self.body_gamma, self.body_beta)

    def node_deformer(self):
        s = self.s_node
        self.deltas[:] = self._run(self.node_layers, self.node_in, 1.0 + self.pose_out[:s], self.pose_out[s:])

    def lbs(self):
        chi = (self.chi_skin + self.deltas.reshape(self.m, 12)).reshape(self.m, 3, 4)
        a = chi[:, :, :3]
        b = chi[:, :, 3] - np.einsum("mij,mj->mi", a, self.centers)
        blend = np.concatenate([a, b[:, :, None]], axis=2)            # (m, 3, 4)
        mix = np.einsum("nk,nkij->nij", self.weights, blend[self.support])
        self.out[:] = np.einsum("nij,nj->ni", mix[:, :, :3], self.garment) + mix[:, :, 3]

    def frame(self, theta):
        self.load_pose(theta)
        self.skin_nodes()
        self.pose_modulator()
        self.node_deformer()
        self.lbs()

    def time_stages(self, theta, iterations):
        self.load_pose(theta)
        out = np.zeros((iterations, 4))
        stages = (self.skin_nodes, self.pose_modulator, self.node_deformer, self.lbs)
        for it in range(iterations):
            for s, fn in enumerate(stages):
                t0 = time.perf_counter_ns()
                fn()
                out[it, s] = time.perf_counter_ns() - t0
        return out

    @property
    def node_transforms(self):
        return self.chi_skin + self.deltas.reshape(self.m, 12)
