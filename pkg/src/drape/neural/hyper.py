"""Body-shape encoder producing the pose network's modulation signal.

Point tokens (positionally encoded positions plus normals) pass through
pre-norm transformer encoder layers, are pooled by a single learned-query
attention, refined by residual MLP blocks and projected by zero-initialized
heads, so an untrained encoder emits the identity modulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from .mlp import Modulation, leaky, leaky_grad

LN_EPS = 1e-5


@dataclass(frozen=True)
class HyperConfig:
    width: int = 64
    heads: int = 4
    layers: int = 1
    res_blocks: int = 2
    frequencies: int = 4
    points: int = 256

    @property
    def feature_dim(self) -> int:
        return 6 + 6 * self.frequencies


def encode_points(points, normals, frequencies: int):
    """``[u, sin(2^k pi u), cos(2^k pi u) ..., normals]`` with ``u`` in the unit box."""
    points = np.asarray(points, dtype=np.float64)
    lo, hi = points.min(axis=0), points.max(axis=0)
    centre = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    u = (points - centre) / (half if half > 0 else 1.0)
    feats = [u]
    for k in range(frequencies):
        feats += [np.sin((2.0 ** k) * np.pi * u), np.cos((2.0 ** k) * np.pi * u)]
    feats.append(np.asarray(normals, dtype=np.float64))
    return np.concatenate(feats, axis=1)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(gy, g, cache):
    xhat, inv = cache
    gxhat = gy * g
    gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def _softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class HyperModulator:
    def __init__(self, output_size: int, config: HyperConfig = HyperConfig(), rng=None):
        if config.width % config.heads:
            raise DimensionError("attention head count must divide the model width")
        self.config = config
        self.output_size = int(output_size)
        rng = np.random.default_rng(0) if rng is None else rng
        d = config.width

        def lin(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

        p = {}
        p["embed.w"], p["embed.b"] = lin(config.feature_dim, d)
        for layer in range(config.layers):
            pre = f"enc{layer}."
            p[pre + "ln1.g"], p[pre + "ln1.b"] = np.ones(d), np.zeros(d)
            for name in ("q", "k", "v", "o"):
                p[pre + name + ".w"], p[pre + name + ".b"] = lin(d, d)
            p[pre + "ln2.g"], p[pre + "ln2.b"] = np.ones(d), np.zeros(d)
            p[pre + "ff1.w"], p[pre + "ff1.b"] = lin(d, 2 * d)
            p[pre + "ff2.w"], p[pre + "ff2.b"] = lin(2 * d, d)
        p["pool.k"], _ = lin(d, d)
        p["pool.v"], _ = lin(d, d)
        p["pool.q"] = rng.uniform(-1.0, 1.0, d) / np.sqrt(d)
        for r in range(config.res_blocks):
            p[f"res{r}.a.w"], p[f"res{r}.a.b"] = lin(d, d)
            p[f"res{r}.b.w"], p[f"res{r}.b.b"] = lin(d, d)
        p["head.w"] = np.zeros((d, 2 * self.output_size))
        p["head.b"] = np.zeros(2 * self.output_size)
        self.params = p

    def parameters(self):
        return list(self.params.items())

    # -- forward ---------------------------------------------------------------

    def forward(self, points, normals):
        """Returns ``(Modulation, cache)`` for one body's point sample."""
        cfg = self.config
        p = self.params
        feats = encode_points(points, normals, cfg.frequencies)
        if feats.shape[1] != cfg.feature_dim:
            raise DimensionError("point features do not match the encoder input width")
        x = feats @ p["embed.w"] + p["embed.b"]
        cache = {"feats": feats, "layers": []}
        for layer in range(cfg.layers):
            x, lc = self._encoder_forward(x, f"enc{layer}.")
            cache["layers"].append(lc)
        # attention pooling with a learned query
        scale = 1.0 / np.sqrt(cfg.width)
        keys = x @ p["pool.k"]
        vals = x @ p["pool.v"]
        alpha = _softmax(keys @ p["pool.q"] * scale)
        z = alpha @ vals
        cache["pool"] = (x, keys, vals, alpha)
        res = []
        for r in range(cfg.res_blocks):
            pre = z @ p[f"res{r}.a.w"] + p[f"res{r}.a.b"]
            hidden = leaky(pre)
            res.append((z, pre, hidden))
            z = z + hidden @ p[f"res{r}.b.w"] + p[f"res{r}.b.b"]
        cache["res"] = res
        cache["z"] = z
        raw = z @ p["head.w"] + p["head.b"]
        return Modulation.from_raw(raw), cache

    def _encoder_forward(self, x, pre):
        cfg = self.config
        p = self.params
        n, d = x.shape
        hd = d // cfg.heads
        y, ln1 = _layernorm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = (y @ p[pre + "q.w"] + p[pre + "q.b"]).reshape(n, cfg.heads, hd).transpose(1, 0, 2)
        k = (y @ p[pre + "k.w"] + p[pre + "k.b"]).reshape(n, cfg.heads, hd).transpose(1, 0, 2)
        v = (y @ p[pre + "v.w"] + p[pre + "v.b"]).reshape(n, cfg.heads, hd).transpose(1, 0, 2)
        att = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(hd))
        o = (att @ v).transpose(1, 0, 2).reshape(n, d)
        x1 = x + o @ p[pre + "o.w"] + p[pre + "o.b"]
        y2, ln2 = _layernorm(x1, p[pre + "ln2.g"], p[pre + "ln2.b"])
        f_pre = y2 @ p[pre + "ff1.w"] + p[pre + "ff1.b"]
        f_act = leaky(f_pre)
        x2 = x1 + f_act @ p[pre + "ff2.w"] + p[pre + "ff2.b"]
        return x2, (x, y, ln1, q, k, v, att, o, x1, y2, ln2, f_pre, f_act)

    # -- backward --------------------------------------------------------------

    def backward(self, cache, gmod: Modulation):
        """Parameter gradients given upstream gradients of ``gamma``/``beta`` (shape (S,))."""
        cfg = self.config
        p = self.params
        g = {name: np.zeros_like(v) for name, v in p.items()}
        graw = np.concatenate([np.asarray(gmod.gamma).reshape(-1), np.asarray(gmod.beta).reshape(-1)])
        z = cache["z"]
        g["head.w"] += np.outer(z, graw)
        g["head.b"] += graw
        gz = p["head.w"] @ graw
        for r in range(cfg.res_blocks - 1, -1, -1):
            z_in, pre, hidden = cache["res"][r]
            g[f"res{r}.b.w"] += np.outer(hidden, gz)
            g[f"res{r}.b.b"] += gz
            gpre = (p[f"res{r}.b.w"] @ gz) * leaky_grad(pre)
            g[f"res{r}.a.w"] += np.outer(z_in, gpre)
            g[f"res{r}.a.b"] += gpre
            gz = gz + p[f"res{r}.a.w"] @ gpre
        x, keys, vals, alpha = cache["pool"]
        scale = 1.0 / np.sqrt(cfg.width)
        gvals = np.outer(alpha, gz)
        galpha = vals @ gz
        gs = alpha * (galpha - alpha @ galpha)
        gkeys = np.outer(gs, p["pool.q"]) * scale
        g["pool.q"] += keys.T @ gs * scale
        g["pool.k"] += x.T @ gkeys
        g["pool.v"] += x.T @ gvals
        gx = gkeys @ p["pool.k"].T + gvals @ p["pool.v"].T
        for layer in range(cfg.layers - 1, -1, -1):
            gx = self._encoder_backward(gx, cache["layers"][layer], f"enc{layer}.", g)
        g["embed.w"] += cache["feats"].T @ gx
        g["embed.b"] += gx.sum(axis=0)
        return g

    def _encoder_backward(self, gx2, lc, pre, g):
        cfg = self.config
        p = self.params
        x, y, ln1, q, k, v, att, o, x1, y2, ln2, f_pre, f_act = lc
        n, d = x.shape
        hd = d // cfg.heads
        # feed-forward branch
        g[pre + "ff2.w"] += f_act.T @ gx2
        g[pre + "ff2.b"] += gx2.sum(axis=0)
        gf = (gx2 @ p[pre + "ff2.w"].T) * leaky_grad(f_pre)
        g[pre + "ff1.w"] += y2.T @ gf
        g[pre + "ff1.b"] += gf.sum(axis=0)
        gy2 = gf @ p[pre + "ff1.w"].T
        gx1_ln, gg2, gb2 = _layernorm_back(gy2, p[pre + "ln2.g"], ln2)
        g[pre + "ln2.g"] += gg2
        g[pre + "ln2.b"] += gb2
        gx1 = gx2 + gx1_ln
        # attention branch
        g[pre + "o.w"] += o.T @ gx1
        g[pre + "o.b"] += gx1.sum(axis=0)
        go = (gx1 @ p[pre + "o.w"].T).reshape(n, cfg.heads, hd).transpose(1, 0, 2)
        gatt = go @ v.transpose(0, 2, 1)
        gv = att.transpose(0, 2, 1) @ go
        gs = att * (gatt - (gatt * att).sum(axis=-1, keepdims=True)) / np.sqrt(hd)
        gq = gs @ k
        gk = gs.transpose(0, 2, 1) @ q
        gy = np.zeros_like(y)
        for name, gh in (("q", gq), ("k", gk), ("v", gv)):
            flat = gh.transpose(1, 0, 2).reshape(n, d)
            g[pre + name + ".w"] += y.T @ flat
            g[pre + name + ".b"] += flat.sum(axis=0)
            gy += flat @ p[pre + name + ".w"].T
        gx_ln, gg1, gb1 = _layernorm_back(gy, p[pre + "ln1.g"], ln1)
        g[pre + "ln1.g"] += gg1
        g[pre + "ln1.b"] += gb1
        return gx1 + gx_ln


def body_point_sample(body, count: int, seed: int = 0):
    """The fixed point sample used to encode ``body`` (canonical pose)."""
    return sample_body_points(body.body_mesh, count, np.random.default_rng(seed + 7919))


def sample_body_points(mesh, count: int, rng: np.random.Generator, vertices=None):
    """Area-weighted surface samples and their face normals."""
    x = mesh.vertices if vertices is None else vertices
    tri = x[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    face = rng.choice(len(area), size=count, p=area / area.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    pts = np.einsum("pk,pkj->pj", bary, tri[face])
    normals = cross[face] / (2.0 * area[face])[:, None]
    return pts, normals
