"""Modulated multilayer perceptrons with hand-written reverse mode.

Weights are stored input-major, ``W.shape == (fan_in, fan_out)``, so a layer
is ``x @ W + b``; the runtime keeps the same layout.  Hidden layers apply a
leaky rectifier and then the feature-wise modulation ``gamma * a + beta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError

SLOPE = 0.01


def leaky(z):
    return np.where(z > 0, z, SLOPE * z)


def leaky_grad(z):
    return np.where(z > 0, 1.0, SLOPE)


@dataclass
class Modulation:
    """Per-hidden-layer scale and shift, concatenated over layers.

    Arrays are (S,) for a shared signal or (B, S) for one per batch row.
    """

    gamma: np.ndarray
    beta: np.ndarray

    @classmethod
    def identity(cls, size: int) -> "Modulation":
        return cls(np.ones(size), np.zeros(size))

    @classmethod
    def from_raw(cls, raw) -> "Modulation":
        """Split a head output ``[dgamma | beta]`` with ``gamma = 1 + dgamma``."""
        raw = np.asarray(raw)
        s = raw.shape[-1] // 2
        return cls(1.0 + raw[..., :s], raw[..., s:])

    @property
    def size(self) -> int:
        return self.gamma.shape[-1]


class Mlp:
    def __init__(self, sizes, rng: np.random.Generator | None = None, zero_last: bool = False):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise DimensionError("an MLP needs at least input and output sizes")
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            last = k == len(self.sizes) - 2
            if last and zero_last:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
            else:
                self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, fan_out))

    @property
    def hidden_widths(self):
        return self.sizes[1:-1]

    @property
    def modulation_size(self) -> int:
        return int(sum(self.hidden_widths))

    def parameters(self):
        out = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"w{k}", w), (f"b{k}", b)]
        return out

    def forward(self, x, mod: Modulation | None = None):
        """Returns ``(output, cache)`` for a (B, fan_in) batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise DimensionError(f"input has shape {x.shape}, expected (B, {self.sizes[0]})")
        if mod is not None and mod.size != self.modulation_size:
            raise DimensionError(f"modulation has size {mod.size}, expected {self.modulation_size}")
        h = x
        inputs, pre, act = [], [], []
        off = 0
        for k in range(len(self.weights) - 1):
            inputs.append(h)
            z = h @ self.weights[k] + self.biases[k]
            a = leaky(z)
            pre.append(z)
            act.append(a)
            if mod is not None:
                w = self.sizes[k + 1]
                h = mod.gamma[..., off:off + w] * a + mod.beta[..., off:off + w]
                off += w
            else:
                h = a
        inputs.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, (inputs, pre, act, mod)

    def backward(self, cache, gout):
        """Returns ``(grad_weights, grad_biases, grad_mod, grad_input)``.

        ``grad_mod`` is a :class:`Modulation` of per-row gradients (B, S), or
        None when the forward pass was unmodulated.
        """
        inputs, pre, act, mod = cache
        gout = np.asarray(gout, dtype=np.float64)
        n = len(self.weights)
        gw = [None] * n
        gb = [None] * n
        gw[-1] = inputs[-1].T @ gout
        gb[-1] = gout.sum(axis=0)
        gh = gout @ self.weights[-1].T
        batch = gout.shape[0]
        ggamma = gbeta = None
        if mod is not None:
            ggamma = np.zeros((batch, self.modulation_size))
            gbeta = np.zeros((batch, self.modulation_size))
        off = self.modulation_size
        for k in range(n - 2, -1, -1):
            if mod is not None:
                w = self.sizes[k + 1]
                off -= w
                ggamma[:, off:off + w] = gh * act[k]
                gbeta[:, off:off + w] = gh
                ga = gh * mod.gamma[..., off:off + w]
            else:
                ga = gh
            gz = ga * leaky_grad(pre[k])
            gw[k] = inputs[k].T @ gz
            gb[k] = gz.sum(axis=0)
            gh = gz @ self.weights[k].T
        gmod = None if mod is None else Modulation(ggamma, gbeta)
        return gw, gb, gmod, gh
