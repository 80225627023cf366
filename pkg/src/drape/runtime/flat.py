"""Flat f32 model container and its binary file format.

File layout (little-endian): ``b"NDRP"``, u32 version, u32 tensor count,
then per tensor u32 name length, UTF-8 name, u32 rank, rank x u32 dims and
the f32 payload.  Integer tensors (indices, bone ids, sizes) are stored as
f32, which is exact below 2**24.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DimensionError, MalformedInputError

MAGIC = b"NDRP"
VERSION = 1
EXACT_INT_LIMIT = 1 << 24


class FlatModel:
    """Ordered, immutable-by-convention mapping of tensor name to f32 array."""

    def __init__(self, tensors=None):
        self.tensors = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name, value):
        arr = np.ascontiguousarray(value, dtype="<f4")
        self.tensors[str(name)] = arr

    def __getitem__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise MalformedInputError(f"model has no tensor {name!r}") from None

    def __contains__(self, name):
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def ints(self, name):
        return self[name].astype(np.int64)

    def layers(self, prefix: str):
        """``[(W (in, out), b (out,)), ...]`` for ``prefix.w0, prefix.b0, ...``."""
        out = []
        k = 0
        while f"{prefix}.w{k}" in self.tensors:
            out.append((self.tensors[f"{prefix}.w{k}"], self.tensors[f"{prefix}.b{k}"]))
            k += 1
        return out

    @property
    def m(self) -> int:
        return int(self["nodes.centers"].shape[0])

    @property
    def pose_dim(self) -> int:
        return int(self["pose.w0"].shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self["garment.rest"].shape[0])

    def node_set(self):
        """The stored nodes, with the stored (possibly optimized) skin weights."""
        from ..nodes import NodeSet
        return NodeSet(self.ints("nodes.vertex_ids"), self["nodes.centers"].astype(np.float64),
                       self.ints("skin.support"), self["skin.weights"].astype(np.float64),
                       self.ints("nodes.bones"))

    def garment(self):
        from ..mesh import TriMesh
        return TriMesh(self["garment.rest"].astype(np.float64), self.ints("garment.faces"))

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FlatModel":
        view = memoryview(data)
        pos = 0

        def take(size, what):
            nonlocal pos
            if pos + size > len(view):
                raise MalformedInputError(f"truncated model file at byte {pos}: expected {size} bytes of {what}")
            chunk = view[pos:pos + size]
            pos += size
            return chunk

        if bytes(take(4, "magic")) != MAGIC:
            raise MalformedInputError("not a model file (bad magic)")
        version, count = struct.unpack("<II", take(8, "header"))
        if version != VERSION:
            raise MalformedInputError(f"unsupported model version {version}")
        model = cls()
        for _ in range(count):
            (length,) = struct.unpack("<I", take(4, "name length"))
            name = bytes(take(length, "tensor name")).decode("utf-8")
            (rank,) = struct.unpack("<I", take(4, "rank"))
            dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(take(4 * size, f"data of {name!r}"), dtype="<f4").reshape(dims).copy()
            model.tensors[name] = arr
        if pos != len(view):
            raise MalformedInputError(f"trailing bytes after model data at byte {pos}")
        return model

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FlatModel":
        return cls.from_bytes(Path(path).read_bytes())


def export_flat(model, skeleton, garment, body_signal, weights=None) -> FlatModel:
    """Everything the per-frame path needs, plus the body encoder for re-binding.

    ``model`` is a :class:`~drape.neural.DrapeModel`; ``body_signal`` the
    cached Modulation for the current body; ``weights`` overrides the node
    set's skin weights (e.g. after optimization).
    """
    nodes = model.nodes
    w = nodes.weights if weights is None else np.asarray(weights)
    if w.shape != nodes.support.shape or nodes.n != garment.n_vertices:
        raise DimensionError("skin weights do not match the garment")
    if max(garment.n_vertices, nodes.m, skeleton.n_bones) >= EXACT_INT_LIMIT:
        raise DimensionError("model too large for exact f32 indices")
    flat = FlatModel()
    for k, v in model.pose_modulator.parameters():
        flat["pose." + k] = v
    for k, v in model.node_deformer.parameters():
        flat["node." + k] = v
    flat["body.gamma"] = np.asarray(body_signal.gamma).reshape(-1)
    flat["body.beta"] = np.asarray(body_signal.beta).reshape(-1)
    flat["skeleton.parents"] = [-1 if p is None else p for p in skeleton.parents]
    flat["skeleton.rest"] = skeleton.rest[:, :3, :].reshape(-1, 12)
    flat["skeleton.rest_inv"] = skeleton.rest_inv[:, :3, :].reshape(-1, 12)
    flat["skeleton.active"] = list(skeleton.active_joints)
    flat["nodes.vertex_ids"] = nodes.vertex_ids
    flat["nodes.centers"] = nodes.centers
    flat["nodes.bones"] = nodes.bones
    flat["skin.support"] = nodes.support
    flat["skin.weights"] = w
    flat["garment.rest"] = garment.vertices
    flat["garment.faces"] = garment.faces
    for k, v in model.hyper.parameters():
        flat["hyper." + k] = v
    cfg = model.dims.hyper
    flat["model.seed"] = [model.seed]
    flat["hyper.config"] = [cfg.width, cfg.heads, cfg.layers, cfg.res_blocks, cfg.frequencies, cfg.points]
    return flat
