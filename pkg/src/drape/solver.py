"""Per-pose energy minimization: over all vertices, or over node deltas only.

Both solvers start from the two-stage skinning drape, run Adam on the
physics loss and return the best iterate seen, so the returned loss never
exceeds the starting loss.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, MalformedInputError, NumericFailure
from .neural.adam import Adam
from .physics import CapsuleCollider, EnergyModel, MaterialParams
from .rig import pose_limits
from .skinning import backprop_lbs, lbs_nodes_from_pose, lbs_vertices

MAGIC = b"QSDS"
VERSION = 1


@dataclass
class SolveResult:
    vertices: np.ndarray
    loss: float
    initial_loss: float
    deltas: np.ndarray | None = None        # (m, 12) for reduced solves
    curve: np.ndarray | None = None


def _check(loss, pose, parts, step):
    if not np.isfinite(loss):
        raise NumericFailure("non-finite loss during solve",
                             {"pose": np.asarray(pose).tolist(), "breakdown": parts, "step": step})


def quasi_static_oracle(garment, body, nodes, pose, params: MaterialParams = MaterialParams(), steps: int = 1000,
                        lr: float = 1e-3, energy: EnergyModel | None = None, collider=None) -> SolveResult:
    """Adam on every vertex position, starting from skinning with zero deltas."""
    energy = energy or EnergyModel.build(garment, params)
    collider = collider or CapsuleCollider.from_body(body, pose)
    chi = lbs_nodes_from_pose(nodes, body.skeleton, pose)
    x = lbs_vertices(garment, nodes, chi)
    opt = Adam([x], lr)
    best_x = x.copy()
    best = start = None
    curve = np.empty(steps + 1)
    for k in range(steps + 1):
        loss, grad, parts = energy.evaluate(x, collider, want_grad=k < steps)
        _check(loss, pose, parts, k)
        curve[k] = loss
        if start is None:
            start = best = loss
        elif loss < best:
            best = loss
            best_x[:] = x
        if k < steps:
            opt.step([grad])
    return SolveResult(best_x, float(best), float(start), curve=curve)


def reduced_space_solve(garment, body, nodes, pose, params: MaterialParams = MaterialParams(), steps: int = 1000,
                        lr: float = 1e-3, weights=None, energy: EnergyModel | None = None,
                        collider=None) -> SolveResult:
    """Adam on the node deltas (m x 12) with gradients through skinning."""
    energy = energy or EnergyModel.build(garment, params)
    collider = collider or CapsuleCollider.from_body(body, pose)
    w = nodes.weights if weights is None else weights
    chi_skin = lbs_nodes_from_pose(nodes, body.skeleton, pose)
    deltas = np.zeros_like(chi_skin)
    opt = Adam([deltas], lr)
    best_d = deltas.copy()
    best_x = None
    best = start = None
    curve = np.empty(steps + 1)
    for k in range(steps + 1):
        chi = chi_skin + deltas
        x = lbs_vertices(garment, nodes, chi, w)
        loss, gx, parts = energy.evaluate(x, collider, want_grad=k < steps)
        _check(loss, pose, parts, k)
        curve[k] = loss
        if start is None or loss < best:
            if start is None:
                start = loss
            best = loss
            best_d[:] = deltas
            best_x = x
        if k < steps:
            gchi, _ = backprop_lbs(garment, nodes, chi, gx, w)
            opt.step([gchi])
    return SolveResult(best_x, float(best), float(start), deltas=best_d, curve=curve)


@dataclass
class OracleDataset:
    poses: np.ndarray          # (count, p)
    vertices: np.ndarray       # (count, n, 3)
    losses: np.ndarray | None = None

    def __len__(self):
        return len(self.poses)

    def as_pair(self):
        return self.poses, self.vertices


def generate_oracle_dataset(garment, body, nodes, params: MaterialParams = MaterialParams(), count: int = 1000,
                            steps: int = 1000, lr: float = 1e-3, seed: int = 0, threads: int = 1) -> OracleDataset:
    """Full-range random poses and their oracle drapes; deterministic in ``seed``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(seed)
    lo, hi = pose_limits(body.skeleton, 1.0)
    poses = rng.uniform(lo, hi, size=(count, body.skeleton.pose_dim))
    energy = EnergyModel.build(garment, params)

    def solve(theta):
        return quasi_static_oracle(garment, body, nodes, theta, params, steps, lr, energy=energy)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(solve, poses))
    else:
        results = [solve(t) for t in poses]
    verts = np.stack([r.vertices for r in results]) if results else np.zeros((0, garment.n_vertices, 3))
    return OracleDataset(poses, verts, np.array([r.loss for r in results]))


def write_dataset(dataset: OracleDataset, path) -> None:
    count, p = dataset.poses.shape
    n = dataset.vertices.shape[1] if count else 0
    if dataset.vertices.shape != (count, n, 3):
        raise DimensionError("dataset vertices do not match the pose count")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, n, p, count))
        for theta, x in zip(dataset.poses, dataset.vertices):
            fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_dataset(path) -> OracleDataset:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise MalformedInputError("not a dataset file (bad magic or short header)")
    version, n, p, count = struct.unpack("<IIII", data[4:20])
    if version != VERSION:
        raise MalformedInputError(f"unsupported dataset version {version}")
    record = p + 3 * n
    expected = 20 + 8 * record * count
    if len(data) != expected:
        raise MalformedInputError(f"dataset holds {len(data)} bytes, header implies {expected}")
    body = np.frombuffer(data, dtype="<f8", offset=20).reshape(count, record)
    return OracleDataset(body[:, :p].copy(), body[:, p:].reshape(count, n, 3).copy())
