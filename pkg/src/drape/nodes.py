"""Garment deformation nodes: sampling, geodesic falloff weights, bone binding."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import DimensionError, MalformedInputError, TopologyError
from .geometry import MeshProximity
from .mesh import TriMesh
from .rig import Skeleton

DEFAULT_SUPPORTS = 8


@dataclass(frozen=True, eq=False)
class NodeSet:
    """``m`` deformation handles bound to a garment of ``n`` vertices.

    Skin weights are stored sparse: vertex ``j`` is influenced by nodes
    ``support[j]`` with weights ``weights[j]`` (each row sums to one).
    """

    vertex_ids: np.ndarray    # (m,) garment vertex each node was sampled at
    centers: np.ndarray       # (m, 3) rest translations
    support: np.ndarray       # (n, K) node indices
    weights: np.ndarray       # (n, K)
    bones: np.ndarray         # (m,) bone each node is bound to

    def __post_init__(self):
        for name, dtype in (("vertex_ids", np.int64), ("centers", np.float64), ("support", np.int64),
                            ("weights", np.float64), ("bones", np.int64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            object.__setattr__(self, name, arr)
        if self.support.shape != self.weights.shape:
            raise DimensionError("support and weights shapes differ")

    @property
    def m(self) -> int:
        return len(self.centers)

    @property
    def n(self) -> int:
        return len(self.support)

    @property
    def rest_transforms(self) -> np.ndarray:
        out = np.tile(np.eye(4), (self.m, 1, 1))
        out[:, :3, 3] = self.centers
        return out

    def dense_weights(self, weights=None) -> np.ndarray:
        w = self.weights if weights is None else weights
        dense = np.zeros((self.m, self.n))
        np.add.at(dense, (self.support, np.arange(self.n)[:, None].repeat(self.support.shape[1], 1)), w)
        return dense

    def bone_bindings(self, n_bones: int) -> np.ndarray:
        out = np.zeros((self.m, n_bones))
        out[np.arange(self.m), self.bones] = 1.0
        return out

    def with_weights(self, weights) -> "NodeSet":
        return NodeSet(self.vertex_ids, self.centers, self.support, weights, self.bones)

    def to_dict(self) -> dict:
        return {
            "node_vertices": self.vertex_ids.tolist(),
            "rest_translations": self.centers.tolist(),
            "weights": [
                [[int(i), float(w)] for i, w in zip(s, ws)] for s, ws in zip(self.support, self.weights)
            ],
            "bone_bindings": self.bones.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NodeSet":
        try:
            rows = doc["weights"]
            k = max(len(r) for r in rows)
            support = np.zeros((len(rows), k), dtype=np.int64)
            weights = np.zeros((len(rows), k))
            for j, r in enumerate(rows):
                for s, (i, w) in enumerate(r):
                    support[j, s] = i
                    weights[j, s] = w
            return cls(np.array(doc["node_vertices"]), np.array(doc["rest_translations"], dtype=np.float64),
                       support, weights, np.array(doc["bone_bindings"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInputError(f"bad node set document: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NodeSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def edge_graph(mesh: TriMesh):
    e = mesh.edges
    x = mesh.vertices
    length = np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1)
    n = mesh.n_vertices
    g = coo_matrix((np.concatenate([length, length]), (np.concatenate([e[:, 0], e[:, 1]]),
                    np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    return g.tocsr()


def geodesic_distances(mesh: TriMesh, source, graph=None) -> np.ndarray:
    """Shortest edge-path distances from one vertex (or a list: one row each).

    Unreachable vertices get ``inf``.
    """
    graph = edge_graph(mesh) if graph is None else graph
    return dijkstra(graph, directed=False, indices=source)


def farthest_point_sample(mesh: TriMesh, m: int, seed_vertex: int = 0, graph=None) -> np.ndarray:
    n = mesh.n_vertices
    if m > n:
        raise ValueError(f"cannot sample {m} nodes from {n} vertices")
    if m < 1:
        raise ValueError("node count must be positive")
    graph = edge_graph(mesh) if graph is None else graph
    chosen = [int(seed_vertex)]
    mind = geodesic_distances(mesh, seed_vertex, graph)
    taken = np.zeros(n, dtype=bool)
    taken[seed_vertex] = True
    for _ in range(m - 1):
        score = np.where(taken, -1.0, mind)
        nxt = int(np.argmax(score))     # first maximum: lowest index wins ties
        chosen.append(nxt)
        taken[nxt] = True
        np.minimum(mind, geodesic_distances(mesh, nxt, graph), out=mind)
    return np.array(chosen, dtype=np.int64)


def raw_weight(distance, mean_edge, n, m):
    """Initial falloff ``exp(-(d / mean_edge) / sqrt(n / m))``."""
    return np.exp(-(np.asarray(distance) / mean_edge) / np.sqrt(n / m))


def init_skin_weights(mesh: TriMesh, nodes, k: int = DEFAULT_SUPPORTS, graph=None):
    """Top-``k`` renormalized geodesic falloff weights; returns ``(support, weights)``."""
    graph = edge_graph(mesh) if graph is None else graph
    nodes = np.asarray(nodes, dtype=np.int64)
    m, n = len(nodes), mesh.n_vertices
    d = geodesic_distances(mesh, nodes, graph).reshape(m, n)
    unreachable = ~np.isfinite(d).any(axis=0)
    if unreachable.any():
        j = int(np.flatnonzero(unreachable)[0])
        raise TopologyError(f"vertex {j} is not reachable from any node")
    x = mesh.vertices
    mean_edge = float(np.mean(np.linalg.norm(x[mesh.edges[:, 1]] - x[mesh.edges[:, 0]], axis=1)))
    raw = raw_weight(d, mean_edge, n, m).T                  # (n, m), zero where unreachable
    k = min(k, m)
    support = np.argsort(-raw, axis=1, kind="stable")[:, :k]
    w = np.take_along_axis(raw, support, axis=1)
    w /= w.sum(axis=1, keepdims=True)
    return support.astype(np.int64), w


def point_segment_distance(points, heads, tails):
    """(N, B) distances from points to segments."""
    ab = tails - heads                                       # (B, 3)
    ap = points[:, None, :] - heads[None, :, :]              # (N, B, 3)
    denom = np.einsum("bj,bj->b", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, np.einsum("nbj,bj->nb", ap, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(ap - t[..., None] * ab, axis=2)


def bind_nodes_to_bones(centers, skeleton: Skeleton, bones=None) -> np.ndarray:
    """Closest bone per node (lowest bone index wins ties), canonical pose.

    ``bones`` optionally restricts the candidate set.
    """
    heads, tails = skeleton.bone_segments()
    cand = np.arange(skeleton.n_bones) if bones is None else np.asarray(sorted(bones), dtype=np.int64)
    d = point_segment_distance(np.asarray(centers, dtype=np.float64), heads[cand], tails[cand])
    return cand[np.argmin(d, axis=1)]


def build_nodes(mesh: TriMesh, skeleton: Skeleton, m: int, seed_vertex: int = 0, k: int = DEFAULT_SUPPORTS,
                bones=None) -> NodeSet:
    graph = edge_graph(mesh)
    ids = farthest_point_sample(mesh, m, seed_vertex, graph)
    support, w = init_skin_weights(mesh, ids, k, graph)
    centers = mesh.vertices[ids]
    return NodeSet(ids, centers, support, w, bind_nodes_to_bones(centers, skeleton, bones))


def transfer_nodes(nodes: NodeSet, source: TriMesh, target: TriMesh, k: int | None = None) -> NodeSet:
    """Bind another mesh of the same garment to existing nodes.

    Each target vertex takes the barycentric interpolation of the source
    weights at its closest point on the source surface, truncated to the
    ``k`` largest and renormalized.
    """
    k = nodes.support.shape[1] if k is None else k
    face, bary, _, _, _ = MeshProximity(source).query(target.vertices)
    dense = np.zeros((target.n_vertices, nodes.m))
    rows = np.arange(target.n_vertices)
    for c in range(3):
        v = source.faces[face, c]
        for s in range(nodes.support.shape[1]):
            np.add.at(dense, (rows, nodes.support[v, s]), bary[:, c] * nodes.weights[v, s])
    k = min(k, nodes.m)
    support = np.argsort(-dense, axis=1, kind="stable")[:, :k]
    w = np.take_along_axis(dense, support, axis=1)
    w /= w.sum(axis=1, keepdims=True)
    _, ids = cKDTree(target.vertices).query(nodes.centers)
    return NodeSet(ids, nodes.centers, support, w, nodes.bones)
