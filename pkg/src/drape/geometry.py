"""Point-to-triangle-mesh proximity queries."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh

# feature codes returned by closest_point_triangles
FACE, EDGE_AB, EDGE_BC, EDGE_CA, VERT_A, VERT_B, VERT_C = range(7)


def closest_point_triangles(p, a, b, c):
    """Closest point on triangles ``(a, b, c)`` to points ``p`` (all (N, 3)).

    Vectorized Voronoi-region walk.  Returns ``(q, bary, feature)`` with
    barycentric coordinates ``bary`` (N, 3) and the feature code of the
    region containing the closest point.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    n = len(p)
    bary = np.zeros((n, 3))
    feature = np.full(n, FACE, dtype=np.int64)
    done = np.zeros(n, dtype=bool)

    def assign(mask, u, v, w, code):
        mask = mask & ~done
        bary[mask, 0] = u[mask] if np.ndim(u) else u
        bary[mask, 1] = v[mask] if np.ndim(v) else v
        bary[mask, 2] = w[mask] if np.ndim(w) else w
        feature[mask] = code
        done[mask] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0, VERT_A)
        assign((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0, VERT_B)
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - t, t, 0.0, EDGE_AB)
        assign((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0, VERT_C)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - t, 0.0, t, EDGE_CA)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 0.0, 1.0 - t, t, EDGE_BC)
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(n, dtype=bool), 1.0 - v - w, v, w, FACE)
    q = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return q, bary, feature


class MeshProximity:
    """Nearest-triangle queries accelerated by a KD-tree over face centroids.

    A point's nearest triangle is always among the faces whose centroid lies
    within ``d0 + R`` of the point, where ``d0`` is the distance to the
    nearest centroid's triangle and ``R`` the largest centroid-to-corner
    radius; candidates are gathered with one ball query per point.
    """

    def __init__(self, mesh: TriMesh, vertices=None):
        self.mesh = mesh
        self.x = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        tri = self.x[mesh.faces]
        self.centroids = tri.mean(axis=1)
        self.radius = float(np.max(np.linalg.norm(tri - self.centroids[:, None, :], axis=2)))
        self.tree = cKDTree(self.centroids)

    def query(self, points):
        """Returns ``(face, bary, closest, feature, dist)`` per point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        faces = self.mesh.faces
        x = self.x
        _, near = self.tree.query(points)
        q0, _, _ = closest_point_triangles(points, *(x[faces[near, k]] for k in range(3)))
        bound = np.linalg.norm(points - q0, axis=1) + self.radius
        cand = self.tree.query_ball_point(points, bound * (1 + 1e-12) + 1e-12)
        counts = np.array([len(cs) for cs in cand])
        owner = np.repeat(np.arange(len(points)), counts)
        flat = np.fromiter((f for cs in cand for f in cs), dtype=np.int64, count=int(counts.sum()))
        q, bary, feat = closest_point_triangles(points[owner], *(x[faces[flat, k]] for k in range(3)))
        dist = np.linalg.norm(points[owner] - q, axis=1)
        # pick the minimum per owner; lowest face index wins ties
        order = np.lexsort((flat, dist, owner))
        first = np.ones(len(order), dtype=bool)
        first[1:] = owner[order[1:]] != owner[order[:-1]]
        pick = order[first]
        return flat[pick], bary[pick], q[pick], feat[pick], dist[pick]
