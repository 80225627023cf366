"""Drape quality metrics: edge/area strain, body penetration, point-set distance."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import RestState, TriMesh, triangle_areas


def strain_metrics(rest: RestState, mesh: TriMesh, x):
    """Mean absolute relative edge-length and face-area change, in percent."""
    x = np.asarray(x, dtype=np.float64)
    e = mesh.edges
    lengths = np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1)
    eps_e = 100.0 * float(np.mean(np.abs(lengths - rest.rest_edge_lengths) / rest.rest_edge_lengths))
    areas = triangle_areas(x, mesh.faces)
    eps_a = 100.0 * float(np.mean(np.abs(areas - rest.rest_areas) / rest.rest_areas))
    return eps_e, eps_a


def collision_metric(collider, x) -> float:
    """Percentage of vertices strictly inside the body."""
    sd, _ = collider.query(np.asarray(x, dtype=np.float64))
    return 100.0 * float(np.count_nonzero(sd < 0.0)) / len(sd)


def directed_distances(a, b):
    """Distance from every point of ``a`` to its nearest point of ``b``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be non-empty")
    d, _ = cKDTree(b).query(a)
    return d


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    return float(max(directed_distances(a, b).max(), directed_distances(b, a).max()))


def render_table(rows, columns=("eps_e", "eps_a", "eps_c"), label="method") -> str:
    """Aligned plain-text table; ``rows`` are dicts with ``label`` plus metric columns."""
    heads = [label, *columns]
    cells = [[str(r.get(label, ""))] + [f"{r[c]:.3f}" if isinstance(r.get(c), float) else str(r.get(c, ""))
                                       for c in columns] for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h) for i, h in enumerate(heads)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(heads, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(c, widths))))
    return "\n".join(lines)
