"""Pure numpy implementations of the hot kernels.

Mirrors ``drape._kernels`` function for function; every function that takes a
``grad`` array *accumulates* into it and returns the energy.
"""
import numpy as np

NAME = "python"


def stvk(x, faces, dm_inv, areas, mu, lam, grad=None):
    t = x[faces]
    ds = np.stack([t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]], axis=2)      # (F, 3, 2)
    f = ds @ dm_inv                                                     # (F, 3, 2)
    c = np.einsum("fki,fkj->fij", f, f)
    e00 = 0.5 * (c[:, 0, 0] - 1.0)
    e11 = 0.5 * (c[:, 1, 1] - 1.0)
    e01 = 0.5 * c[:, 0, 1]
    tr = e00 + e11
    psi = mu * (e00 * e00 + 2.0 * e01 * e01 + e11 * e11) + 0.5 * lam * tr * tr
    energy = float(np.dot(areas, psi))
    if grad is not None:
        s = np.empty((len(faces), 2, 2))
        s[:, 0, 0] = 2.0 * mu * e00 + lam * tr
        s[:, 1, 1] = 2.0 * mu * e11 + lam * tr
        s[:, 0, 1] = s[:, 1, 0] = 2.0 * mu * e01
        h = areas[:, None, None] * (f @ s) @ np.transpose(dm_inv, (0, 2, 1))
        g1 = h[:, :, 0]
        g2 = h[:, :, 1]
        for k, g in ((0, -g1 - g2), (1, g1), (2, g2)):
            for d in range(3):
                grad[:, d] += np.bincount(faces[:, k], weights=g[:, d], minlength=len(x))
    return energy


def bending(x, hinges, rest_theta, hinge_w, kb, grad=None):
    if len(hinges) == 0:
        return 0.0
    x0, x1, xa, xb = (x[hinges[:, k]] for k in range(4))
    e = x1 - x0
    length = np.linalg.norm(e, axis=1)
    en = e / length[:, None]
    n1 = np.cross(e, xa - x0)
    n2 = np.cross(-e, xb - x1)
    sin = np.einsum("ij,ij->i", np.cross(n1, n2), en)
    cos = np.einsum("ij,ij->i", n1, n2)
    theta = np.arctan2(sin, cos)
    diff = theta - rest_theta
    energy = float(kb * np.dot(hinge_w, diff * diff))
    if grad is not None:
        coef = (2.0 * kb * hinge_w * diff)[:, None]
        q1 = n1 / np.einsum("ij,ij->i", n1, n1)[:, None]
        q2 = n2 / np.einsum("ij,ij->i", n2, n2)[:, None]
        ga = -length[:, None] * q1
        gb = -length[:, None] * q2
        g0 = -np.einsum("ij,ij->i", xa - x1, en)[:, None] * q1 - np.einsum("ij,ij->i", xb - x1, en)[:, None] * q2
        g1 = np.einsum("ij,ij->i", xa - x0, en)[:, None] * q1 + np.einsum("ij,ij->i", xb - x0, en)[:, None] * q2
        for k, g in enumerate((g0, g1, ga, gb)):
            g = coef * g
            for d in range(3):
                grad[:, d] += np.bincount(hinges[:, k], weights=g[:, d], minlength=len(x))
    return energy


def capsule_sdf(points, p0, p1, radii):
    """Signed distance to a union of capsules and its unit outward gradient."""
    n = len(points)
    best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    for a, b, r in zip(p0, p1, radii):
        ab = b - a
        denom = float(ab @ ab)
        ap = points - a
        if denom > 0.0:
            t = np.clip(ap @ ab / denom, 0.0, 1.0)
        else:
            t = np.zeros(n)
        d = ap - t[:, None] * ab
        dist = np.linalg.norm(d, axis=1)
        sd = dist - r
        take = sd < best
        if np.any(take):
            dd = d[take]
            dn = dist[take]
            zero = dn == 0.0
            if np.any(zero):
                dd[zero] = _perpendicular(ab)
                dn = np.where(zero, 1.0, dn)
            normal[take] = dd / dn[:, None]
            best[take] = sd[take]
    return best, normal


def _perpendicular(v):
    # deterministic unit vector orthogonal to v (any unit vector if v == 0)
    if not np.any(v):
        return np.array([0.0, 1.0, 0.0])
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(v)))] = 1.0
    p = np.cross(v, axis)
    return p / np.linalg.norm(p)


def capsule_collision(x, p0, p1, radii, stiffness, margin, grad=None):
    sd, normal = capsule_sdf(x, p0, p1, radii)
    pen = np.maximum(0.0, margin - sd)
    energy = float(stiffness * np.dot(pen, pen))
    if grad is not None:
        grad -= (2.0 * stiffness * pen)[:, None] * normal
    return energy


def lbs_forward(rest_x, idx, w, chi, centers, out):
    """``out[j] = sum_k w[j,k] * (A_i (x_j - c_i) + t_i)`` with ``i = idx[j,k]``."""
    r = rest_x[:, None, :] - centers[idx]
    m = chi.reshape(-1, 3, 4)[idx]
    y = np.einsum("nkij,nkj->nki", m[..., :3], r) + m[..., 3]
    out[...] = np.einsum("nk,nki->ni", w, y)
    return out


def lbs_backward(rest_x, idx, w, chi, centers, gout, gchi, gw):
    """Accumulates d/dchi into ``gchi`` (m, 12); writes d/dw into ``gw`` (n, K)."""
    r = rest_x[:, None, :] - centers[idx]
    m = chi.reshape(-1, 3, 4)[idx]
    y = np.einsum("nkij,nkj->nki", m[..., :3], r) + m[..., 3]
    gw[...] = np.einsum("nki,ni->nk", y, gout)
    wg = w[:, :, None] * gout[:, None, :]                               # (n, K, 3)
    flat = idx.ravel()
    nodes = len(gchi)
    for i in range(3):
        for j in range(3):
            gchi[:, 4 * i + j] += np.bincount(flat, weights=(wg[..., i] * r[..., j]).ravel(), minlength=nodes)
        gchi[:, 4 * i + 3] += np.bincount(flat, weights=wg[..., i].ravel(), minlength=nodes)
