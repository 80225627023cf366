# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: cloth energies, capsule distance and sparse LBS.

Same contract as ``drape._kernels_py``; grad arrays are accumulated into.
Summation order is fixed (face/hinge/vertex order) so results are
bit-reproducible run to run.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, fabs, INFINITY

cnp.import_array()

NAME = "cython"


def stvk(const double[:, ::1] x, const cnp.int64_t[:, ::1] faces, const double[:, :, ::1] dm_inv,
         const double[::1] areas, double mu, double lam, double[:, ::1] grad=None):
    cdef Py_ssize_t f, d, nf = faces.shape[0]
    cdef cnp.int64_t i0, i1, i2
    cdef double e1[3]
    cdef double e2[3]
    cdef double F0[3]
    cdef double F1[3]
    cdef double a00, a01, a10, a11, c00, c01, c11, E00, E01, E11, tr, s00, s01, s11
    cdef double P0, P1, g1, g2, area, energy = 0.0
    cdef bint want = grad is not None
    for f in range(nf):
        i0 = faces[f, 0]; i1 = faces[f, 1]; i2 = faces[f, 2]
        a00 = dm_inv[f, 0, 0]; a01 = dm_inv[f, 0, 1]; a10 = dm_inv[f, 1, 0]; a11 = dm_inv[f, 1, 1]
        for d in range(3):
            e1[d] = x[i1, d] - x[i0, d]
            e2[d] = x[i2, d] - x[i0, d]
            F0[d] = e1[d] * a00 + e2[d] * a10
            F1[d] = e1[d] * a01 + e2[d] * a11
        c00 = F0[0] * F0[0] + F0[1] * F0[1] + F0[2] * F0[2]
        c11 = F1[0] * F1[0] + F1[1] * F1[1] + F1[2] * F1[2]
        c01 = F0[0] * F1[0] + F0[1] * F1[1] + F0[2] * F1[2]
        E00 = 0.5 * (c00 - 1.0)
        E11 = 0.5 * (c11 - 1.0)
        E01 = 0.5 * c01
        tr = E00 + E11
        area = areas[f]
        energy += area * (mu * (E00 * E00 + 2.0 * E01 * E01 + E11 * E11) + 0.5 * lam * tr * tr)
        if want:
            s00 = 2.0 * mu * E00 + lam * tr
            s11 = 2.0 * mu * E11 + lam * tr
            s01 = 2.0 * mu * E01
            for d in range(3):
                P0 = F0[d] * s00 + F1[d] * s01
                P1 = F0[d] * s01 + F1[d] * s11
                g1 = area * (P0 * a00 + P1 * a01)
                g2 = area * (P0 * a10 + P1 * a11)
                grad[i1, d] += g1
                grad[i2, d] += g2
                grad[i0, d] -= g1 + g2
    return energy


cdef inline void _cross(const double* a, const double* b, double* out) nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _dot(const double* a, const double* b) nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def bending(const double[:, ::1] x, const cnp.int64_t[:, ::1] hinges, const double[::1] rest_theta,
            const double[::1] hinge_w, double kb, double[:, ::1] grad=None):
    cdef Py_ssize_t h, d, nh = hinges.shape[0]
    cdef cnp.int64_t v0, v1, va, vb
    cdef double e[3]
    cdef double ne[3]
    cdef double ua[3]
    cdef double ub[3]
    cdef double n1[3]
    cdef double n2[3]
    cdef double c12[3]
    cdef double r[3]
    cdef double length, theta, diff, coef, nn1, nn2, pa1, pb1, pa0, pb0, q1, q2
    cdef double energy = 0.0
    cdef bint want = grad is not None
    for h in range(nh):
        v0 = hinges[h, 0]; v1 = hinges[h, 1]; va = hinges[h, 2]; vb = hinges[h, 3]
        for d in range(3):
            e[d] = x[v1, d] - x[v0, d]
            ne[d] = -e[d]
            ua[d] = x[va, d] - x[v0, d]
            ub[d] = x[vb, d] - x[v1, d]
        _cross(e, ua, n1)
        _cross(ne, ub, n2)
        length = sqrt(_dot(e, e))
        _cross(n1, n2, c12)
        theta = atan2(_dot(c12, e) / length, _dot(n1, n2))
        diff = theta - rest_theta[h]
        energy += kb * hinge_w[h] * diff * diff
        if want:
            coef = 2.0 * kb * hinge_w[h] * diff
            nn1 = _dot(n1, n1)
            nn2 = _dot(n2, n2)
            # projections onto the unit edge direction
            for d in range(3):
                r[d] = x[va, d] - x[v1, d]
            pa1 = _dot(r, e) / length
            for d in range(3):
                r[d] = x[vb, d] - x[v1, d]
            pb1 = _dot(r, e) / length
            pa0 = _dot(ua, e) / length
            for d in range(3):
                r[d] = x[vb, d] - x[v0, d]
            pb0 = _dot(r, e) / length
            for d in range(3):
                q1 = coef * n1[d] / nn1
                q2 = coef * n2[d] / nn2
                grad[va, d] -= length * q1
                grad[vb, d] -= length * q2
                grad[v0, d] -= pa1 * q1 + pb1 * q2
                grad[v1, d] += pa0 * q1 + pb0 * q2
    return energy


cdef void _perpendicular(const double* v, double* out) nogil:
    cdef double ax[3]
    cdef double n
    cdef int k = 0
    if v[0] == 0.0 and v[1] == 0.0 and v[2] == 0.0:
        out[0] = 0.0; out[1] = 1.0; out[2] = 0.0
        return
    ax[0] = 0.0; ax[1] = 0.0; ax[2] = 0.0
    if fabs(v[1]) < fabs(v[k]):
        k = 1
    if fabs(v[2]) < fabs(v[k]):
        k = 2
    ax[k] = 1.0
    _cross(v, ax, out)
    n = sqrt(_dot(out, out))
    out[0] /= n; out[1] /= n; out[2] /= n


cdef void _capsule_query(const double* p, const double[:, ::1] p0, const double[:, ::1] p1,
                         const double[::1] radii, double* sd_out, double* normal) nogil:
    cdef Py_ssize_t c, d, nc = p0.shape[0]
    cdef double ab[3]
    cdef double ap[3]
    cdef double dv[3]
    cdef double denom, t, dist, sd, best = INFINITY
    for c in range(nc):
        for d in range(3):
            ab[d] = p1[c, d] - p0[c, d]
            ap[d] = p[d] - p0[c, d]
        denom = _dot(ab, ab)
        t = 0.0
        if denom > 0.0:
            t = _dot(ap, ab) / denom
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        for d in range(3):
            dv[d] = ap[d] - t * ab[d]
        dist = sqrt(_dot(dv, dv))
        sd = dist - radii[c]
        if sd < best:
            best = sd
            if dist == 0.0:
                _perpendicular(ab, normal)
            else:
                for d in range(3):
                    normal[d] = dv[d] / dist
    sd_out[0] = best


def capsule_sdf(const double[:, ::1] points, const double[:, ::1] p0, const double[:, ::1] p1,
                const double[::1] radii):
    cdef Py_ssize_t i, n = points.shape[0]
    sd = np.empty(n)
    normal = np.zeros((n, 3))
    cdef double[::1] sdv = sd
    cdef double[:, ::1] nv = normal
    for i in range(n):
        _capsule_query(&points[i, 0], p0, p1, radii, &sdv[i], &nv[i, 0])
    return sd, normal


def capsule_collision(const double[:, ::1] x, const double[:, ::1] p0, const double[:, ::1] p1,
                      const double[::1] radii, double stiffness, double margin, double[:, ::1] grad=None):
    cdef Py_ssize_t i, d, n = x.shape[0]
    cdef double sd, pen, energy = 0.0
    cdef double normal[3]
    cdef bint want = grad is not None
    for i in range(n):
        _capsule_query(&x[i, 0], p0, p1, radii, &sd, normal)
        pen = margin - sd
        if pen > 0.0:
            energy += stiffness * pen * pen
            if want:
                for d in range(3):
                    grad[i, d] -= 2.0 * stiffness * pen * normal[d]
    return energy


def lbs_forward(const double[:, ::1] rest_x, const cnp.int64_t[:, ::1] idx, const double[:, ::1] w,
                const double[:, ::1] chi, const double[:, ::1] centers, double[:, ::1] out):
    cdef Py_ssize_t j, k, i, K = idx.shape[1], n = rest_x.shape[0]
    cdef cnp.int64_t node
    cdef double r0, r1, r2, wk, acc0, acc1, acc2
    for j in range(n):
        acc0 = 0.0; acc1 = 0.0; acc2 = 0.0
        for k in range(K):
            node = idx[j, k]
            wk = w[j, k]
            r0 = rest_x[j, 0] - centers[node, 0]
            r1 = rest_x[j, 1] - centers[node, 1]
            r2 = rest_x[j, 2] - centers[node, 2]
            acc0 += wk * (chi[node, 0] * r0 + chi[node, 1] * r1 + chi[node, 2] * r2 + chi[node, 3])
            acc1 += wk * (chi[node, 4] * r0 + chi[node, 5] * r1 + chi[node, 6] * r2 + chi[node, 7])
            acc2 += wk * (chi[node, 8] * r0 + chi[node, 9] * r1 + chi[node, 10] * r2 + chi[node, 11])
        out[j, 0] = acc0
        out[j, 1] = acc1
        out[j, 2] = acc2
    return np.asarray(out)


def lbs_backward(const double[:, ::1] rest_x, const cnp.int64_t[:, ::1] idx, const double[:, ::1] w,
                 const double[:, ::1] chi, const double[:, ::1] centers, const double[:, ::1] gout,
                 double[:, ::1] gchi, double[:, ::1] gw):
    cdef Py_ssize_t j, k, a, K = idx.shape[1], n = rest_x.shape[0]
    cdef cnp.int64_t node
    cdef double r[3]
    cdef double y, wg, acc
    for j in range(n):
        for k in range(K):
            node = idx[j, k]
            r[0] = rest_x[j, 0] - centers[node, 0]
            r[1] = rest_x[j, 1] - centers[node, 1]
            r[2] = rest_x[j, 2] - centers[node, 2]
            acc = 0.0
            for a in range(3):
                y = chi[node, 4 * a] * r[0] + chi[node, 4 * a + 1] * r[1] + chi[node, 4 * a + 2] * r[2] + chi[node, 4 * a + 3]
                acc += y * gout[j, a]
                wg = w[j, k] * gout[j, a]
                gchi[node, 4 * a] += wg * r[0]
                gchi[node, 4 * a + 1] += wg * r[1]
                gchi[node, 4 * a + 2] += wg * r[2]
                gchi[node, 4 * a + 3] += wg
            gw[j, k] = acc
