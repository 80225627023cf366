# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Single-threaded f32 frame evaluation with all buffers preallocated.

Dense layers store weights input-major with the output axis padded to a
multiple of 8 so the inner accumulation loop vectorizes without a tail.
Every array is allocated in ``__init__``; ``frame`` touches no Python
objects beyond reading the pose array.
"""
import numpy as np

from ..errors import DimensionError

cimport numpy as cnp
from cpython.buffer cimport PyBUF_FORMAT, PyBUF_ANY_CONTIGUOUS, PyBuffer_Release, PyObject_GetBuffer
from libc.math cimport cos, sin
from libc.string cimport memcpy, memset
from posix.time cimport CLOCK_MONOTONIC, clock_gettime, timespec

cdef extern from "_blend.h" nogil:
    void drape_blend(int n, int ks, const int* sup, const float* w, const float* n16,
                     const float* x, float* out)

cnp.import_array()

NAME = "cython"
DEF SLOPE = 0.01


cdef inline int _pad8(int n) noexcept nogil:
    return (n + 7) & ~7


def _aligned(n):
    """Zeroed f32 array of ``n`` values starting on a 64-byte boundary."""
    raw = np.zeros(n + 16, dtype=np.float32)
    off = ((64 - raw.ctypes.data % 64) % 64) // 4
    return raw[off:off + n]


cdef inline double _now() noexcept nogil:
    cdef timespec ts
    clock_gettime(CLOCK_MONOTONIC, &ts)
    return ts.tv_sec * 1e9 + ts.tv_nsec


cdef void _dense(const float* x, int n_in, const float* w, const float* b, int out_pad, float* y) noexcept nogil:
    cdef int i, j
    cdef float xi
    cdef const float* row
    memcpy(y, b, out_pad * sizeof(float))
    for i in range(n_in):
        xi = x[i]
        row = w + <Py_ssize_t>i * out_pad
        for j in range(out_pad):
            y[j] += xi * row[j]


cdef void _compose(const float* a, const float* b, float* out) noexcept nogil:
    """3x4 affine product ``a @ b`` (row-major, implicit last row 0 0 0 1)."""
    cdef int r, c
    for r in range(3):
        for c in range(4):
            out[4 * r + c] = a[4 * r] * b[c] + a[4 * r + 1] * b[4 + c] + a[4 * r + 2] * b[8 + c]
        out[4 * r + 3] += a[4 * r + 3]


cdef class _Mlp:
    cdef public int n_layers
    cdef int[::1] n_in, n_out, out_pad
    cdef Py_ssize_t[::1] w_off, b_off
    cdef float[::1] params
    cdef public int max_pad

    def __init__(self, layers):
        self.n_layers = len(layers)
        self.n_in = np.array([w.shape[0] for w, _ in layers], dtype=np.int32)
        self.n_out = np.array([w.shape[1] for w, _ in layers], dtype=np.int32)
        self.out_pad = np.array([_pad8(w.shape[1]) for w, _ in layers], dtype=np.int32)
        total = 0
        w_off, b_off = [], []
        for w, _ in layers:
            p = _pad8(w.shape[1])
            w_off.append(total)
            total += w.shape[0] * p
            b_off.append(total)
            total += p
            total = (total + 15) & ~15
        buf = _aligned(max(total, 1))
        for (w, b), wo, bo in zip(layers, w_off, b_off):
            p = _pad8(w.shape[1])
            buf[wo:wo + w.shape[0] * p].reshape(w.shape[0], p)[:, :w.shape[1]] = w
            buf[bo:bo + w.shape[1]] = b
        self.params = buf
        self.w_off = np.array(w_off, dtype=np.intp)
        self.b_off = np.array(b_off, dtype=np.intp)
        self.max_pad = max(int(max(self.out_pad)), _pad8(int(self.n_in[0])))

    cdef void run(self, const float* x, const float* gamma, const float* beta,
                  float* h0, float* h1, float* out) noexcept nogil:
        """Modulated forward; ``gamma``/``beta`` cover the hidden widths back to back."""
        cdef int k, j, width
        cdef int off = 0
        cdef float z
        cdef const float* src = x
        cdef float* dst = h0
        cdef float* base = &self.params[0]
        for k in range(self.n_layers - 1):
            width = self.n_out[k]
            _dense(src, self.n_in[k], base + self.w_off[k], base + self.b_off[k], self.out_pad[k], dst)
            for j in range(width):
                z = dst[j]
                if z <= 0:
                    z = SLOPE * z
                dst[j] = gamma[off + j] * z + beta[off + j]
            off += width
            src = dst
            dst = h1 if dst == h0 else h0
        k = self.n_layers - 1
        _dense(src, self.n_in[k], base + self.w_off[k], base + self.b_off[k], self.out_pad[k], out)


cdef class FrameKernel:
    cdef readonly int m, p, n, k_support, n_bones, s_pose, s_node
    cdef _Mlp pose_net, node_net
    cdef int[::1] parents, joint_of_bone, node_bone, support
    cdef unsigned char[::1] moved
    cdef float[::1] rest, rest_inv, centers, rest_flat, weights, garment
    cdef float[::1] body_gamma, body_beta, one_plus
    cdef float[::1] theta, motion, local, rot, chi_skin, node_in, h0, h1, pose_out, deltas, node16
    cdef readonly object out
    cdef float[:, ::1] out_view

    def __init__(self, flat):
        pose_layers = flat.layers("pose")
        node_layers = flat.layers("node")
        self.pose_net = _Mlp(pose_layers)
        self.node_net = _Mlp(node_layers)
        self.p = pose_layers[0][0].shape[0]
        self.m = flat["nodes.centers"].shape[0]
        n_pose, n_node = len(pose_layers), len(node_layers)
        self.s_pose = sum(pose_layers[k][0].shape[1] for k in range(n_pose - 1))
        self.s_node = sum(node_layers[k][0].shape[1] for k in range(n_node - 1))
        if node_layers[0][0].shape[0] != 12 * self.m or pose_layers[n_pose - 1][0].shape[1] != 2 * self.s_node:
            raise ValueError("network dimensions do not match the node count")
        parents = flat.ints("skeleton.parents")
        self.n_bones = len(parents)
        self.parents = parents.astype(np.int32)
        jb = np.full(self.n_bones, -1, dtype=np.int32)
        for j, bone in enumerate(flat.ints("skeleton.active")):
            jb[bone] = j
        self.joint_of_bone = jb
        self.moved = np.zeros(self.n_bones, dtype=np.uint8)
        self.rest = np.ascontiguousarray(flat["skeleton.rest"]).reshape(-1)
        self.rest_inv = np.ascontiguousarray(flat["skeleton.rest_inv"]).reshape(-1)
        self.centers = np.ascontiguousarray(flat["nodes.centers"]).reshape(-1)
        self.node_bone = flat.ints("nodes.bones").astype(np.int32)
        rest_flat = np.zeros((self.m, 12), dtype=np.float32)
        rest_flat[:, 0] = rest_flat[:, 5] = rest_flat[:, 10] = 1.0
        rest_flat[:, 3::4] = flat["nodes.centers"]
        self.rest_flat = rest_flat.reshape(-1)
        support = flat.ints("skin.support")
        self.n, self.k_support = support.shape
        self.support = support.astype(np.int32).reshape(-1)
        self.weights = np.ascontiguousarray(flat["skin.weights"]).reshape(-1)
        self.garment = np.ascontiguousarray(flat["garment.rest"]).reshape(-1)
        self.body_gamma = _aligned(self.s_pose)
        self.body_beta = _aligned(self.s_pose)
        self.set_body_signal(flat["body.gamma"], flat["body.beta"])
        self.one_plus = _aligned(self.s_node)
        width = max(self.pose_net.max_pad, self.node_net.max_pad)
        self.theta = _aligned(_pad8(self.p))
        self.motion = _aligned(12 * self.n_bones)
        self.local = _aligned(24)
        self.rot = _aligned(12)
        self.chi_skin = _aligned(12 * self.m)
        self.node_in = _aligned(12 * self.m)
        self.h0 = _aligned(width)
        self.h1 = _aligned(width)
        self.pose_out = _aligned(_pad8(2 * self.s_node))
        self.deltas = _aligned(_pad8(12 * self.m))
        self.node16 = _aligned(16 * self.m)
        self.out = np.zeros((self.n, 3), dtype=np.float32)
        self.out_view = self.out

    def set_body_signal(self, gamma, beta):
        g = np.asarray(gamma, dtype=np.float32).reshape(-1)
        b = np.asarray(beta, dtype=np.float32).reshape(-1)
        if g.size != self.s_pose or b.size != self.s_pose:
            raise ValueError(f"body signal has size {g.size}, expected {self.s_pose}")
        np.asarray(self.body_gamma)[:] = g
        np.asarray(self.body_beta)[:] = b

    # -- stages ------------------------------------------------------------------

    def load_pose(self, theta):
        """Copy a float32 pose into the kernel."""
        self._load(theta)

    cdef int _load(self, object theta) except -1:
        # ndarrays are read through the C API: GetBuffer on an ndarray
        # allocates a small format record per call
        cdef Py_buffer view
        cdef char code
        cdef cnp.ndarray arr
        if type(theta) is cnp.ndarray:
            arr = <cnp.ndarray>theta
            if cnp.PyArray_TYPE(arr) != cnp.NPY_FLOAT32 or not cnp.PyArray_IS_C_CONTIGUOUS(arr) \
                    or not cnp.PyArray_ISNOTSWAPPED(arr):
                raise TypeError("pose must be a contiguous float32 array")
            if cnp.PyArray_SIZE(arr) != self.p:
                raise DimensionError(f"pose has {cnp.PyArray_SIZE(arr)} values, expected {self.p}")
            memcpy(&self.theta[0], cnp.PyArray_DATA(arr), 4 * self.p)
            return 0
        PyObject_GetBuffer(theta, &view, PyBUF_ANY_CONTIGUOUS | PyBUF_FORMAT)
        try:
            code = view.format[0] if view.format != NULL else 0
            if view.itemsize != 4 or (code != c'f' and code != c'<' and code != c'='):
                raise TypeError("pose must be a contiguous float32 array")
            if view.len != 4 * self.p:
                raise DimensionError(f"pose has {view.len // 4} values, expected {self.p}")
            memcpy(&self.theta[0], view.buf, 4 * self.p)
        finally:
            PyBuffer_Release(&view)
        return 0

    cdef void _skin_nodes(self) noexcept nogil:
        cdef int i, j, r, c, jnt, par
        cdef double a, b, g, ca, sa, cb, sb, cg, sg
        cdef float* mot = &self.motion[0]
        cdef float* loc = &self.local[0]
        cdef float* rot = &self.rot[0]
        cdef float* chi = &self.chi_skin[0]
        cdef float* xin = &self.node_in[0]
        cdef const float* rf = &self.rest_flat[0]
        cdef const float* ctr
        cdef const float* G
        for i in range(self.n_bones):
            par = self.parents[i]
            self.moved[i] = 0 if par < 0 else self.moved[par]
            jnt = self.joint_of_bone[i]
            if jnt >= 0 and (self.theta[3 * jnt] != 0 or self.theta[3 * jnt + 1] != 0 or self.theta[3 * jnt + 2] != 0):
                a = self.theta[3 * jnt]
                b = self.theta[3 * jnt + 1]
                g = self.theta[3 * jnt + 2]
                ca = cos(a); sa = sin(a); cb = cos(b); sb = sin(b); cg = cos(g); sg = sin(g)
                # Rz(g) @ Ry(b) @ Rx(a)
                rot[0] = cg * cb; rot[1] = cg * sb * sa - sg * ca; rot[2] = cg * sb * ca + sg * sa; rot[3] = 0
                rot[4] = sg * cb; rot[5] = sg * sb * sa + cg * ca; rot[6] = sg * sb * ca - cg * sa; rot[7] = 0
                rot[8] = -sb; rot[9] = cb * sa; rot[10] = cb * ca; rot[11] = 0
                _compose(rot, &self.rest_inv[12 * i], loc)
                _compose(&self.rest[12 * i], loc, loc + 12)
                if self.moved[i]:
                    _compose(mot + 12 * par, loc + 12, mot + 12 * i)
                else:
                    memcpy(mot + 12 * i, loc + 12, 12 * sizeof(float))
                self.moved[i] = 1
            elif self.moved[i]:
                memcpy(mot + 12 * i, mot + 12 * par, 12 * sizeof(float))
        for j in range(self.m):
            ctr = &self.centers[3 * j]
            if self.moved[self.node_bone[j]]:
                G = mot + 12 * self.node_bone[j]
                for r in range(3):
                    chi[12 * j + 4 * r] = G[4 * r]
                    chi[12 * j + 4 * r + 1] = G[4 * r + 1]
                    chi[12 * j + 4 * r + 2] = G[4 * r + 2]
                    chi[12 * j + 4 * r + 3] = G[4 * r] * ctr[0] + G[4 * r + 1] * ctr[1] + G[4 * r + 2] * ctr[2] + G[4 * r + 3]
            else:
                memcpy(chi + 12 * j, rf + 12 * j, 12 * sizeof(float))
        for j in range(12 * self.m):
            xin[j] = chi[j] - rf[j]

    cdef void _pose_modulator(self) noexcept nogil:
        cdef int j
        self.pose_net.run(&self.theta[0], &self.body_gamma[0], &self.body_beta[0],
                          &self.h0[0], &self.h1[0], &self.pose_out[0])
        for j in range(self.s_node):
            self.one_plus[j] = 1.0 + self.pose_out[j]

    cdef void _node_deformer(self) noexcept nogil:
        self.node_net.run(&self.node_in[0], &self.one_plus[0], &self.pose_out[self.s_node],
                          &self.h0[0], &self.h1[0], &self.deltas[0])

    cdef void _lbs(self) noexcept nogil:
        cdef int j, r
        cdef int n = self.n, ks = self.k_support
        cdef float t[12]
        cdef float* n16 = &self.node16[0]
        cdef const float* chi = &self.chi_skin[0]
        cdef const float* d = &self.deltas[0]
        cdef const float* ctr = &self.centers[0]
        cdef const int* sup = &self.support[0]
        cdef const float* wts = &self.weights[0]
        cdef const float* x = &self.garment[0]
        cdef float* out = &self.out_view[0, 0]
        for j in range(self.m):
            for r in range(12):
                t[r] = chi[12 * j + r] + d[12 * j + r]
            for r in range(3):
                n16[16 * j + 4 * r] = t[4 * r]
                n16[16 * j + 4 * r + 1] = t[4 * r + 1]
                n16[16 * j + 4 * r + 2] = t[4 * r + 2]
                n16[16 * j + 4 * r + 3] = t[4 * r + 3] - (t[4 * r] * ctr[3 * j] + t[4 * r + 1] * ctr[3 * j + 1]
                                                          + t[4 * r + 2] * ctr[3 * j + 2])
        drape_blend(n, ks, sup, wts, n16, x, out)

    def skin_nodes(self):
        self._skin_nodes()

    def pose_modulator(self):
        self._pose_modulator()

    def node_deformer(self):
        self._node_deformer()

    def lbs(self):
        self._lbs()

    def frame(self, theta):
        """Full per-frame evaluation; the result lands in ``self.out`` (n, 3)."""
        self._load(theta)
        self._skin_nodes()
        self._pose_modulator()
        self._node_deformer()
        self._lbs()

    def time_stages(self, theta, int iterations):
        """Nanosecond timings (iterations, 4): skinning+FK, pose net, node net, LBS."""
        cdef double[:, ::1] t = np.zeros((iterations, 4))
        cdef int it
        cdef double t0, t1, t2, t3, t4
        self._load(theta)
        for it in range(iterations):
            t0 = _now()
            self._skin_nodes()
            t1 = _now()
            self._pose_modulator()
            t2 = _now()
            self._node_deformer()
            t3 = _now()
            self._lbs()
            t4 = _now()
            t[it, 0] = t1 - t0
            t[it, 1] = t2 - t1
            t[it, 2] = t3 - t2
            t[it, 3] = t4 - t3
        return np.asarray(t)

    @property
    def node_transforms(self):
        """Posed node transforms (m, 12) from the last frame."""
        return np.asarray(self.chi_skin).reshape(self.m, 12) + np.asarray(self.deltas)[:12 * self.m].reshape(self.m, 12)
