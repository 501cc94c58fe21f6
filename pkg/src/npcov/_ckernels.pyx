# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Signatures and semantics match the numpy module exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def conv2d_forward(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
                   const double[::1] b, int stride, int padding):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = (H + 2 * padding - KH) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * padding - KW) // stride + 1
    padded = np.zeros((C, H + 2 * padding, W + 2 * padding), dtype=np.float64)
    padded[:, padding:padding + H, padding:padding + W] = x
    cdef const double[:, :, ::1] xp = padded
    out = np.empty((O, HO, WO), dtype=np.float64)
    cdef double[:, :, ::1] z = out
    cdef Py_ssize_t o, c, i, j, p, q
    cdef double wv
    with nogil:
        # taps outermost so the inner loop is branch-free and contiguous
        for o in range(O):
            for i in range(HO):
                for j in range(WO):
                    z[o, i, j] = 0.0
            for c in range(C):
                for p in range(KH):
                    for q in range(KW):
                        wv = w[o, c, p, q]
                        for i in range(HO):
                            for j in range(WO):
                                z[o, i, j] += wv * xp[c, i * stride + p, j * stride + q]
            for i in range(HO):
                for j in range(WO):
                    z[o, i, j] += b[o]
    return out


def conv2d_relevance(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
                     const double[:, :, ::1] z, const double[:, :, ::1] r,
                     int stride, int padding, double eps):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = z.shape[1], WO = z.shape[2]
    ratio = np.zeros((O, HO, WO), dtype=np.float64)
    cdef double[:, :, ::1] s = ratio
    padded = np.zeros((C, H + 2 * padding, W + 2 * padding), dtype=np.float64)
    cdef double[:, :, ::1] acc = padded
    out = np.empty((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] res = out
    cdef Py_ssize_t o, c, i, j, p, q
    cdef double zz, wv
    with nogil:
        for o in range(O):
            for i in range(HO):
                for j in range(WO):
                    zz = z[o, i, j]
                    if zz > 0:
                        s[o, i, j] = r[o, i, j] / (zz + eps)
                    elif zz < 0:
                        s[o, i, j] = r[o, i, j] / (zz - eps)
        for o in range(O):
            for c in range(C):
                for p in range(KH):
                    for q in range(KW):
                        wv = w[o, c, p, q]
                        for i in range(HO):
                            for j in range(WO):
                                acc[c, i * stride + p, j * stride + q] += wv * s[o, i, j]
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    res[c, i, j] = acc[c, i + padding, j + padding] * x[c, i, j]
    return out


def maxpool_forward(const double[:, :, ::1] x, int size, int stride):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t HO = (H - size) // stride + 1
    cdef Py_ssize_t WO = (W - size) // stride + 1
    out = np.empty((C, HO, WO), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t c, i, j, p, q
    cdef double m, v
    with nogil:
        for c in range(C):
            for i in range(HO):
                for j in range(WO):
                    m = x[c, i * stride, j * stride]
                    for p in range(size):
                        for q in range(size):
                            v = x[c, i * stride + p, j * stride + q]
                            if v > m:
                                m = v
                    y[c, i, j] = m
    return out


def maxpool_relevance(const double[:, :, ::1] x, const double[:, :, ::1] y,
                      const double[:, :, ::1] r, int size, int stride):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t HO = y.shape[1], WO = y.shape[2]
    out = np.zeros((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] acc = out
    cdef Py_ssize_t c, i, j, p, q
    cdef double m, share
    cdef int count
    with nogil:
        for c in range(C):
            for i in range(HO):
                for j in range(WO):
                    m = y[c, i, j]
                    count = 0
                    for p in range(size):
                        for q in range(size):
                            if x[c, i * stride + p, j * stride + q] == m:
                                count = count + 1
                    share = r[c, i, j] / count
                    for p in range(size):
                        for q in range(size):
                            if x[c, i * stride + p, j * stride + q] == m:
                                acc[c, i * stride + p, j * stride + q] += share
    return out


def _pack(bits, offsets):
    """Pack each layer of a (N, D) 0/1 matrix into its own run of uint64 words."""
    n = bits.shape[0]
    chunks = []
    word_offsets = [0]
    total = 0
    for l in range(len(offsets) - 1):
        layer = np.ascontiguousarray(bits[:, offsets[l]:offsets[l + 1]], dtype=np.uint8)
        packed = np.packbits(layer, axis=1)
        nbytes = packed.shape[1]
        nwords = max(1, (nbytes + 7) // 8)
        buf = np.zeros((n, nwords * 8), dtype=np.uint8)
        buf[:, :nbytes] = packed
        chunks.append(buf.view(np.uint64))
        total += nwords
        word_offsets.append(total)
    return np.ascontiguousarray(np.concatenate(chunks, axis=1)), np.asarray(word_offsets, dtype=np.intp)


def path_similarity_matrix(a_bits, b_bits, offsets):
    a_packed, word_offsets = _pack(a_bits, offsets)
    b_packed, _ = _pack(b_bits, offsets)
    cdef const uint64_t[:, ::1] A = a_packed
    cdef const uint64_t[:, ::1] B = b_packed
    cdef const Py_ssize_t[::1] wo = word_offsets
    cdef Py_ssize_t NA = A.shape[0], NB = B.shape[0], L = wo.shape[0] - 1
    out = np.empty((NA, NB), dtype=np.float64)
    cdef double[:, ::1] res = out
    sizes_a = np.empty((NA, L), dtype=np.int64)
    sizes_b = np.empty((NB, L), dtype=np.int64)
    cdef long long[:, ::1] sa = sizes_a
    cdef long long[:, ::1] sb = sizes_b
    cdef Py_ssize_t i, j, l, k
    cdef long long inter, union, cnt
    cdef double total
    with nogil:
        for i in range(NA):
            for l in range(L):
                cnt = 0
                for k in range(wo[l], wo[l + 1]):
                    cnt = cnt + __builtin_popcountll(A[i, k])
                sa[i, l] = cnt
        for j in range(NB):
            for l in range(L):
                cnt = 0
                for k in range(wo[l], wo[l + 1]):
                    cnt = cnt + __builtin_popcountll(B[j, k])
                sb[j, l] = cnt
        for i in range(NA):
            for j in range(NB):
                total = 0.0
                for l in range(L):
                    inter = 0
                    for k in range(wo[l], wo[l + 1]):
                        inter = inter + __builtin_popcountll(A[i, k] & B[j, k])
                    union = sa[i, l] + sb[j, l] - inter
                    if union > 0:
                        total = total + (<double>inter) / (<double>union)
                    else:
                        total = total + 1.0
                res[i, j] = total / L
    return out
