# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
# distutils: language = c++
"""Compiled reduction kernels.

Same contracts as _kernels_py: every per-bucket reduction runs over
value-sorted operands (with -0.0 normalized to +0.0 first), so results do
not depend on sample order. Sorted values are combined with Kahan
compensation here, while the numpy fallback uses pairwise summation; the
two backends therefore agree to the last few ulps, not bit-for-bit.
"""

import numpy as np

from libc.math cimport exp
from libc.stdint cimport int64_t
from libcpp.algorithm cimport sort
from libcpp.vector cimport vector

BACKEND = "compiled"


cdef double _kahan_range(const double* vals, size_t m) noexcept nogil:
    cdef double total = 0.0
    cdef double comp = 0.0
    cdef double y, t
    cdef size_t i
    for i in range(m):
        y = vals[i] - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


cdef double _kahan_total(vector[double]& vals) noexcept nogil:
    if vals.empty():
        return 0.0
    return _kahan_range(vals.data(), vals.size())


def pooled_class_stats(acts, labels, int num_classes):
    """Per-class, per-channel activation count, sum, and centered second
    moment, pooling all samples of the class with every spatial position.

    acts: (N, C, S) float64; labels: (N,) int64 in [0, num_classes).
    Returns (counts (Y,) sample counts, sums (Y, C), m2s (Y, C)).
    """
    acts_c = np.ascontiguousarray(acts, dtype=np.float64)
    labels_c = np.ascontiguousarray(labels, dtype=np.int64)
    cdef const double[:, :, ::1] a = acts_c
    cdef const int64_t[::1] lab = labels_c
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t c = a.shape[1]
    cdef Py_ssize_t s = a.shape[2]
    if lab.shape[0] != n:
        raise ValueError("labels length does not match activations")

    counts = np.zeros(num_classes, dtype=np.int64)
    sums = np.zeros((num_classes, c), dtype=np.float64)
    m2s = np.zeros((num_classes, c), dtype=np.float64)
    cdef int64_t[::1] cnt = counts
    cdef double[:, ::1] sm = sums
    cdef double[:, ::1] m2 = m2s

    cdef Py_ssize_t i, j, k
    cdef int y
    cdef vector[vector[int64_t]] idx = vector[vector[int64_t]](num_classes)
    for i in range(n):
        if lab[i] < 0 or lab[i] >= num_classes:
            raise ValueError("label out of range")
        cnt[lab[i]] += 1
        idx[lab[i]].push_back(i)

    # One class at a time: copy the class block channel-major (sequential
    # reads over the samples, the working set stays cache-sized), then sort
    # and reduce each channel's now-contiguous segment.
    cdef vector[double] tr
    cdef double* seg
    cdef size_t b, p, m, seglen
    cdef double total, mean, dev
    with nogil:
        for y in range(num_classes):
            m = idx[y].size()
            if m == 0:
                continue
            seglen = m * <size_t> s
            tr.resize(<size_t> c * seglen)
            for p in range(m):
                i = idx[y][p]
                for j in range(c):
                    for k in range(s):
                        tr[<size_t> j * seglen + p * <size_t> s + <size_t> k] = (
                            a[i, j, k] + 0.0
                        )
            for j in range(c):
                seg = tr.data() + <size_t> j * seglen
                sort(seg, seg + seglen)
                total = _kahan_range(seg, seglen)
                sm[y, j] = total
                mean = total / (<double> cnt[y] * <double> s)
                for b in range(seglen):
                    dev = seg[b] - mean
                    seg[b] = dev * dev
                m2[y, j] = _kahan_range(seg, seglen)
    return counts, sums, m2s


cdef inline double _rbf(const double[:, ::1] x, Py_ssize_t i, Py_ssize_t j,
                        Py_ssize_t d, double inv) noexcept nogil:
    cdef double acc = 0.0
    cdef double diff
    cdef Py_ssize_t k
    for k in range(d):
        diff = x[i, k] - x[j, k]
        acc += diff * diff
    return exp(-acc * inv)


def rbf_block_sums(x, labels, int num_classes, double sigma):
    """Class-blocked sums of the rbf kernel matrix for sample rows of x.

    Off-diagonal entry (a, b) is the sum over all cross pairs; diagonal
    entry (a, a) is the full n_a x n_a block sum including the n_a unit
    self-pairs. Each block materializes its pair kernels, so memory is
    O(n_a * n_b) per block.
    """
    x_c = np.ascontiguousarray(x, dtype=np.float64)
    labels_c = np.ascontiguousarray(labels, dtype=np.int64)
    cdef const double[:, ::1] xv = x_c
    cdef const int64_t[::1] lab = labels_c
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t d = xv.shape[1]
    if lab.shape[0] != n:
        raise ValueError("labels length does not match samples")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")

    out = np.zeros((num_classes, num_classes), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double inv = 1.0 / (2.0 * sigma * sigma)

    cdef vector[vector[Py_ssize_t]] idx = vector[vector[Py_ssize_t]](num_classes)
    cdef Py_ssize_t i
    for i in range(n):
        if lab[i] < 0 or lab[i] >= num_classes:
            raise ValueError("label out of range")
        idx[lab[i]].push_back(i)

    cdef vector[double] buf
    cdef Py_ssize_t ca, cb, p, q, na, nb
    cdef double total
    with nogil:
        for ca in range(num_classes):
            na = <Py_ssize_t> idx[ca].size()
            buf.clear()
            for p in range(na):
                for q in range(p + 1, na):
                    buf.push_back(_rbf(xv, idx[ca][p], idx[ca][q], d, inv))
            sort(buf.begin(), buf.end())
            total = _kahan_total(buf)
            o[ca, ca] = 2.0 * total + <double> na
            for cb in range(ca + 1, num_classes):
                nb = <Py_ssize_t> idx[cb].size()
                buf.clear()
                for p in range(na):
                    for q in range(nb):
                        buf.push_back(_rbf(xv, idx[ca][p], idx[cb][q], d, inv))
                sort(buf.begin(), buf.end())
                total = _kahan_total(buf)
                o[ca, cb] = total
                o[cb, ca] = total
    return out
