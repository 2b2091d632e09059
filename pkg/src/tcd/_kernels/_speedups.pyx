# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pixel kernels (same contract as ``_fallback``)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def rasterize_rings(rings, width, height, origin_col=0.0, origin_row=0.0):
    cdef int w = int(width)
    cdef int h = int(height)
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr

    edges = []
    for ring in rings:
        pts = np.asarray(ring, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 3:
            continue
        if np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        if pts.shape[0] < 3:
            continue
        nxt = np.roll(pts, -1, axis=0)
        keep = pts[:, 1] != nxt[:, 1]
        if keep.any():
            edges.append(np.column_stack([pts[keep], nxt[keep]]))
    if not edges:
        return out_arr
    e = np.ascontiguousarray(np.concatenate(edges))
    cdef double[:, ::1] ev = e
    cdef Py_ssize_t n_edges = ev.shape[0]
    xs_arr = np.empty(n_edges, dtype=np.float64)
    cdef double[::1] xs = xs_arr

    cdef double ocol = origin_col
    cdef double orow = origin_row
    cdef double yc, x1, y1, x2, y2, t, tmp
    cdef Py_ssize_t row, i, j, k, n_hit
    cdef int lo, hi, col

    for row in range(h):
        yc = orow + row + 0.5
        n_hit = 0
        for i in range(n_edges):
            x1 = ev[i, 0]; y1 = ev[i, 1]; x2 = ev[i, 2]; y2 = ev[i, 3]
            if (y1 <= yc < y2) or (y2 <= yc < y1):
                t = (yc - y1) / (y2 - y1)
                xs[n_hit] = x1 + t * (x2 - x1)
                n_hit += 1
        if n_hit == 0:
            continue
        # insertion sort; crossing counts per row are small
        for i in range(1, n_hit):
            tmp = xs[i]
            j = i - 1
            while j >= 0 and xs[j] > tmp:
                xs[j + 1] = xs[j]
                j -= 1
            xs[j + 1] = tmp
        for k in range(0, n_hit - 1, 2):
            lo = <int>ceil_d(xs[k] - ocol - 0.5)
            hi = <int>ceil_d(xs[k + 1] - ocol - 0.5)
            if lo < 0:
                lo = 0
            if hi > w:
                hi = w
            for col in range(lo, hi):
                out[row, col] = 1
    return out_arr


cdef inline double ceil_d(double x):
    cdef double f = <double>(<long long>x)
    if x > f:
        return f + 1.0
    return f


def confusion_counts(pred, gt, valid=None):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    cdef cnp.ndarray p = np.ascontiguousarray(pred.astype(np.uint8, copy=False).ravel())
    cdef cnp.ndarray g = np.ascontiguousarray(gt.astype(np.uint8, copy=False).ravel())
    cdef unsigned char[::1] pv = p
    cdef unsigned char[::1] gv = g
    cdef unsigned char[::1] vv
    cdef Py_ssize_t i, n = pv.shape[0]
    # Branchless histogram over the 2-bit (pred, gt) code; the compiler can
    # keep the whole loop in registers and vectorize it.
    cdef long long counts[4]
    counts[0] = counts[1] = counts[2] = counts[3] = 0
    if valid is not None:
        v = np.ascontiguousarray(np.asarray(valid).astype(np.uint8, copy=False).ravel())
        if v.shape[0] != n:
            raise ValueError("valid mask shape mismatch")
        vv = v
        for i in range(n):
            counts[((pv[i] != 0) << 1) | (gv[i] != 0)] += vv[i] != 0
    else:
        for i in range(n):
            counts[((pv[i] != 0) << 1) | (gv[i] != 0)] += 1
    # code 0b11 = both positive, 0b10 = pred only, 0b01 = gt only.
    return int(counts[3]), int(counts[2]), int(counts[1]), int(counts[0])


def block_all_equal(block, value):
    arr = np.asarray(block)
    if arr.dtype == np.uint8:
        return _all_equal_u8(np.ascontiguousarray(arr.ravel()), int(value))
    return bool((arr == value).all())


cdef bint _all_equal_u8(const unsigned char[::1] data, int value):
    cdef Py_ssize_t n = data.shape[0]
    if n == 0:
        return True
    cdef const unsigned char* ptr = &data[0]
    # Compare 8 bytes at a time against the broadcast byte pattern.
    cdef unsigned long long pattern = <unsigned char>value
    pattern |= pattern << 8
    pattern |= pattern << 16
    pattern |= pattern << 32
    cdef const unsigned long long* words = <const unsigned long long*>ptr
    cdef Py_ssize_t n_words = n >> 3
    cdef Py_ssize_t i
    for i in range(n_words):
        if words[i] != pattern:
            return False
    for i in range(n_words << 3, n):
        if ptr[i] != <unsigned char>value:
            return False
    return True
