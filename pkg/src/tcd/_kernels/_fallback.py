"""Pure numpy implementations of the pixel kernels."""

import numpy as np


def rasterize_rings(rings, width, height, origin_col=0.0, origin_row=0.0):
    """Even-odd scanline fill of polygon rings over a pixel grid.

    A pixel is set iff its center ``(col + 0.5, row + 0.5)`` (offset by the
    window origin) lies inside the union of rings under the even-odd rule,
    so hole rings subtract naturally.

    rings: iterable of (N, 2) float arrays of (x, y) vertices.  Rings need
    not repeat their first vertex; closure is implicit.
    Returns a (height, width) uint8 mask.
    """
    out = np.zeros((int(height), int(width)), dtype=np.uint8)
    x1s, y1s, x2s, y2s = [], [], [], []
    for ring in rings:
        pts = np.asarray(ring, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 3:
            continue
        if np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        if pts.shape[0] < 3:
            continue
        nxt = np.roll(pts, -1, axis=0)
        x1s.append(pts[:, 0])
        y1s.append(pts[:, 1])
        x2s.append(nxt[:, 0])
        y2s.append(nxt[:, 1])
    if not x1s:
        return out
    x1 = np.concatenate(x1s)
    y1 = np.concatenate(y1s)
    x2 = np.concatenate(x2s)
    y2 = np.concatenate(y2s)
    nonhoriz = y1 != y2
    x1, y1, x2, y2 = x1[nonhoriz], y1[nonhoriz], x2[nonhoriz], y2[nonhoriz]
    if x1.size == 0:
        return out

    for row in range(int(height)):
        yc = origin_row + row + 0.5
        # Half-open crossing rule: count an edge iff yc is in [min, max).
        hit = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not hit.any():
            continue
        t = (yc - y1[hit]) / (y2[hit] - y1[hit])
        xs = np.sort(x1[hit] + t * (x2[hit] - x1[hit]))
        for i in range(0, xs.size - 1, 2):
            # Pixel centers strictly between the crossing pair are inside.
            lo = int(np.ceil(xs[i] - origin_col - 0.5))
            hi = int(np.ceil(xs[i + 1] - origin_col - 0.5))
            lo = max(lo, 0)
            hi = min(hi, int(width))
            if hi > lo:
                out[row, lo:hi] = 1
    return out


def confusion_counts(pred, gt, valid=None):
    """Pixel confusion counts (tp, fp, fn, tn) for binary uint8 masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool).ravel()
    g = gt.astype(bool).ravel()
    if valid is not None:
        v = np.asarray(valid).astype(bool).ravel()
        p = p[v]
        g = g[v]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return tp, fp, fn, tn


def block_all_equal(block, value):
    """True iff every sample in the block equals ``value``."""
    return bool((np.asarray(block) == value).all())
