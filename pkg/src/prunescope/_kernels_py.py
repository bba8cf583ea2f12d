"""Reference numpy implementations of the hot kernels.

These are the fallback for environments without the compiled extension.
Per-bucket reductions run over value-sorted operands so results do not
depend on sample order; -0.0 is normalized first so the sorted byte
sequence is unique.
"""

import numpy as np

BACKEND = "numpy"

# Row-block size for pairwise distance tiles, keeps peak memory flat.
_TILE = 64


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError("labels length does not match samples")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label out of range")


def pooled_class_stats(acts, labels, num_classes):
    """Per-class, per-channel activation sums and centered second moments.

    acts: (N, C, S) float64, S = flattened spatial size.
    Returns (counts, sums, m2s): sample counts (Y,), pooled sums (Y, C),
    and sums of squared deviations from the class mean (Y, C). Within a
    class all N_y * S values of a channel enter the sums in value order,
    so any permutation of the samples reproduces the same bits.
    """
    n, c, s = acts.shape
    _check_labels(labels, n, num_classes)
    counts = np.zeros(num_classes, dtype=np.int64)
    sums = np.zeros((num_classes, c), dtype=np.float64)
    m2s = np.zeros((num_classes, c), dtype=np.float64)
    for y in range(num_classes):
        rows = np.nonzero(labels == y)[0]
        counts[y] = rows.size
        if rows.size == 0:
            continue
        # (C, N_y * S), +0.0 canonicalizes signed zeros before sorting.
        vals = acts[rows].transpose(1, 0, 2).reshape(c, -1) + 0.0
        vals.sort(axis=1)
        sums[y] = vals.sum(axis=1)
        mean = sums[y] / (rows.size * s)
        dev = vals - mean[:, None]
        m2s[y] = (dev * dev).sum(axis=1)
    return counts, sums, m2s


def _kernel_tile(xa, xb, inv):
    """RBF kernel values for one row tile, distances summed per pair."""
    diff = xa[:, None, :] - xb[None, :, :]
    dist = (diff * diff).sum(axis=2)
    return np.exp(-dist * inv)


def rbf_block_sums(x, labels, num_classes, sigma):
    """Class-pair sums of the Gaussian kernel, self-pairs included.

    x: (N, D) float64. Entry (a, b) of the result is the sum of
    exp(-|x_i - x_j|^2 / (2 sigma^2)) over all i in class a, j in class b.
    Off-diagonal and strict-upper within-class values are sorted before
    summing; the diagonal contributes exactly 1.0 per sample.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    _check_labels(labels, x.shape[0], num_classes)
    inv = 1.0 / (2.0 * sigma * sigma)
    out = np.zeros((num_classes, num_classes), dtype=np.float64)
    index = [np.nonzero(labels == y)[0] for y in range(num_classes)]
    for a in range(num_classes):
        xa = x[index[a]]
        na = xa.shape[0]
        if na == 0:
            continue
        # Within-class block: strict upper triangle, then mirrored.
        parts = []
        for lo in range(0, na, _TILE):
            hi = min(lo + _TILE, na)
            tile = _kernel_tile(xa[lo:hi], xa, inv)
            for r in range(hi - lo):
                parts.append(tile[r, lo + r + 1 :])
        if parts:
            upper = np.concatenate(parts)
            upper.sort()
            out[a, a] = 2.0 * upper.sum() + na
        else:
            out[a, a] = float(na)
        for b in range(a + 1, num_classes):
            xb = x[index[b]]
            if xb.shape[0] == 0:
                continue
            parts = [
                _kernel_tile(xa[lo : min(lo + _TILE, na)], xb, inv).ravel()
                for lo in range(0, na, _TILE)
            ]
            vals = np.concatenate(parts)
            vals.sort()
            out[a, b] = out[b, a] = vals.sum()
    return out
