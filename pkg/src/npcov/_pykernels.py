"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors every function
with explicit loops.  Array arguments are float64 C-contiguous unless noted.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, b, stride, padding):
    """Cross-correlation of a (C, H, W) input with (O, C, kh, kw) filters."""
    kh, kw = w.shape[2], w.shape[3]
    xp = _pad(x, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: (C, Ho, Wo, kh, kw)
    z = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    z += b[:, None, None]
    return np.ascontiguousarray(z)


def conv2d_relevance(x, w, z, r, stride, padding, eps):
    """Epsilon-rule relevance from conv outputs back to the conv input."""
    denom = z + eps * np.sign(z)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom != 0)
    c, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = z.shape[1], z.shape[2]
    acc = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(w[:, :, i, j], s, axes=([0], [0]))
            acc[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
    if padding:
        acc = acc[:, padding:padding + h, padding:padding + wd]
    return x * acc


def maxpool_forward(x, size, stride):
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(win.max(axis=(3, 4)))


def maxpool_relevance(x, y, r, size, stride):
    """Route each pooled output's relevance to its winning input(s).

    Tied winners share the relevance equally.
    """
    c, ho, wo = y.shape
    out = np.zeros_like(x)
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    hit = win == y[:, :, :, None, None]
    counts = hit.sum(axis=(3, 4))
    share = r / counts
    for i in range(size):
        for j in range(size):
            out[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += np.where(
                hit[:, :, :, i, j], share, 0.0)
    return out


def path_similarity_matrix(a_bits, b_bits, offsets):
    """Mean layer-wise Jaccard between every row of ``a_bits`` and ``b_bits``.

    ``offsets`` delimits the layers inside each bit row; a layer where both
    sets are empty counts as similarity 1.
    """
    na, nb = a_bits.shape[0], b_bits.shape[0]
    total = np.zeros((na, nb))
    nlayers = len(offsets) - 1
    for l in range(nlayers):
        lo, hi = offsets[l], offsets[l + 1]
        a = a_bits[:, lo:hi].astype(np.float64)
        b = b_bits[:, lo:hi].astype(np.float64)
        inter = a @ b.T
        union = a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - inter
        j = np.ones((na, nb))
        np.divide(inter, union, out=j, where=union > 0)
        total += j
    return total / nlayers
