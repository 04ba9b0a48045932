"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled. Each function
performs the same floating-point operations in the same order as its
counterpart in ``_ckernels.pyx`` so the two backends agree bit for bit on
matmul and bilinear upsampling.
"""
import numpy as np

NAME = "python"


def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    # ascending inner index; every (i, j) accumulates in t order
    for t in range(k):
        out += np.multiply.outer(a[:, t], b[t, :])
    return out


def softmax_rows(x):
    """Row softmax. Returns (probs, index of first all -inf row or -1)."""
    rowmax = x.max(axis=1, keepdims=True) if x.shape[1] else np.zeros((x.shape[0], 1), x.dtype)
    bad = np.flatnonzero(np.isneginf(rowmax[:, 0]))
    if bad.size:
        return None, int(bad[0])
    e = np.exp(x - rowmax)
    # sequential left-to-right row sums
    total = np.cumsum(e, axis=1)[:, -1:]
    return e / total, -1


def bilinear_rows(a, y0, y1, wy, x0, x1, wx, h_l, w_l):
    n = a.shape[0]
    grid = a.reshape(n, h_l, w_l)
    top_l = grid[:, y0][:, :, x0]
    top_r = grid[:, y0][:, :, x1]
    bot_l = grid[:, y1][:, :, x0]
    bot_r = grid[:, y1][:, :, x1]
    wxr = wx[None, None, :]
    top = top_l + wxr * (top_r - top_l)
    bot = bot_l + wxr * (bot_r - bot_l)
    out = top + wy[None, :, None] * (bot - top)
    return out.reshape(n, -1)
