"""Straight-line numpy references, independent of the package kernels."""
import numpy as np


def softmax(x):
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def dense_attention(q_full, k_full, v, heads, allowed=None):
    """Multi-head attention; ``allowed`` is an optional boolean N x L mask."""
    n, d = q_full.shape
    dh = d // heads
    outs, probs = [], []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        logits = q_full[:, sl] @ k_full[:, sl].T / np.sqrt(dh)
        if allowed is not None:
            logits = np.where(allowed, logits, -np.inf)
        p = softmax(logits)
        outs.append(p @ v[:, sl])
        probs.append(p)
    return np.concatenate(outs, axis=1), sum(probs) / heads


def gather_then_dense(q_full, k_full, v, omega, heads):
    return dense_attention(q_full, k_full[omega], v[omega], heads)


def bilinear(a, hl, wl, hh, wh):
    out = np.zeros((a.shape[0], hh * wh))
    for y in range(hh):
        sy = min(max((y + 0.5) * hl / hh - 0.5, 0.0), hl - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, hl - 1)
        fy = sy - y0
        for x in range(wh):
            sx = min(max((x + 0.5) * wl / wh - 0.5, 0.0), wl - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, wl - 1)
            fx = sx - x0
            out[:, y * wh + x] = ((1 - fy) * ((1 - fx) * a[:, y0 * wl + x0] + fx * a[:, y0 * wl + x1])
                                  + fy * ((1 - fx) * a[:, y1 * wl + x0] + fx * a[:, y1 * wl + x1]))
    return out


def select_omega(a_l, hl, wl, hh, wh, k):
    saliency = bilinear(a_l, hl, wl, hh, wh).sum(axis=0)
    order = np.argsort(-saliency, kind="stable")
    return np.sort(order[:k])
