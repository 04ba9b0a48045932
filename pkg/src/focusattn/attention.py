"""Cross-attention between object queries and image features.

All variants share one core: logits ``(Q_c + Q_p)(K_c + K_p)^T / sqrt(d_head)``,
row softmax, weighted sum of the raw features. No linear projections are
applied. Scores returned to callers are averaged over heads.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .kernels import ad, bilinear_upsample, topk_indices


@dataclass
class AttnScores:
    """Head-averaged ``N x (H*W)`` attention weights (array or Var)."""

    H: int
    W: int
    data: object

    @property
    def values(self):
        return ad.value(self.data)


@dataclass(frozen=True)
class PixelIndexSet:
    grid_H: int
    grid_W: int
    indices: np.ndarray

    def __post_init__(self):
        idx = self.indices
        if idx.ndim != 1 or idx.size == 0:
            raise ParameterError("index set must be a non-empty vector")
        if np.any(np.diff(idx) <= 0):
            raise ParameterError("indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.grid_H * self.grid_W:
            raise IndexError(f"index outside {self.grid_H}x{self.grid_W} grid")

    def __len__(self):
        return int(self.indices.size)

    @classmethod
    def full(cls, H, W):
        return cls(H, W, np.arange(H * W))


def _check_heads(d, heads):
    if heads <= 0 or d % heads:
        raise ShapeError(f"channels not divisible by {heads} heads", (d,))


def attention_logits(q, k, heads):
    """Per-head scaled dot products, a list of ``N x L`` matrices."""
    d = ad.value(q).shape[1]
    _check_heads(d, heads)
    if ad.value(k).shape[1] != d:
        raise ShapeError("query/key channels differ", ad.value(q).shape, ad.value(k).shape)
    dh = d // heads
    logits = []
    for h in range(heads):
        qs = ad.slice_cols(q, h * dh, (h + 1) * dh)
        ks = ad.slice_cols(k, h * dh, (h + 1) * dh)
        logits.append(ad.scale(ad.matmul(qs, ad.transpose(ks)), 1 / math.sqrt(dh)))
    return logits


def attend(q, k, v, heads, logit_bias=None):
    """Multi-head attention without projections.

    ``logit_bias`` is added to every head's logits (``-inf`` masks).
    Returns ``(out, head-averaged weights)``.
    """
    d = ad.value(q).shape[1]
    dh = d // heads if heads else 0
    outs, weights = [], []
    for h, logits in enumerate(attention_logits(q, k, heads)):
        if logit_bias is not None:
            logits = ad.add(logits, logit_bias)
        p = ad.softmax_rows(logits)
        outs.append(ad.matmul(p, ad.slice_cols(v, h * dh, (h + 1) * dh)))
        weights.append(p)
    out = outs[0] if heads == 1 else ad.concat_cols(outs)
    return out, ad.mean(weights)


def _full_keys(q, kc, kp):
    if (kc.H, kc.W) != (kp.H, kp.W):
        raise ShapeError("feature and encoding grids differ", (kc.H, kc.W), (kp.H, kp.W))
    if kc.D != kp.D or kc.D != q.D:
        raise ShapeError("channel counts differ", (q.D,), (kc.D,), (kp.D,))
    return ad.add(q.content, q.positional), kc.data + kp.data


def cross_attention(q, kc, kp, heads=1):
    """Dense cross-attention. Returns ``(out, AttnScores)``."""
    q_full, k_full = _full_keys(q, kc, kp)
    out, scores = attend(q_full, k_full, kc.data, heads)
    return out, AttnScores(kc.H, kc.W, scores)


def mask_logit_bias(fg):
    """0 on foreground, ``-inf`` on background; empty rows are left unmasked.

    Returns ``(bias, fallback_rows)``.
    """
    fg = np.asarray(fg, dtype=bool)
    empty = ~fg.any(axis=1)
    bias = np.where(fg | empty[:, None], 0.0, -np.inf)
    return bias, empty


def masked_attention(q, kc, kp, mask, heads=1):
    """Cross-attention restricted to each query's foreground.

    ``mask`` is a MaskPrediction already on the feature grid. Returns
    ``(out, AttnScores, fallback_rows)``.
    """
    if (mask.H, mask.W) != (kc.H, kc.W):
        raise ShapeError("mask grid differs from feature grid", (mask.H, mask.W), (kc.H, kc.W))
    q_full, k_full = _full_keys(q, kc, kp)
    bias, empty = mask_logit_bias(mask.binary())
    out, scores = attend(q_full, k_full, kc.data, heads, bias.astype(kc.data.dtype))
    return out, AttnScores(kc.H, kc.W, scores), empty


def query_saliency(a_l, H_l, W_l, H_h, W_h):
    """Upsample each query's scores and sum over queries per pixel."""
    a_h = bilinear_upsample(a_l, H_l, W_l, H_h, W_h)
    # ascending query order
    return np.cumsum(a_h, axis=0)[-1]


def select_omega(a_l, H_h, W_h, k):
    """Top-``k`` high-resolution pixels by upsampled, query-summed scores."""
    if not 1 <= k <= H_h * W_h:
        raise ParameterError(f"k={k} outside [1, {H_h * W_h}]")
    saliency = query_saliency(a_l.values, a_l.H, a_l.W, H_h, W_h)
    return PixelIndexSet(H_h, W_h, topk_indices(saliency, k))


def random_omega(H, W, k, seed):
    if not 1 <= k <= H * W:
        raise ParameterError(f"k={k} outside [1, {H * W}]")
    rng = np.random.default_rng(seed)
    return PixelIndexSet(H, W, np.sort(rng.choice(H * W, size=k, replace=False)))


def hrca(q, kc, kp, omega, heads=1):
    """Cross-attention over the gathered pixels ``omega`` only.

    Returns ``(out, sparse_scores)`` with ``sparse_scores`` of shape
    ``N x len(omega)`` (array or Var).
    """
    if (omega.grid_H, omega.grid_W) != (kc.H, kc.W):
        raise IndexError(f"index set grid {omega.grid_H}x{omega.grid_W} differs from features {kc.H}x{kc.W}")
    q_full, k_full = _full_keys(q, kc, kp)
    k_sel = ad.gather_rows(k_full, omega.indices)
    v_sel = ad.gather_rows(kc.data, omega.indices)
    return attend(q_full, k_sel, v_sel, heads)


def scatter_scores(sparse, omega):
    """Dense ``N x (H*W)`` view of sparse scores, zeros outside ``omega``."""
    sparse = ad.value(sparse)
    dense = np.zeros((sparse.shape[0], omega.grid_H * omega.grid_W), dtype=sparse.dtype)
    dense[:, omega.indices] = sparse
    return AttnScores(omega.grid_H, omega.grid_W, dense)
