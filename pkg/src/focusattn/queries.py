"""Positional query construction.

The attention-guided variant aggregates the previous block's positional
encodings with its cross-attention scores, adds a learnable bias and passes
the result through a small MLP. The remaining functions are the baseline
families it is compared against.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import ad, nearest_resize
from .posenc import INIT_RANGE, sinusoid_at

MASK_THRESHOLD = 0.5


@dataclass
class QueryState:
    """Content and positional halves of the object queries (arrays or Vars)."""

    content: object
    positional: object

    def __post_init__(self):
        if ad.value(self.content).shape != ad.value(self.positional).shape:
            raise ShapeError("content/positional shapes differ",
                             ad.value(self.content).shape, ad.value(self.positional).shape)

    @property
    def N(self):
        return ad.value(self.content).shape[0]

    @property
    def D(self):
        return ad.value(self.content).shape[1]


@dataclass
class MLPParams:
    w1: object
    b1: object
    w2: object
    b2: object

    def __call__(self, x):
        return ad.mlp2(x, self.w1, self.b1, self.w2, self.b2)

    @classmethod
    def identity(cls, d, dtype=np.float64):
        eye = np.eye(d, dtype=dtype)
        zero = np.zeros(d, dtype=dtype)
        return cls(eye, zero, eye.copy(), zero.copy())

    @classmethod
    def init(cls, d_in, d_hidden, d_out, rng, dtype=np.float64):
        """Uniform fan-in initialisation."""
        b1 = 1 / math.sqrt(d_in)
        b2 = 1 / math.sqrt(d_hidden)
        return cls(
            rng.uniform(-b1, b1, (d_in, d_hidden)).astype(dtype),
            rng.uniform(-b1, b1, d_hidden).astype(dtype),
            rng.uniform(-b2, b2, (d_hidden, d_out)).astype(dtype),
            rng.uniform(-b2, b2, d_out).astype(dtype),
        )


@dataclass
class DfpqParams:
    bias: object
    mlp: MLPParams


@dataclass
class MaskPrediction:
    """Per-query foreground probabilities on an ``H x W`` grid."""

    probs: np.ndarray
    H: int
    W: int
    threshold: float = MASK_THRESHOLD

    def __post_init__(self):
        if self.probs.shape[1] != self.H * self.W:
            raise ShapeError("mask width does not match grid", self.probs.shape, (self.H, self.W))
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("mask probabilities must lie in [0, 1]")

    def binary(self):
        return self.probs > self.threshold

    def resized(self, H, W):
        """Nearest-neighbour resize (probabilities, so the binary mask stays consistent)."""
        if (H, W) == (self.H, self.W):
            return self
        return MaskPrediction(nearest_resize(self.probs, self.H, self.W, H, W), H, W, self.threshold)


def _check_grid(mask, enc):
    if (mask.H, mask.W) != (enc.H, enc.W):
        raise ShapeError("mask grid does not match encoding grid", (mask.H, mask.W), (enc.H, enc.W))


def dfpq_next(a_prev, kp_prev, params):
    """``mlp(a_prev @ kp_prev + bias)``.

    ``a_prev`` is the head-averaged ``N x L`` score matrix of the preceding
    block and ``kp_prev`` the ``L x D`` encodings it attended over.
    """
    a_shape, k_shape = ad.value(a_prev).shape, np.shape(ad.value(kp_prev))
    if a_shape[1] != k_shape[0]:
        raise ShapeError("score width does not match encoding rows", a_shape, k_shape)
    return params.mlp(ad.add(ad.matmul(a_prev, kp_prev), params.bias))


def masked_average(mask, kp):
    """Average of ``kp`` rows under each binarised mask row.

    Returns ``(pooled, empty)`` where empty rows fall back to the global
    mean and are flagged in the boolean vector ``empty``.
    """
    _check_grid(mask, kp)
    fg = mask.binary()
    counts = fg.sum(axis=1)
    empty = counts == 0
    weights = np.where(empty[:, None], 1.0, fg).astype(kp.data.dtype)
    weights /= weights.sum(axis=1, keepdims=True)
    pooled = ad.matmul(weights, kp.data)
    return pooled, empty


def dfpq_bootstrap(mask, kp, params):
    """First-block queries from average pooling of ``kp`` under the mask.

    Returns ``(queries, fallback_count)``.
    """
    pooled, empty = masked_average(mask, kp)
    return params.mlp(ad.add(pooled, params.bias)), int(empty.sum())


def pq_learnable(N, D, seed, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=(N, D)).astype(dtype)


def grid_anchors(N):
    """Cell centres of a near-square grid on the unit square, row-major.

    Returns ``(xs, ys)`` for the first ``N`` cells.
    """
    cols = math.ceil(math.sqrt(N))
    rows = math.ceil(N / cols)
    idx = np.arange(N)
    xs = (idx % cols + 0.5) / cols
    ys = (idx // cols + 0.5) / rows
    return xs, ys


def pq_grid_anchor(N, D, H, W, dtype=np.float64):
    if H <= 0 or W <= 0:
        raise ShapeError("grid must be non-empty", (H, W))
    xs, ys = grid_anchors(N)
    return sinusoid_at(ys, xs, D, dtype)


def mask_centers(mask):
    """Centre of mass of each binarised mask row in unit coordinates.

    Returns ``(xs, ys, empty)``; empty rows sit at (0.5, 0.5).
    """
    fg = mask.binary()
    yy, xx = np.meshgrid((np.arange(mask.H) + 0.5) / mask.H, (np.arange(mask.W) + 0.5) / mask.W, indexing="ij")
    counts = fg.sum(axis=1)
    empty = counts == 0
    safe = np.where(empty, 1, counts)
    xs = np.where(empty, 0.5, (fg * xx.reshape(-1)).sum(axis=1) / safe)
    ys = np.where(empty, 0.5, (fg * yy.reshape(-1)).sum(axis=1) / safe)
    return xs, ys, empty


def pq_dynamic_anchor(mask, D, dtype=np.float64):
    """Sinusoidal encoding of each mask's centre. Returns ``(queries, fallback_count)``."""
    xs, ys, empty = mask_centers(mask)
    return sinusoid_at(ys, xs, D, dtype), int(empty.sum())


def pq_dynamic_foreground(mask, kp):
    """Raw masked average of ``kp``. Returns ``(queries, fallback_count)``."""
    pooled, empty = masked_average(mask, kp)
    return pooled, int(empty.sum())
