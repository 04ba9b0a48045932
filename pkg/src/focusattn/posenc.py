"""Positional encodings for image features.

Three families: fixed 2-D sinusoids, seeded learnable tables and
conditional encodings produced by a frozen depthwise 3x3 convolution over
the features themselves.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .kernels import depthwise_conv3x3

INIT_RANGE = 0.02
KINDS = ("sinusoidal", "learnable_absolute", "conditional")


@dataclass(frozen=True)
class FeatureMap:
    """One pyramid level: ``data`` is ``(H*W) x D`` with row-major pixels."""

    H: int
    W: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.H * self.W:
            raise ShapeError("feature rows do not match grid", self.data.shape, (self.H, self.W))

    @property
    def D(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class PosEncoding:
    H: int
    W: int
    data: np.ndarray
    kind: str

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.H * self.W:
            raise ShapeError("encoding rows do not match grid", self.data.shape, (self.H, self.W))

    @property
    def D(self):
        return self.data.shape[1]


def _check_channels(d):
    if d <= 0 or d % 4:
        raise ParameterError(f"channel count {d} must be a positive multiple of 4")


def sinusoid_at(ys, xs, d, dtype=np.float64):
    """Encode fractional positions in [0, 1] per axis.

    The first ``d/2`` channels carry ``ys``, the last ``d/2`` carry ``xs``;
    channel pair ``j`` uses wavelength ``10000 ** (2*(j//2) / (d/2))``.
    """
    _check_channels(d)
    half = d // 2
    j = np.arange(half)
    wavelength = 10000.0 ** (2 * (j // 2) / half)

    def axis(u):
        phase = np.asarray(u, dtype=np.float64)[:, None] * (2 * np.pi) / wavelength
        return np.where(j % 2 == 0, np.sin(phase), np.cos(phase))

    return np.concatenate([axis(ys), axis(xs)], axis=1).astype(dtype)


def sinusoidal_pe(H, W, D, dtype=np.float64):
    _check_channels(D)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    data = sinusoid_at((yy.reshape(-1) + 0.5) / H, (xx.reshape(-1) + 0.5) / W, D, dtype)
    return PosEncoding(H, W, data, "sinusoidal")


def learnable_pe(H, W, D, seed, dtype=np.float64):
    rng = np.random.default_rng(seed)
    data = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(H * W, D)).astype(dtype)
    return PosEncoding(H, W, data, "learnable_absolute")


def init_peg_kernels(D, seed, dtype=np.float64):
    """Seeded depthwise kernels, uniform in +-1/3 (fan-in 9)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-1 / 3, 1 / 3, size=(D, 3, 3)).astype(dtype)


def conditional_pe(feat, kernels):
    data = depthwise_conv3x3(feat.data, kernels, feat.H, feat.W)
    return PosEncoding(feat.H, feat.W, data, "conditional")


def make_pe(kind, feat, seed, dtype=np.float64):
    """Build an encoding of the requested family for one feature map."""
    if kind == "sinusoidal":
        return sinusoidal_pe(feat.H, feat.W, feat.D, dtype)
    if kind == "learnable_absolute":
        return learnable_pe(feat.H, feat.W, feat.D, seed, dtype)
    if kind == "conditional":
        return conditional_pe(feat, init_peg_kernels(feat.D, seed, dtype))
    raise ParameterError(f"unknown positional encoding kind {kind!r}")
