"""Dense numerical primitives on 2-D numpy arrays.

Matrices are plain ``numpy.ndarray`` objects of dtype float32 or float64;
every kernel preserves the dtype of its inputs. The hot loops (matmul, row
softmax, bilinear resampling) come from a compiled extension when it is
importable, otherwise from a numpy fallback. Set ``FOCUSATTN_BACKEND=python``
to force the fallback.
"""
import math
import os

import numpy as np

from ..errors import DegenerateRowError, OracleError, ParameterError, ShapeError
from . import _pykernels


def _load_backend():
    if os.environ.get("FOCUSATTN_BACKEND", "").lower() == "python":
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels
    return _ckernels


_impl = _load_backend()
BACKEND = _impl.NAME


def use_backend(name):
    """Switch the kernel backend at runtime ("cython" or "python")."""
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels

        _impl = _ckernels
    else:
        raise ParameterError(f"unknown backend {name!r}")
    BACKEND = _impl.NAME
    return BACKEND


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def _as_matrix(x, what="matrix"):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{what} must be 2-D", x.shape)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return x


def matmul(a, b):
    """``a @ b`` with each output entry summed in ascending inner index."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    dtype = np.result_type(a, b)
    return _impl.matmul(a.astype(dtype, copy=False), b.astype(dtype, copy=False))


def softmax_rows(x):
    """Row-wise softmax with max subtraction; ``-inf`` entries map to 0.

    Raises DegenerateRowError for a row whose entries are all ``-inf``.
    """
    x = _as_matrix(x)
    if x.shape[1] == 0:
        raise DegenerateRowError("softmax over an empty row")
    out, bad = _impl.softmax_rows(x)
    if out is None:
        raise DegenerateRowError(f"row {bad} has no finite entry")
    return out


def mlp2(x, w1, b1, w2, b2):
    """Two-layer perceptron ``relu(x w1 + b1) w2 + b2``."""
    x = _as_matrix(x)
    w1, w2 = _as_matrix(w1, "W1"), _as_matrix(w2, "W2")
    b1, b2 = np.asarray(b1).reshape(-1), np.asarray(b2).reshape(-1)
    if x.shape[1] != w1.shape[0] or w1.shape[1] != b1.shape[0]:
        raise ShapeError("mlp2 first layer mismatch", x.shape, w1.shape, b1.shape)
    if w1.shape[1] != w2.shape[0] or w2.shape[1] != b2.shape[0]:
        raise ShapeError("mlp2 second layer mismatch", w1.shape, w2.shape, b2.shape)
    hidden = np.maximum(matmul(x, w1) + b1, 0)
    return matmul(hidden, w2) + b2


def _axis_taps(l_src, l_dst, dtype):
    d = np.arange(l_dst, dtype=np.float64)
    s = np.clip((d + 0.5) * (l_src / l_dst) - 0.5, 0.0, l_src - 1)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, l_src - 1)
    return i0, i1, (s - i0).astype(dtype)


def bilinear_upsample(a, h_l, w_l, h_h, w_h):
    """Resample each row of ``a`` (an ``h_l x w_l`` grid) to ``h_h x w_h``.

    Half-pixel centres, edge clamping, no corner alignment.
    """
    a = _as_matrix(a)
    if min(h_l, w_l, h_h, w_h) <= 0:
        raise ShapeError("zero-sized grid", (h_l, w_l), (h_h, w_h))
    if a.shape[1] != h_l * w_l:
        raise ShapeError("row length does not match source grid", a.shape, (h_l, w_l))
    if h_h < h_l or w_h < w_l:
        raise ShapeError("target grid smaller than source", (h_l, w_l), (h_h, w_h))
    y0, y1, wy = _axis_taps(h_l, h_h, a.dtype)
    x0, x1, wx = _axis_taps(w_l, w_h, a.dtype)
    return _impl.bilinear_rows(a, y0, y1, wy, x0, x1, wx, h_l, w_l)


def nearest_resize(a, h_s, w_s, h_d, w_d):
    """Nearest-neighbour resampling of each row; keeps binary masks binary."""
    a = np.asarray(a)
    if a.shape[1] != h_s * w_s:
        raise ShapeError("row length does not match source grid", a.shape, (h_s, w_s))
    ys = np.minimum(((np.arange(h_d) + 0.5) * h_s / h_d).astype(np.int64), h_s - 1)
    xs = np.minimum(((np.arange(w_d) + 0.5) * w_s / w_d).astype(np.int64), w_s - 1)
    idx = (ys[:, None] * w_s + xs[None, :]).reshape(-1)
    return a[:, idx]


def depthwise_conv3x3(f, kernels, h, w):
    """Per-channel 3x3 cross-correlation with zero padding.

    ``f`` is ``(h*w) x D`` (row-major pixels), ``kernels`` is ``D x 3 x 3``.
    """
    f = _as_matrix(f, "feature map")
    kernels = np.asarray(kernels, dtype=f.dtype)
    d = f.shape[1]
    if f.shape[0] != h * w:
        raise ShapeError("feature rows do not match grid", f.shape, (h, w))
    if kernels.shape != (d, 3, 3):
        raise ShapeError("kernel channels do not match features", kernels.shape, (d, 3, 3))
    grid = np.zeros((h + 2, w + 2, d), dtype=f.dtype)
    grid[1:-1, 1:-1] = f.reshape(h, w, d)
    out = np.zeros((h, w, d), dtype=f.dtype)
    for dy in range(3):
        for dx in range(3):
            out += grid[dy:dy + h, dx:dx + w] * kernels[:, dy, dx]
    return out.reshape(h * w, d)


def topk_indices(scores, k):
    """Indices of the ``k`` largest scores, ascending; ties go to the lower index."""
    scores = np.asarray(scores).reshape(-1)
    if not 1 <= k <= scores.shape[0]:
        raise ParameterError(f"k={k} outside [1, {scores.shape[0]}]")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at matrix ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise OracleError(f"non-finite evaluation at entry {idx}")
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-8):
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ShapeError("gradient shapes differ", a.shape, n.shape)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
