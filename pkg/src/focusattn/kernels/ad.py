"""Minimal reverse-mode differentiation over the matrix primitives.

Every op here accepts plain arrays or :class:`Var` nodes. When no input is
a ``Var`` the op simply returns an array, so model code runs untaped at full
speed. When at least one input is a ``Var`` the application is appended to
that variable's :class:`GradTape` and a new ``Var`` is returned.

Example::

    tape = GradTape()
    w = tape.watch(np.eye(2))
    y = ad.sum_all(ad.matmul(x, w))
    grads = tape.backward(y)
    grads[w]
"""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, UnsupportedOpError
from . import matmul as _mm
from . import mlp2 as _mlp2
from . import softmax_rows as _softmax


class Var:
    """A matrix value tracked on a tape."""

    __slots__ = ("value", "tape", "name")

    def __init__(self, value, tape, name=None):
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}{self.value.shape}"


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Var
    saved: dict = field(default_factory=dict)


class GradTape:
    """Append-only log of primitive applications."""

    def __init__(self):
        self.records = []

    def watch(self, value, name=None):
        return Var(np.asarray(value), self, name)

    def backward(self, output, seed_grad=None):
        """Reverse-mode pass from ``output``.

        Returns a dict mapping every Var reached from ``output`` to its
        gradient. ``seed_grad`` defaults to ones of the output shape.
        """
        if seed_grad is None:
            seed_grad = np.ones_like(output.value)
        seed_grad = np.asarray(seed_grad, dtype=output.value.dtype)
        if seed_grad.shape != output.value.shape:
            raise ShapeError("seed gradient shape differs from output", seed_grad.shape, output.value.shape)
        grads = {output: seed_grad}
        for rec in reversed(self.records):
            g = grads.get(rec.output)
            if g is None:
                continue
            rule = BACKWARD_RULES.get(rec.op)
            if rule is None:
                raise UnsupportedOpError(f"no backward rule for {rec.op!r}")
            for inp, gi in zip(rec.inputs, rule(rec, g)):
                if not isinstance(inp, Var) or gi is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + gi
                else:
                    grads[inp] = gi
        return grads


def backward(tape, output, seed_grad=None):
    return tape.backward(output, seed_grad)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
            tape = x.tape
    return tape


def _record(op, inputs, out, **saved):
    tape = _tape_of(inputs)
    if tape is None:
        return out
    var = Var(out, tape)
    tape.records.append(Record(op, tuple(inputs), var, saved))
    return var


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 1:
        return g.sum(axis=0)
    return g.sum(axis=tuple(i for i, s in enumerate(shape) if s == 1), keepdims=True)


# forward ops ---------------------------------------------------------------

def matmul(a, b):
    return _record("matmul", (a, b), _mm(value(a), value(b)))


def transpose(a):
    return _record("transpose", (a,), np.ascontiguousarray(value(a).T))


def add(a, b):
    """Elementwise sum; ``b`` may be a row vector broadcast over rows."""
    return _record("add", (a, b), value(a) + value(b))


def scale(a, c):
    """Multiply by a constant (scalar or same-shape array)."""
    return _record("scale", (a,), value(a) * c, c=c)


def softmax_rows(a):
    return _record("softmax_rows", (a,), _softmax(value(a)))


def mlp2(x, w1, b1, w2, b2):
    xv, w1v, b1v, w2v, b2v = (value(t) for t in (x, w1, b1, w2, b2))
    if _tape_of((x, w1, b1, w2, b2)) is None:
        return _mlp2(xv, w1v, b1v, w2v, b2v)
    pre = _mm(xv, w1v) + b1v
    hidden = np.maximum(pre, 0)
    out = _mm(hidden, w2v) + b2v
    return _record("mlp2", (x, w1, b1, w2, b2), out, pre=pre, hidden=hidden)


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    return _record("gather", (a,), value(a)[idx], idx=idx)


def slice_cols(a, start, stop):
    return _record("slice_cols", (a,), np.ascontiguousarray(value(a)[:, start:stop]), start=start, stop=stop)


def concat_cols(parts):
    parts = list(parts)
    widths = [value(p).shape[1] for p in parts]
    return _record("concat_cols", tuple(parts), np.concatenate([value(p) for p in parts], axis=1), widths=widths)


def mean(parts):
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    acc = value(parts[0])
    for p in parts[1:]:
        acc = acc + value(p)
    return _record("mean", tuple(parts), acc / len(parts))


def relu(a):
    return _record("relu", (a,), np.maximum(value(a), 0))


def logistic(a):
    return _record("logistic", (a,), np.exp(-np.logaddexp(0, -value(a))))


def sum_all(a):
    v = value(a)
    return _record("sum_all", (a,), np.cumsum(v.reshape(-1))[-1:].reshape(1, 1) if v.size else np.zeros((1, 1), v.dtype))


# backward rules ------------------------------------------------------------

def _matmul_bw(rec, g):
    a, b = (value(t) for t in rec.inputs)
    return _mm(g, b.T), _mm(a.T, g)


def _transpose_bw(rec, g):
    return (g.T,)


def _add_bw(rec, g):
    a, b = (value(t) for t in rec.inputs)
    return _unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b))


def _scale_bw(rec, g):
    return (g * rec.saved["c"],)


def _softmax_bw(rec, g):
    y = rec.output.value
    return (y * (g - (g * y).sum(axis=1, keepdims=True)),)


def _mlp2_bw(rec, g):
    x, w1, _, w2, _ = (value(t) for t in rec.inputs)
    pre, hidden = rec.saved["pre"], rec.saved["hidden"]
    d_w2 = _mm(hidden.T, g)
    d_b2 = g.sum(axis=0).reshape(np.shape(value(rec.inputs[4])))
    d_pre = _mm(g, w2.T) * (pre > 0)
    d_w1 = _mm(x.T, d_pre)
    d_b1 = d_pre.sum(axis=0).reshape(np.shape(value(rec.inputs[2])))
    d_x = _mm(d_pre, w1.T)
    return d_x, d_w1, d_b1, d_w2, d_b2


def _gather_bw(rec, g):
    src = value(rec.inputs[0])
    out = np.zeros_like(src)
    np.add.at(out, rec.saved["idx"], g)
    return (out,)


def _slice_bw(rec, g):
    out = np.zeros_like(value(rec.inputs[0]))
    out[:, rec.saved["start"]:rec.saved["stop"]] = g
    return (out,)


def _concat_bw(rec, g):
    bounds = np.cumsum([0] + rec.saved["widths"])
    return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))


def _mean_bw(rec, g):
    share = g / len(rec.inputs)
    return tuple(share for _ in rec.inputs)


def _relu_bw(rec, g):
    return (g * (value(rec.inputs[0]) > 0),)


def _logistic_bw(rec, g):
    y = rec.output.value
    return (g * y * (1 - y),)


def _sum_all_bw(rec, g):
    return (np.full_like(value(rec.inputs[0]), g.reshape(-1)[0]),)


BACKWARD_RULES = {
    "matmul": _matmul_bw,
    "transpose": _transpose_bw,
    "add": _add_bw,
    "scale": _scale_bw,
    "softmax_rows": _softmax_bw,
    "mlp2": _mlp2_bw,
    "gather": _gather_bw,
    "slice_cols": _slice_bw,
    "concat_cols": _concat_bw,
    "mean": _mean_bw,
    "relu": _relu_bw,
    "logistic": _logistic_bw,
    "sum_all": _sum_all_bw,
}
