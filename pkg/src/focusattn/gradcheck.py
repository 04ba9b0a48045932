"""Analytic-vs-finite-difference gradient checks.

Each check builds a scalar readout (a fixed random weighting of an op's
output), differentiates it on a tape, and compares against central
differences of the same readout evaluated untaped.
"""
from dataclasses import dataclass

import numpy as np

from . import attention as attn
from .decoder import DecoderConfig, build_params, encodings_for, run_faseg, synth_pyramid, watch_params
from .kernels import ad, finite_diff_grad, max_rel_error
from .kernels.ad import GradTape
from .posenc import FeatureMap, conditional_pe, init_peg_kernels, sinusoidal_pe
from .queries import DfpqParams, MaskPrediction, MLPParams, QueryState, dfpq_bootstrap, dfpq_next

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def check_op(name, fn, inputs, rng, h=STEP, tol=TOLERANCE):
    """Compare gradients of ``sum(w * fn(*inputs))`` for every input.

    ``inputs`` maps labels to float64 arrays. Returns one CheckResult per input.
    """
    labels = list(inputs)
    out_shape = np.shape(ad.value(fn(*inputs.values())))
    weights = rng.standard_normal(out_shape)

    def readout(*args):
        return ad.sum_all(ad.scale(fn(*args), weights))

    tape = GradTape()
    leaves = [tape.watch(np.array(inputs[k], dtype=np.float64)) for k in labels]
    grads = tape.backward(readout(*leaves))
    results = []
    for i, key in enumerate(labels):
        def f(x, i=i):
            args = [np.array(inputs[k], dtype=np.float64) for k in labels]
            args[i] = x
            return ad.value(readout(*args))[0, 0]

        numeric = finite_diff_grad(f, inputs[key], h)
        analytic = grads.get(leaves[i], np.zeros_like(numeric))
        results.append(CheckResult(f"{name}[{key}]", max_rel_error(analytic, numeric), tol))
    return results


def _primitive_checks(rng):
    r = rng.standard_normal
    out = []
    out += check_op("matmul", ad.matmul, {"a": r((3, 4)), "b": r((4, 2))}, rng)
    out += check_op("transpose", ad.transpose, {"a": r((3, 2))}, rng)
    out += check_op("add", ad.add, {"a": r((3, 4)), "b": r((3, 4))}, rng)
    out += check_op("add_row", ad.add, {"a": r((3, 4)), "b": r(4)}, rng)
    out += check_op("scale", lambda a: ad.scale(a, -1.7), {"a": r((2, 3))}, rng)
    out += check_op("softmax_rows", ad.softmax_rows, {"x": r((3, 5))}, rng)
    out += check_op("mlp2", ad.mlp2, {"x": r((3, 4)), "w1": r((4, 5)), "b1": r(5), "w2": r((5, 4)), "b2": r(4)}, rng)
    out += check_op("gather", lambda a: ad.gather_rows(a, [3, 0, 3, 1]), {"a": r((5, 3))}, rng)
    out += check_op("slice_concat", lambda a: ad.concat_cols([ad.slice_cols(a, 2, 4), ad.slice_cols(a, 0, 2)]),
                    {"a": r((3, 4))}, rng)
    out += check_op("mean", lambda a, b: ad.mean([a, b]), {"a": r((2, 3)), "b": r((2, 3))}, rng)
    out += check_op("logistic", ad.logistic, {"x": r((3, 3))}, rng)
    out += check_op("sum_all", ad.sum_all, {"x": r((2, 3))}, rng)
    return out


def _row_stochastic(rng, n, length):
    return np.asarray(ad.softmax_rows(rng.standard_normal((n, length))))


def _dfpq_checks(rng):
    n, hw, d = 3, 9, 8
    a_prev = _row_stochastic(rng, n, hw)
    kp = sinusoidal_pe(3, 3, d).data
    mlp = MLPParams.init(d, d, d, rng)
    bias = rng.uniform(-0.5, 0.5, (n, d))

    def fn(a, k, b, w1, b1, w2, b2):
        return dfpq_next(a, k, DfpqParams(b, MLPParams(w1, b1, w2, b2)))

    out = check_op("dfpq_next", fn, {"A_prev": a_prev, "Kp": kp, "bias": bias, "W1": mlp.w1,
                                     "b1": mlp.b1, "W2": mlp.w2, "b2": mlp.b2}, rng)
    pe = sinusoidal_pe(3, 3, d)
    mask = MaskPrediction(rng.uniform(0, 1, (n, hw)), 3, 3)
    out += check_op("dfpq_bootstrap", lambda b: dfpq_bootstrap(mask, pe, DfpqParams(b, mlp))[0],
                    {"bias": bias}, rng)
    return out


def _attention_checks(rng):
    out = []
    n, H, W, d = 4, 4, 4, 8
    feat = FeatureMap(H, W, rng.standard_normal((H * W, d)))
    pe = conditional_pe(feat, init_peg_kernels(d, 11))
    qc, qp = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    mask = MaskPrediction(rng.uniform(0, 1, (n, H * W)), H, W)
    omega = attn.random_omega(H, W, 6, 5)
    for heads in (1, 2):
        out += check_op(f"cross_attention/h{heads}",
                        lambda c, p: attn.cross_attention(QueryState(c, p), feat, pe, heads)[0],
                        {"Q_content": qc, "Q_positional": qp}, rng)
        out += check_op(f"cross_attention_scores/h{heads}",
                        lambda c, p: attn.cross_attention(QueryState(c, p), feat, pe, heads)[1].data,
                        {"Q_content": qc, "Q_positional": qp}, rng)
        out += check_op(f"masked_attention/h{heads}",
                        lambda c, p: attn.masked_attention(QueryState(c, p), feat, pe, mask, heads)[0],
                        {"Q_content": qc, "Q_positional": qp}, rng)
        out += check_op(f"hrca/h{heads}",
                        lambda c, p: attn.hrca(QueryState(c, p), feat, pe, omega, heads)[0],
                        {"Q_content": qc, "Q_positional": qp}, rng)

    # attention-guided positional queries feeding a dense cross-attention
    prev_pe = sinusoidal_pe(2, 2, d)
    a_prev = _row_stochastic(rng, n, 4)
    mlp = MLPParams.init(d, d, d, rng)
    bias = rng.uniform(-0.5, 0.5, (n, d))

    def composed(a, b, c):
        qp = dfpq_next(a, prev_pe.data, DfpqParams(b, mlp))
        return attn.cross_attention(QueryState(c, qp), feat, pe, 2)[0]

    out += check_op("dfpq+cross_attention", composed, {"A_prev": a_prev, "bias": bias, "Q_content": qc}, rng)
    return out


def end_to_end_check(seed=0, h=STEP, tol=TOLERANCE):
    """Sum of final mask logits w.r.t. every block's positional-query bias."""
    cfg = DecoderConfig(base_size=(32, 32), num_queries=2, channels=4, heads=2, rounds=1, seed=seed)
    pyramid = synth_pyramid(32, 32, cfg.channels, seed, cfg.noise)
    encodings = encodings_for(cfg, pyramid)
    params = build_params(cfg)

    tape = GradTape()
    watched = watch_params(params, tape)
    trace = run_faseg(cfg, pyramid, watched, tape, encodings)
    grads = tape.backward(ad.sum_all(trace.final_node))

    results = []
    for pos, block in enumerate(params.blocks):
        def f(b, pos=pos):
            block_b = params.blocks[pos]
            swapped = list(params.blocks)
            swapped[pos] = type(block_b)(DfpqParams(b, block_b.dfpq.mlp), block_b.cross_out,
                                         block_b.self_out, block_b.ffn)
            p = type(params)(params.init_content, params.learnable_pq, params.mask_mlp, swapped)
            return ad.sum_all(run_faseg(cfg, pyramid, p, None, encodings).final_mask_logits)[0, 0]

        numeric = finite_diff_grad(f, block.dfpq.bias, h)
        analytic = grads.get(watched.blocks[pos].dfpq.bias, np.zeros_like(numeric))
        results.append(CheckResult(f"end_to_end[bias/block{pos}]", max_rel_error(analytic, numeric), tol))
    return results


def run_gradient_suite(seed=0, tol=TOLERANCE):
    """Every gradient check, in a fixed order."""
    rng = np.random.default_rng(seed)
    return (_primitive_checks(rng) + _dfpq_checks(rng) + _attention_checks(rng)
            + end_to_end_check(seed, tol=tol))
