"""Wall-clock comparison of dense and sparse high-resolution cross-attention."""
import statistics
import time

import numpy as np

from . import attention as attn
from .posenc import FeatureMap, sinusoidal_pe
from .queries import QueryState


def time_call(fn, repeats, warmup):
    """Per-call wall times in ns after ``warmup`` untimed calls."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return samples


def summarize(samples):
    return {"median_ns": int(statistics.median(samples)), "min_ns": int(min(samples)),
            "samples_ns": [int(s) for s in samples]}


def attention_workload(N, H_h, W_h, D, H_l, W_l, k, heads=1, seed=0, dtype=np.float64):
    """Inputs for one dense-vs-sparse comparison and the two callables to time."""
    rng = np.random.default_rng(seed)
    feat = FeatureMap(H_h, W_h, rng.standard_normal((H_h * W_h, D)).astype(dtype))
    pe = sinusoidal_pe(H_h, W_h, D, dtype)
    q = QueryState(rng.standard_normal((N, D)).astype(dtype), rng.standard_normal((N, D)).astype(dtype))
    low = rng.standard_normal((N, H_l * W_l)).astype(dtype)
    low_scores = attn.AttnScores(H_l, W_l, np.exp(low) / np.exp(low).sum(axis=1, keepdims=True))

    def dense():
        return attn.cross_attention(q, feat, pe, heads)

    def sparse():
        omega = attn.select_omega(low_scores, H_h, W_h, k)
        return attn.hrca(q, feat, pe, omega, heads)

    return dense, sparse


def run_bench(N, H_h, W_h, D, H_l, W_l, k, heads=1, repeats=5, warmup=1, seed=0, dtype=np.float64):
    dense, sparse = attention_workload(N, H_h, W_h, D, H_l, W_l, k, heads, seed, dtype)
    return {
        "dense": summarize(time_call(dense, repeats, warmup)),
        "hrca": summarize(time_call(sparse, repeats, warmup)),
        "sizes": {"N": N, "HW_h": H_h * W_h, "grid_h": [H_h, W_h], "grid_l": [H_l, W_l],
                  "D": D, "k": k, "heads": heads, "dtype": np.dtype(dtype).name,
                  "repeats": repeats, "warmup": warmup},
    }
