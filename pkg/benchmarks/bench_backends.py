"""Compiled vs. numpy-fallback kernels, per kernel and on the attention workload.

    python3 benchmarks/bench_backends.py [--repeats 5] [--json out.json]
"""
import argparse
import json

import numpy as np

from focusattn import kernels
from focusattn.bench import attention_workload, summarize, time_call


def kernel_cases(rng, dtype):
    a = rng.standard_normal((100, 512)).astype(dtype)
    b = rng.standard_normal((512, 64)).astype(dtype)
    logits = rng.standard_normal((100, 4096)).astype(dtype)
    low = rng.standard_normal((100, 16 * 16)).astype(dtype)
    return {
        "matmul 100x512 @ 512x64": lambda: kernels.matmul(a, b),
        "softmax_rows 100x4096": lambda: kernels.softmax_rows(logits),
        "bilinear 16x16 -> 128x128, 100 rows": lambda: kernels.bilinear_upsample(low, 16, 16, 128, 128),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--warmup", type=int, default=1)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the fallback will be timed")
    previous = kernels.BACKEND
    results = {}
    try:
        for name in backends:
            kernels.use_backend(name)
            rng = np.random.default_rng(0)
            cases = kernel_cases(rng, np.float32)
            dense, sparse = attention_workload(100, 128, 128, 64, 16, 16, 512, 1, 0, np.float32)
            cases["dense cross-attention, HW=16384"] = dense
            cases["sparse cross-attention, k=512"] = sparse
            results[name] = {label: summarize(time_call(fn, args.repeats, args.warmup))
                             for label, fn in cases.items()}
    finally:
        kernels.use_backend(previous)

    labels = list(next(iter(results.values())))
    header = f"{'case':40s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for label in labels:
        meds = [results[b][label]["median_ns"] / 1e6 for b in backends]
        line = f"{label:40s}" + "".join(f"{m:10.2f}ms" for m in meds)
        if len(meds) == 2:
            line += f"{meds[1] / meds[0]:9.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
