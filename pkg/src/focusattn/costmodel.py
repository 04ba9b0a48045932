"""Analytic FLOP and memory accounting for dense vs. sparse cross-attention.

Conventions (pinned, ratio-based comparisons only depend on consistency):

* a multiply-add counts as 2 FLOPs;
* softmax costs 3 FLOPs per logit (exp, running sum, divide);
* bilinear upsampling costs 8 FLOPs per output value (4 taps, mul + add);
* top-k selection costs ``HW * ceil(log2 HW)`` comparisons, 1 FLOP each;
* gathering rows is data movement only: 0 FLOPs, reported in bytes.
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ParameterError

TERMS = ("score_matmul", "softmax", "aggregate_matmul", "upsample", "topk", "gather")
CORE_TERMS = ("score_matmul", "softmax", "aggregate_matmul")

# Published whole-network numbers at 512x512 under an unspecified accounting.
# Echoed for context only; this model does not try to reproduce them.
EXTERNAL_REFERENCE = {
    "dense_total_gflops": 83,
    "sparse_total_gflops": 72,
    "dense_high_res_extra_gflops": 11,
    "note": "published whole-network figures at 512x512; different accounting, not reproduced",
}


@dataclass
class CostReport:
    terms: dict
    attn_matrix_bytes: int
    gather_bytes: int = 0
    config: dict = field(default_factory=dict)

    @property
    def total(self):
        return sum(self.terms.values())

    @property
    def core(self):
        return sum(self.terms[t] for t in CORE_TERMS)

    def to_dict(self):
        return {
            "terms": dict(self.terms),
            "total_flops": self.total,
            "core_flops": self.core,
            "attn_matrix_bytes": self.attn_matrix_bytes,
            "gather_bytes": self.gather_bytes,
            "config": dict(self.config),
        }


def _positive(**sizes):
    for name, v in sizes.items():
        if not isinstance(v, int) or v <= 0:
            raise ParameterError(f"{name} must be a positive integer, got {v!r}")


def attn_memory(N, HW, bytes_per_elem):
    """Bytes held by one ``N x HW`` attention matrix."""
    return N * HW * bytes_per_elem


def flops_dense_xattn(N, HW, D, bytes_per_elem=8):
    _positive(N=N, HW=HW, D=D)
    terms = dict.fromkeys(TERMS, 0)
    terms["score_matmul"] = 2 * N * HW * D
    terms["softmax"] = 3 * N * HW
    terms["aggregate_matmul"] = 2 * N * HW * D
    return CostReport(terms, attn_memory(N, HW, bytes_per_elem),
                      config={"N": N, "HW": HW, "D": D, "bytes_per_elem": bytes_per_elem})


def flops_hrca(N, HW_h, k, D, HW_l, bytes_per_elem=8):
    _positive(N=N, HW_h=HW_h, k=k, D=D, HW_l=HW_l)
    if k > HW_h:
        raise ParameterError(f"k={k} exceeds HW_h={HW_h}")
    terms = flops_dense_xattn(N, k, D).terms
    terms["upsample"] = 8 * N * HW_h
    terms["topk"] = HW_h * math.ceil(math.log2(HW_h))
    terms["gather"] = 0
    return CostReport(terms, attn_memory(N, k, bytes_per_elem),
                      gather_bytes=2 * k * D * bytes_per_elem,
                      config={"N": N, "HW_h": HW_h, "k": k, "D": D, "HW_l": HW_l,
                              "bytes_per_elem": bytes_per_elem})


def _number(frac):
    return frac.numerator if frac.denominator == 1 else float(frac)


def compare(N, HW_h, k, D, HW_l, bytes_per_elem=8):
    """Dense vs. sparse report with exact core and memory ratios."""
    dense = flops_dense_xattn(N, HW_h, D, bytes_per_elem)
    sparse = flops_hrca(N, HW_h, k, D, HW_l, bytes_per_elem)
    core_ratio = Fraction(dense.core, sparse.core)
    mem_ratio = Fraction(sparse.attn_matrix_bytes, dense.attn_matrix_bytes)
    return {
        "dense": dense.to_dict(),
        "hrca": sparse.to_dict(),
        "core_ratio": _number(core_ratio),
        "core_ratio_exact": str(core_ratio),
        "memory_ratio": _number(mem_ratio),
        "memory_ratio_exact": str(mem_ratio),
        "external_reference": dict(EXTERNAL_REFERENCE),
    }
