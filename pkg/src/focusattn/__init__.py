"""Attention-guided positional queries and sparse high-resolution cross-attention."""
from .attention import AttnScores, PixelIndexSet, cross_attention, hrca, masked_attention, select_omega
from .decoder import DecoderConfig, run_faseg, synth_pyramid
from .kernels import BACKEND
from .queries import DfpqParams, MLPParams, QueryState, dfpq_bootstrap, dfpq_next

__version__ = "0.1.0"

__all__ = [
    "AttnScores", "BACKEND", "DecoderConfig", "DfpqParams", "MLPParams", "PixelIndexSet", "QueryState",
    "cross_attention", "dfpq_bootstrap", "dfpq_next", "hrca", "masked_attention", "run_faseg",
    "select_omega", "synth_pyramid",
]
