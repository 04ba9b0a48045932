"""Multi-scale query decoder with attention-guided positional queries and a
sparse high-resolution block.

A round visits the coarse-to-fine scales (default 1/32, 1/16, 1/8), then
optionally one sparse block at 1/4 resolution that attends only to pixels
picked from the coarsest block's scores. Rounds repeat ``cfg.rounds`` times.
All weights are seeded and frozen.
"""
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import attention as attn
from .errors import ConfigError, ParameterError, ShapeError
from .kernels import ad, bilinear_upsample
from .posenc import KINDS, FeatureMap, make_pe
from .queries import (
    DfpqParams,
    MaskPrediction,
    MLPParams,
    QueryState,
    dfpq_bootstrap,
    dfpq_next,
    pq_dynamic_anchor,
    pq_dynamic_foreground,
    pq_grid_anchor,
    pq_learnable,
)

PQ_VARIANTS = ("learnable", "grid_anchor", "dynamic_anchor", "dynamic_foreground", "dfpq")
ATTN_VARIANTS = ("dense", "masked")
OMEGA_MODES = ("topk", "random")
DTYPES = {"float64": np.float64, "f64": np.float64, "float32": np.float32, "f32": np.float32}


def _is_pow2(n):
    return isinstance(n, int) and n > 0 and n & (n - 1) == 0


@dataclass
class DecoderConfig:
    base_size: tuple = (64, 64)
    num_queries: int = 8
    channels: int = 16
    heads: int = 2
    rounds: int = 3
    scales: tuple = (32, 16, 8)
    hrca_enabled: bool = True
    hrca_divisor: int = 4
    omega_divisor: int = 32
    omega_source_divisor: int = 32
    omega_mode: str = "topk"
    pq_variant: str = "dfpq"
    attn_variant: object = "masked"
    pe_kind: str = "conditional"
    mlp_hidden: int | None = None
    dtype: str = "float64"
    seed: int = 0
    dfpq_start_round: int = 0
    noise: float = 0.01

    def __post_init__(self):
        self.base_size = tuple(self.base_size)
        self.scales = tuple(self.scales)
        if isinstance(self.attn_variant, (list, tuple)):
            self.attn_variant = tuple(self.attn_variant)
        self.validate()

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}")

        if len(self.base_size) != 2 or min(self.base_size) <= 0:
            bad("base_size", "expected two positive integers")
        divisors = list(self.scales) + ([self.hrca_divisor] if self.hrca_enabled else [])
        if not self.scales:
            bad("scales", "at least one scale is required")
        for d in divisors:
            if not _is_pow2(d):
                bad("scales", f"divisor {d} is not a positive power of two")
        largest = max(divisors)
        if self.base_size[0] % largest or self.base_size[1] % largest:
            bad("base_size", f"{self.base_size} not divisible by {largest}")
        if self.num_queries <= 0:
            bad("num_queries", "must be positive")
        if self.channels <= 0:
            bad("channels", "must be positive")
        # sinusoid-based encodings split channels into sin/cos pairs per axis
        needs_pairs = self.pe_kind == "sinusoidal" or self.pq_variant in ("grid_anchor", "dynamic_anchor")
        if needs_pairs and self.channels % 4:
            bad("channels", "must be a multiple of 4 for sinusoid-based encodings")
        if self.heads <= 0 or self.channels % self.heads:
            bad("heads", f"must divide channels={self.channels}")
        if self.rounds <= 0:
            bad("rounds", "must be positive")
        if self.pq_variant not in PQ_VARIANTS:
            bad("pq_variant", f"expected one of {PQ_VARIANTS}")
        variants = self.attn_variant if isinstance(self.attn_variant, tuple) else (self.attn_variant,)
        if isinstance(self.attn_variant, tuple) and len(variants) != len(self.scales):
            bad("attn_variant", "per-block list must match scales")
        if any(v not in ATTN_VARIANTS for v in variants):
            bad("attn_variant", f"expected one of {ATTN_VARIANTS}")
        if self.pe_kind not in KINDS:
            bad("pe_kind", f"expected one of {KINDS}")
        if self.omega_mode not in OMEGA_MODES:
            bad("omega_mode", f"expected one of {OMEGA_MODES}")
        if self.hrca_enabled:
            if self.omega_source_divisor not in self.scales:
                bad("omega_source_divisor", "must be one of the scales")
            if not _is_pow2(self.omega_divisor):
                bad("omega_divisor", "must be a positive power of two")
            if self.omega_size < 1:
                bad("omega_divisor", "selects an empty pixel set")
        if self.dtype not in DTYPES:
            bad("dtype", f"expected one of {sorted(DTYPES)}")
        if self.mlp_hidden is not None and self.mlp_hidden <= 0:
            bad("mlp_hidden", "must be positive")
        if self.dfpq_start_round < 0:
            bad("dfpq_start_round", "must be non-negative")
        if self.noise < 0:
            bad("noise", "must be non-negative")

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    @property
    def hidden(self):
        return self.mlp_hidden or self.channels

    def grid(self, divisor):
        return self.base_size[0] // divisor, self.base_size[1] // divisor

    @property
    def omega_size(self):
        h, w = self.grid(self.hrca_divisor)
        return (h * w) // self.omega_divisor

    def attn_kind(self, position):
        if isinstance(self.attn_variant, tuple):
            return self.attn_variant[position]
        return self.attn_variant

    @property
    def schedule(self):
        return list(self.scales) + ([self.hrca_divisor] if self.hrca_enabled else [])

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["base_size"] = list(self.base_size)
        out["scales"] = list(self.scales)
        if isinstance(self.attn_variant, tuple):
            out["attn_variant"] = list(self.attn_variant)
        return out


@dataclass
class BlockParams:
    dfpq: DfpqParams
    cross_out: object
    self_out: object
    ffn: MLPParams


@dataclass
class DecoderParams:
    init_content: object
    learnable_pq: object
    mask_mlp: MLPParams
    blocks: list


def _rng(seed, *tag):
    return np.random.default_rng([seed, *tag])


def build_params(cfg):
    """Seeded frozen weights for every block position of ``cfg.schedule``."""
    n, d, dt = cfg.num_queries, cfg.channels, cfg.np_dtype
    bound = 1 / math.sqrt(d)
    blocks = []
    for pos in range(len(cfg.schedule)):
        rng = _rng(cfg.seed, 1, pos)
        blocks.append(BlockParams(
            dfpq=DfpqParams(
                bias=pq_learnable(n, d, [cfg.seed, 2, pos], dt),
                mlp=MLPParams.init(d, cfg.hidden, d, rng, dt),
            ),
            cross_out=rng.uniform(-bound, bound, (d, d)).astype(dt),
            self_out=rng.uniform(-bound, bound, (d, d)).astype(dt),
            ffn=MLPParams.init(d, cfg.hidden, d, rng, dt),
        ))
    return DecoderParams(
        init_content=_rng(cfg.seed, 3).standard_normal((n, d)).astype(dt),
        learnable_pq=pq_learnable(n, d, [cfg.seed, 4], dt),
        mask_mlp=MLPParams.init(d, cfg.hidden, d, _rng(cfg.seed, 5), dt),
        blocks=blocks,
    )


def map_arrays(obj, fn):
    """Rebuild a parameter tree with ``fn`` applied to every array leaf."""
    if dataclasses.is_dataclass(obj):
        return type(obj)(**{f.name: map_arrays(getattr(obj, f.name), fn) for f in dataclasses.fields(obj)})
    if isinstance(obj, list):
        return [map_arrays(x, fn) for x in obj]
    if isinstance(obj, np.ndarray):
        return fn(obj)
    return obj


def synth_pyramid(base_H, base_W, D, seed, noise=0.01, divisors=(32, 16, 8, 4), dtype=np.float64):
    """Smooth deterministic stand-in features at each divisor.

    A seeded normal field at the coarsest divisor is bilinearly upsampled to
    every finer level, plus independent seeded noise of std ``noise``.
    """
    coarsest = max(divisors)
    if base_H % coarsest or base_W % coarsest:
        raise ParameterError(f"base size {base_H}x{base_W} not divisible by {coarsest}")
    h0, w0 = base_H // coarsest, base_W // coarsest
    field0 = _rng(seed, 0).standard_normal((D, h0 * w0))
    pyramid = {}
    for div in sorted(divisors, reverse=True):
        h, w = base_H // div, base_W // div
        if div == coarsest:
            data = field0.T.copy()
        else:
            data = bilinear_upsample(field0, h0, w0, h, w).T
            if noise:
                data = data + noise * _rng(seed, 0, div).standard_normal((h * w, D))
        pyramid[div] = FeatureMap(h, w, np.ascontiguousarray(data, dtype=dtype))
    return pyramid


def mask_logits(qc, feat, mlp):
    """Per-query logits: mask embedding dotted with every pixel feature."""
    if ad.value(qc).shape[1] != feat.D:
        raise ShapeError("query/feature channels differ", ad.value(qc).shape, feat.data.shape)
    return ad.matmul(mlp(qc), np.ascontiguousarray(feat.data.T))


def mask_head(qc, feat, mlp):
    probs = ad.value(ad.logistic(ad.value(mask_logits(qc, feat, mlp))))
    return MaskPrediction(probs, feat.H, feat.W)


@dataclass
class BlockRecord:
    index: int
    round: int
    position: int
    divisor: int
    H: int
    W: int
    pq_source: str
    attn_kind: str
    scores: np.ndarray
    positional: np.ndarray
    mask: np.ndarray | None = None
    fallbacks: dict = field(default_factory=dict)
    omega: np.ndarray | None = None


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    final_mask_logits: np.ndarray | None = None
    final_node: object = field(default=None, repr=False, compare=False)

    @property
    def omegas(self):
        return [r.omega for r in self.records if r.omega is not None]

    def digest(self):
        h = hashlib.sha256()
        for r in self.records:
            h.update(repr((r.index, r.round, r.position, r.divisor, r.H, r.W, r.pq_source,
                           r.attn_kind, sorted(r.fallbacks.items()))).encode())
            for arr in (r.scores, r.positional, r.mask, r.omega):
                if arr is not None:
                    h.update(np.ascontiguousarray(arr).tobytes())
        if self.final_mask_logits is not None:
            h.update(self.final_mask_logits.tobytes())
        return h.hexdigest()


@dataclass
class _Prev:
    """What the next block needs from the one before it."""

    scores: object
    kp_rows: np.ndarray


def positional_queries(state, feat, pe, cfg, params, prev, *, position, rnd, mask_fn):
    """Positional queries for one block. Returns ``(Q_p, source tag, fallback count)``."""
    variant = cfg.pq_variant
    n, d, dt = cfg.num_queries, cfg.channels, cfg.np_dtype
    if variant == "learnable":
        return params.learnable_pq, "learnable", 0
    if variant == "grid_anchor":
        return pq_grid_anchor(n, d, feat.H, feat.W, dt), "grid_anchor", 0
    if variant == "dynamic_anchor":
        qp, fb = pq_dynamic_anchor(mask_fn(), d, dt)
        return qp, "dynamic_anchor", fb
    if variant == "dynamic_foreground":
        qp, fb = pq_dynamic_foreground(mask_fn().resized(pe.H, pe.W), pe)
        return qp, "dynamic_foreground", fb
    block = params.blocks[position].dfpq
    if rnd < cfg.dfpq_start_round:
        return block.bias, "learnable_fallback", 0
    if prev is None:
        qp, fb = dfpq_bootstrap(mask_fn().resized(pe.H, pe.W), pe, block)
        return qp, "dfpq_bootstrap", fb
    return dfpq_next(prev.scores, prev.kp_rows, block), "dfpq", 0


def decoder_block(state, feat, pe, cfg, params, prev=None, *, position=0, rnd=0, index=0,
                  mask_feat=None, omega=None):
    """One decoder block: positional queries, cross-attention, self-attention, FFN.

    ``omega`` switches the cross-attention to the sparse gathered form.
    ``mask_feat`` is the finest feature map used by the mask head (defaults
    to ``feat``). Returns ``(new_state, BlockRecord, carry for next block)``.
    """
    mask_feat = mask_feat or feat
    bp = params.blocks[position]
    cache = {}

    def mask_fn():
        if "m" not in cache:
            cache["m"] = mask_head(ad.value(state.content), mask_feat, params.mask_mlp)
        return cache["m"]

    qp, tag, pq_fallbacks = positional_queries(state, feat, pe, cfg, params, prev,
                                               position=position, rnd=rnd, mask_fn=mask_fn)
    query = QueryState(state.content, qp)
    fallbacks = {"positional_query": pq_fallbacks}
    if omega is not None:
        out, sparse = attn.hrca(query, feat, pe, omega, cfg.heads)
        scores = attn.scatter_scores(sparse, omega).values
        carry = _Prev(sparse, pe.data[omega.indices])
        kind = "hrca"
    else:
        kind = cfg.attn_kind(position)
        if kind == "masked":
            mask = mask_fn().resized(feat.H, feat.W)
            out, sc, empty = attn.masked_attention(query, feat, pe, mask, cfg.heads)
            fallbacks["masked_attention"] = int(empty.sum())
        else:
            out, sc = attn.cross_attention(query, feat, pe, cfg.heads)
        scores = sc.values
        carry = _Prev(sc.data, pe.data)

    content = ad.add(state.content, ad.matmul(out, bp.cross_out))
    q_self = ad.add(content, qp)
    self_out, _ = attn.attend(q_self, q_self, content, cfg.heads)
    content = ad.add(content, ad.matmul(self_out, bp.self_out))
    content = ad.add(content, bp.ffn(content))

    record = BlockRecord(
        index=index, round=rnd, position=position, divisor=0, H=feat.H, W=feat.W,
        pq_source=tag, attn_kind=kind, scores=np.array(scores), positional=np.array(ad.value(qp)),
        mask=None if "m" not in cache else cache["m"].probs, fallbacks=fallbacks,
        omega=None if omega is None else omega.indices.copy(),
    )
    return QueryState(content, qp), record, carry


def encodings_for(cfg, pyramid):
    return {div: make_pe(cfg.pe_kind, pyramid[div], [cfg.seed, 6, div], cfg.np_dtype)
            for div in cfg.schedule}


def run_faseg(cfg, pyramid=None, params=None, tape=None, encodings=None):
    """Run every round of the block schedule and return a RunTrace.

    With ``tape`` given, ``params`` must already hold Vars recorded on it
    (see :func:`watch_params`); ``trace.final_node`` is then the taped
    final mask-logit matrix.
    """
    if pyramid is None:
        divisors = sorted(set(cfg.schedule) | {cfg.hrca_divisor})
        pyramid = synth_pyramid(*cfg.base_size, cfg.channels, cfg.seed, cfg.noise, divisors, cfg.np_dtype)
    missing = [d for d in cfg.schedule if d not in pyramid]
    if missing:
        raise ConfigError(f"pyramid lacks divisors {missing}")
    for d in cfg.schedule:
        if (pyramid[d].H, pyramid[d].W) != cfg.grid(d) or pyramid[d].D != cfg.channels:
            raise ConfigError(f"pyramid level {d} has shape {pyramid[d].data.shape}, expected grid {cfg.grid(d)}")
    params = params or build_params(cfg)
    encodings = encodings or encodings_for(cfg, pyramid)
    finest = pyramid[min(pyramid)]

    init = params.init_content
    state = QueryState(init, np.zeros_like(ad.value(init)))
    trace = RunTrace()
    prev = None
    latest_source = None
    for rnd in range(cfg.rounds):
        for pos, div in enumerate(cfg.schedule):
            omega = None
            if cfg.hrca_enabled and pos == len(cfg.scales):
                h, w = cfg.grid(div)
                if cfg.omega_mode == "random":
                    omega = attn.random_omega(h, w, cfg.omega_size, [cfg.seed, 7, rnd])
                else:
                    omega = attn.select_omega(latest_source, h, w, cfg.omega_size)
            state, rec, prev = decoder_block(
                state, pyramid[div], encodings[div], cfg, params, prev,
                position=pos, rnd=rnd, index=len(trace.records), mask_feat=finest, omega=omega,
            )
            rec.divisor = div
            trace.records.append(rec)
            if div == cfg.omega_source_divisor and omega is None:
                latest_source = attn.AttnScores(rec.H, rec.W, rec.scores)
    logits = mask_logits(state.content, finest, params.mask_mlp)
    trace.final_mask_logits = np.array(ad.value(logits))
    trace.final_node = logits
    return trace


def watch_params(params, tape):
    return map_arrays(params, tape.watch)
