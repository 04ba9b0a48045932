"""Command-line entry point: ``focusattn {demo,gradcheck,flops,bench}``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 I/O error.
"""
import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import costmodel, kernels
from .bench import run_bench
from .decoder import DecoderConfig, run_faseg
from .errors import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

_DECODER_TYPES = {
    "base_size": list, "num_queries": int, "channels": int, "heads": int, "rounds": int,
    "scales": list, "hrca_enabled": bool, "hrca_divisor": int, "omega_divisor": int,
    "omega_source_divisor": int, "omega_mode": str, "pq_variant": str, "attn_variant": (str, list),
    "pe_kind": str, "mlp_hidden": (int, type(None)), "dtype": str, "seed": int,
    "dfpq_start_round": int, "noise": (int, float),
}


@dataclass
class BenchSettings:
    repeats: int = 5
    warmup: int = 1


@dataclass
class CliConfig:
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    out_dir: str = "out"
    export_attention: bool = False
    bench: BenchSettings = field(default_factory=BenchSettings)

    def to_dict(self):
        out = self.decoder.to_dict()
        out.update(out_dir=self.out_dir, export_attention=self.export_attention,
                   bench=dataclasses.asdict(self.bench))
        return out


def _check_type(key, val, expected):
    allowed = expected if isinstance(expected, tuple) else (expected,)
    # bool is an int subclass; keep them apart
    if (isinstance(val, bool) and bool not in allowed) or not isinstance(val, allowed):
        names = "/".join(t.__name__ for t in allowed)
        raise ConfigError(f"{key}: expected {names}, got {type(val).__name__}")


def parse_config(doc, seed=None, out_dir=None):
    """Validate a config mapping; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    doc = dict(doc)
    extra = {"out_dir": str, "export_attention": bool, "bench": dict}
    unknown = sorted(set(doc) - set(_DECODER_TYPES) - set(extra))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    for key, val in doc.items():
        _check_type(key, val, _DECODER_TYPES.get(key) or extra[key])
    bench_doc = doc.pop("bench", {})
    bad = sorted(set(bench_doc) - {"repeats", "warmup"})
    if bad:
        raise ConfigError(f"bench.{bad[0]}: unknown key")
    for key, val in bench_doc.items():
        _check_type(f"bench.{key}", val, int)
    bench = BenchSettings(**bench_doc)
    if bench.repeats < 3:
        raise ConfigError("bench.repeats: must be at least 3")
    if bench.warmup < 0:
        raise ConfigError("bench.warmup: must be non-negative")
    cli_fields = {k: doc.pop(k) for k in ("out_dir", "export_attention") if k in doc}
    if seed is not None:
        doc["seed"] = seed
    try:
        decoder = DecoderConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    cfg = CliConfig(decoder, bench=bench, **cli_fields)
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg


def load_config(path, seed=None, out_dir=None):
    """Read and validate a config file. ``path=None`` gives all defaults."""
    doc = {}
    if path is not None:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return parse_config(doc, seed, out_dir)


# attention-map export -------------------------------------------------------

def pgm_text(grid):
    """Plain (P2) graymap text, min-max scaled to 0..255; constant maps are all 0."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    lo, hi = grid.min(), grid.max()
    if hi > lo:
        levels = np.floor((grid - lo) / (hi - lo) * 255 + 0.5).astype(int)
    else:
        levels = np.zeros((h, w), dtype=int)
    rows = [" ".join(str(v) for v in row) for row in levels]
    return "\n".join(["P2", f"{w} {h}", "255", *rows])


def export_attention(scores, path, query=0):
    """Write one query's attention map (an AttnScores row) as a P2 graymap."""
    grid = np.asarray(scores.values)[query].reshape(scores.H, scores.W)
    with open(path, "w") as fh:
        fh.write(pgm_text(grid))
    return path


def attn_map_name(block, query):
    return f"attn_block{block}_q{query}.pgm"


# commands ------------------------------------------------------------------

def _entropy(rows):
    p = np.asarray(rows, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return float(np.mean(-(p * logs).sum(axis=1)))


def demo_report(cfg, trace):
    blocks = []
    totals = {}
    for r in trace.records:
        for k, v in r.fallbacks.items():
            totals[k] = totals.get(k, 0) + v
        blocks.append({
            "index": r.index, "round": r.round, "divisor": r.divisor, "grid": [r.H, r.W],
            "pq_source": r.pq_source, "attn_kind": r.attn_kind, "fallbacks": dict(sorted(r.fallbacks.items())),
            "omega_size": None if r.omega is None else int(r.omega.size),
            "score_entropy": _entropy(r.scores),
            "max_row_sum_error": float(np.abs(r.scores.sum(axis=1) - 1).max()),
        })
    probs = 1 / (1 + np.exp(-trace.final_mask_logits))
    return {
        "config": cfg.to_dict(),
        "num_blocks": len(trace.records),
        "blocks": blocks,
        "fallback_totals": dict(sorted(totals.items())),
        "omega_sizes": [int(o.size) for o in trace.omegas],
        "final_mask": {"shape": list(trace.final_mask_logits.shape),
                       "foreground_fraction": float((probs > 0.5).mean()),
                       "logit_mean": float(trace.final_mask_logits.mean())},
        "trace_digest": trace.digest(),
    }


def cmd_demo(cfg):
    trace = run_faseg(cfg.decoder)
    report = demo_report(cfg, trace)
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.export_attention:
        from .attention import AttnScores

        names = []
        for r in trace.records:
            scores = AttnScores(r.H, r.W, r.scores)
            for q in range(r.scores.shape[0]):
                name = attn_map_name(r.index, q)
                export_attention(scores, os.path.join(cfg.out_dir, name), q)
                names.append(name)
        report["attention_maps"] = names
    with open(os.path.join(cfg.out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(trace.records)} blocks, digest {report['trace_digest'][:16]}, wrote {cfg.out_dir}/report.json")
    return EXIT_OK


def cmd_gradcheck(cfg, out=None):
    from .gradcheck import run_gradient_suite

    out = out or sys.stdout

    if cfg.decoder.np_dtype is not np.float64:
        raise ConfigError(f"dtype: gradient checks require float64, got {cfg.decoder.dtype}")
    results = run_gradient_suite(seed=cfg.decoder.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:44s} max_rel_err={r.max_rel_error:.3e}", file=out)
    print(f"{len(results) - len(failed)}/{len(results)} checks within {results[0].tolerance:g}", file=out)
    for r in failed:
        print(f"failed: {r.name}", file=out)
    return EXIT_FAIL if failed else EXIT_OK


def flops_document(dcfg):
    h, w = dcfg.grid(dcfg.hrca_divisor)
    hl, wl = dcfg.grid(dcfg.omega_source_divisor)
    doc = costmodel.compare(dcfg.num_queries, h * w, dcfg.omega_size, dcfg.channels, hl * wl,
                            np.dtype(dcfg.np_dtype).itemsize)
    doc["input_size"] = list(dcfg.base_size)
    return doc


def cmd_flops(cfg, out=None):
    out = out or sys.stdout
    print(json.dumps(flops_document(cfg.decoder), indent=2, sort_keys=True), file=out)
    return EXIT_OK


def cmd_bench(cfg):
    d = cfg.decoder
    h, w = d.grid(d.hrca_divisor)
    hl, wl = d.grid(d.omega_source_divisor)
    result = run_bench(d.num_queries, h, w, d.channels, hl, wl, d.omega_size, d.heads,
                       cfg.bench.repeats, cfg.bench.warmup, d.seed, d.np_dtype)
    result["backend"] = kernels.BACKEND
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "bench.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    dm, sm = result["dense"]["median_ns"], result["hrca"]["median_ns"]
    print(f"dense {dm / 1e6:.2f} ms, hrca {sm / 1e6:.2f} ms (median of {cfg.bench.repeats}, {kernels.BACKEND} kernels)")
    return EXIT_OK


COMMANDS = {"demo": cmd_demo, "gradcheck": cmd_gradcheck, "flops": cmd_flops, "bench": cmd_bench}


def build_parser():
    parser = argparse.ArgumentParser(prog="focusattn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file (defaults used when omitted)")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--backend", choices=["cython", "python"], help="kernel backend")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.backend:
            kernels.use_backend(args.backend)
        cfg = load_config(args.config, args.seed, args.out)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ImportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
