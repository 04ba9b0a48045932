import json
import os
import shutil

import numpy as np
import pytest
from PIL import Image

from focusattn import cli
from focusattn.attention import AttnScores
from focusattn.errors import ConfigError
from focusattn.kernels import ad

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TINY = {"base_size": [32, 32], "num_queries": 2, "channels": 8, "heads": 2, "rounds": 1}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_outputs(d):
    return {name: open(os.path.join(d, name), "rb").read() for name in sorted(os.listdir(d))}


# config ----------------------------------------------------------------------

def test_defaults_materialized():
    doc = cli.parse_config({}).to_dict()
    assert doc["rounds"] == 3 and doc["bench"] == {"repeats": 5, "warmup": 1}
    assert doc["out_dir"] == "out" and doc["export_attention"] is False


def test_seed_and_out_override():
    cfg = cli.parse_config({"seed": 1}, seed=9, out_dir="x")
    assert cfg.decoder.seed == 9 and cfg.out_dir == "x"


@pytest.mark.parametrize("doc,key", [
    ({"roundz": 3}, "roundz"),
    ({"bench": {"repeat": 3}}, "bench.repeat"),
    ({"rounds": "3"}, "rounds"),
    ({"hrca_enabled": 1}, "hrca_enabled"),
    ({"rounds": True}, "rounds"),
    ({"bench": {"repeats": 2}}, "bench.repeats"),
    ({"heads": 3}, "heads"),
])
def test_bad_config_names_key(doc, key):
    with pytest.raises(ConfigError) as exc:
        cli.parse_config(doc)
    assert str(exc.value).startswith(key + ":")


def test_unknown_key_exit_code(tmp_path, capsys):
    code = cli.main(["demo", "--config", write_config(tmp_path, {"roundz": 1}), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "roundz" in capsys.readouterr().err


def test_invalid_json_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    assert cli.main(["flops", "--config", str(path)]) == 2


def test_missing_config_is_io_error(tmp_path):
    assert cli.main(["flops", "--config", str(tmp_path / "absent.json")]) == 3


def test_unwritable_out_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["demo", "--config", write_config(tmp_path, TINY), "--out", str(blocker / "sub")]) == 3


def test_shipped_configs_parse():
    for name in sorted(os.listdir(os.path.join(ROOT, "configs"))):
        cli.load_config(os.path.join(ROOT, "configs", name))


# graymap export --------------------------------------------------------------

def test_pgm_single_pixel():
    assert cli.pgm_text(np.array([[0.3]])) == "P2\n1 1\n255\n0"


def test_pgm_one_hot():
    assert cli.pgm_text(np.array([[0.0, 0.0], [1.0, 0.0]])) == "P2\n2 2\n255\n0 0\n255 0"


def test_pgm_constant_is_zero():
    assert cli.pgm_text(np.full((2, 3), 0.25)) == "P2\n3 2\n255\n0 0 0\n0 0 0"


def test_pgm_external_reader(tmp_path, rng):
    vals = rng.dirichlet(np.ones(12), size=2)
    path = cli.export_attention(AttnScores(3, 4, vals), str(tmp_path / "m.pgm"), query=1)
    grid = vals[1].reshape(3, 4)
    expected = np.floor((grid - grid.min()) / (grid.max() - grid.min()) * 255 + 0.5).astype(int)
    with Image.open(path) as im:
        assert im.size == (4, 3)
        got = np.asarray(im, dtype=int)
    assert np.array_equal(got, expected)


def test_pgm_name():
    assert cli.attn_map_name(3, 1) == "attn_block3_q1.pgm"


# demo ------------------------------------------------------------------------

def test_demo_exports_one_map_per_block_and_query(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["demo", "--config", write_config(tmp_path, {**TINY, "export_attention": True}), "--out", str(out)])
    assert code == 0
    pgms = sorted(f for f in os.listdir(out) if f.endswith(".pgm"))
    assert pgms == sorted(f"attn_block{t}_q{n}.pgm" for t in range(4) for n in range(2))
    report = json.loads((out / "report.json").read_text())
    assert report["num_blocks"] == 4 and report["attention_maps"] == sorted(report["attention_maps"], key=pgms.index)


def test_demo_report_contents(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["demo", "--config", write_config(tmp_path, TINY), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["omega_sizes"] == [2]
    assert [b["divisor"] for b in report["blocks"]] == [32, 16, 8, 4]
    assert all(b["max_row_sum_error"] < 1e-12 for b in report["blocks"])
    assert all(b["score_entropy"] >= 0 for b in report["blocks"])
    assert report["config"]["channels"] == 8 and "bench" in report["config"]
    assert not any(f.endswith(".pgm") for f in os.listdir(out))


def test_demo_default_schedule_lists_twelve_blocks(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["demo", "--seed", "7", "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["num_blocks"] == 12


def test_demo_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, {**TINY, "export_attention": True, "seed": 7})
    out = tmp_path / "o"
    runs = []
    for _ in range(2):
        assert cli.main(["demo", "--config", cfg, "--out", str(out)]) == 0
        runs.append(read_outputs(out))
        shutil.rmtree(out)
    assert runs[0] == runs[1] and len(runs[0]) == 9


def test_demo_seed_changes_output(tmp_path):
    cfg = write_config(tmp_path, TINY)
    cli.main(["demo", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["demo", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert read_outputs(tmp_path / "a") != read_outputs(tmp_path / "b")


def test_backends_agree(tmp_path):
    from focusattn import kernels

    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernels not built")
    previous = kernels.BACKEND
    cfg = write_config(tmp_path, {**TINY, "export_attention": True})
    try:
        for b in ("cython", "python"):
            assert cli.main(["demo", "--config", cfg, "--out", str(tmp_path / b), "--backend", b]) == 0
    finally:
        kernels.use_backend(previous)
    # exp comes from different libraries, so only near-equality is expected
    a, b = (json.loads((tmp_path / n / "report.json").read_text()) for n in ("cython", "python"))
    assert a["omega_sizes"] == b["omega_sizes"]
    for x, y in zip(a["blocks"], b["blocks"]):
        assert x["pq_source"] == y["pq_source"] and x["fallbacks"] == y["fallbacks"]
        assert abs(x["score_entropy"] - y["score_entropy"]) < 1e-9


# gradcheck -------------------------------------------------------------------

def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks within 0.0001" in out


def test_gradcheck_detects_corrupted_rule(monkeypatch, capsys):
    good = ad.BACKWARD_RULES["softmax_rows"]

    def broken(rec, g):
        return [1.01 * gi for gi in good(rec, g)]

    monkeypatch.setitem(ad.BACKWARD_RULES, "softmax_rows", broken)
    assert cli.main(["gradcheck"]) == 1
    assert "failed: softmax_rows[x]" in capsys.readouterr().out


def test_gradcheck_rejects_f32(tmp_path):
    assert cli.main(["gradcheck", "--config", write_config(tmp_path, {"dtype": "float32"})]) == 2


# flops -----------------------------------------------------------------------

def test_flops_512_config(capsys):
    assert cli.main(["flops", "--config", os.path.join(ROOT, "configs", "scale512.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["core_ratio"] == 32 and doc["memory_ratio_exact"] == "1/32"
    assert doc["input_size"] == [512, 512]
    assert doc["dense"]["config"] == {"N": 100, "HW": 16384, "D": 256, "bytes_per_elem": 4}
    assert set(doc) == {"dense", "hrca", "core_ratio", "core_ratio_exact", "memory_ratio",
                        "memory_ratio_exact", "external_reference", "input_size"}
    for side in ("dense", "hrca"):
        assert set(doc[side]["terms"]) == set(("score_matmul", "softmax", "aggregate_matmul",
                                                "upsample", "topk", "gather"))
        assert doc[side]["total_flops"] == sum(doc[side]["terms"].values())


def test_flops_full_omega(tmp_path, capsys):
    assert cli.main(["flops", "--config", write_config(tmp_path, {**TINY, "omega_divisor": 1})]) == 0
    assert json.loads(capsys.readouterr().out)["core_ratio"] == 1


# bench -----------------------------------------------------------------------

def test_bench_writes_samples(tmp_path):
    cfg = write_config(tmp_path, {**TINY, "bench": {"repeats": 3, "warmup": 0}})
    assert cli.main(["bench", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    doc = json.loads((tmp_path / "b" / "bench.json").read_text())
    for side in ("dense", "hrca"):
        assert len(doc[side]["samples_ns"]) == 3
        assert doc[side]["min_ns"] <= doc[side]["median_ns"]
    assert doc["sizes"]["k"] == 2 and doc["backend"] in ("cython", "python")


def test_bench_full_omega_sanity_band(tmp_path):
    doc = {"base_size": [256, 256], "num_queries": 32, "channels": 32, "heads": 1, "omega_divisor": 1,
           "bench": {"repeats": 7, "warmup": 1}}
    assert cli.main(["bench", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "b")]) == 0
    res = json.loads((tmp_path / "b" / "bench.json").read_text())
    ratio = res["hrca"]["median_ns"] / res["dense"]["median_ns"]
    assert 0.5 < ratio < 2.0, ratio
