import csv

import pytest

from stnet.cli import main, read_config
from stnet.mirrored import CANONICAL_PAIRS


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_data_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.stds", tmp_path / "b.stds"
    assert run("gen-data", "--n", 50, "--res", 16, "--seed", 7, "--out", a) == 0
    assert run("gen-data", "--n", 50, "--res", 16, "--seed", 7, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_check_laws_csv(tmp_path, capsys):
    out = tmp_path / "laws.csv"
    assert run("check-laws", "--dim", 16, "--samples", 512, "--out", out) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 29 and rows[0][:2] == ["pair", "count"]
    assert [r[0] for r in rows[1:]] == [f"{p.meet_op}/{p.join_op}" for p in CANONICAL_PAIRS]
    assert "3 rows differ" in capsys.readouterr().out
    assert run("check-laws", "--preset", "float32", "--out", out) == 0
    assert "0 rows differ" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert run("frobnicate") != 0
    assert run("gen-data", "--bogus") != 0
    assert "usage" in capsys.readouterr().err


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("# desk\nn = 30\nres=8\nseed = 3\n")
    assert read_config(conf) == {"n": "30", "res": "8", "seed": "3"}
    a, b = tmp_path / "a.stds", tmp_path / "b.stds"
    assert run("gen-data", "--config", conf, "--out", a) == 0
    assert run("gen-data", "--n", 30, "--res", 8, "--seed", 3, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert run("gen-data", "--config", conf, "--n", 40, "--out", b) == 0
    assert a.read_bytes() != b.read_bytes()
    conf.write_text("nope = 1\n")
    assert run("gen-data", "--config", conf, "--out", a) != 0


def test_missing_file_is_an_error(tmp_path, capsys):
    assert run("train-embed", "--data", tmp_path / "missing.stds") == 1
    assert "error" in capsys.readouterr().err


def test_pipeline(tmp_path, capsys):
    d = tmp_path
    assert run("gen-data", "--n", 60, "--res", 8, "--seed", 1, "--out", d / "d.stds") == 0
    assert run("train-embed", "--data", d / "d.stds", "--latent-dim", 16, "--epochs", 2,
               "--out", d / "e.stnw", "--latents-out", d / "z.stlz") == 0
    common = ["--data", d / "d.stds", "--embed", d / "e.stnw", "--latents", d / "z.stlz"]
    assert run("train-transport", "--pair", "max,min", "--epochs", 0, *common, "--out", d / "riesz.stnw") == 0
    assert run("train-transport", "--pair", "min,add", "--epochs", 1, "--steps", 3, "--batch-terms", 4,
               *common, "--out", d / "ma.stnw") == 0
    assert run("train-baseline", "--kind", "symmetric", "--epochs", 1, "--steps", 3, "--batch-terms", 4,
               *common, "--out", d / "sym.stnw") == 0
    models = [d / "riesz.stnw", d / "ma.stnw", d / "sym.stnw"]
    assert run("eval-iou", "--models", *models, *common, "--points", 300, "--num-terms", 3,
               "--max-symbols", 3, "--out", d / "perf.csv") == 0
    assert run("eval-consistency", "--models", d / "riesz.stnw", *common, "--points", 300,
               "--num-terms", 5, "--j-max", 3, "--out", d / "cons.csv") == 0
    rows = list(csv.DictReader((d / "cons.csv").open()))
    assert {r["value"] for r in rows if r["metric"] in ("iou_min", "iou_median")} == {"1"}
    assert run("report", d / "perf.csv", d / "cons.csv", "--plot-data", d / "plot.csv") == 0
    text = capsys.readouterr().out
    assert "performance" in text and "self-consistency" in text
    assert (d / "plot.csv").read_text().startswith("experiment,model_id")
