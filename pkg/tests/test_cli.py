import json

import numpy as np
import pytest

from kbctransfer.cli import main, read_config, write_config
from kbctransfer.evaluation import read_report

TRAIN = [
    ("barack obama", "born in", "honolulu"),
    ("barack obama", "lived in", "chicago"),
    ("michelle obama", "lived in", "chicago"),
    ("michelle obama", "married to", "barack obama"),
    ("honolulu", "located in", "hawaii"),
    ("chicago", "located in", "illinois"),
    ("obama", "born in", "hawaii"),
]
FAST = ["--dim", "8", "--conve-reshape", "2x4", "--epochs", "2", "--valid-every", "1", "--batch", "4",
        "--lr", "0.01", "--dropout", "0.1"]


def write_triples(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


@pytest.fixture
def data(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    write_triples(d / "train.txt", TRAIN)
    write_triples(d / "valid.txt", [("barack obama", "lived in", "honolulu")])
    write_triples(d / "test.txt", [("michelle obama", "born in", "chicago")])
    (d / "clusters.txt").write_text("barack obama\tobama\n", encoding="utf-8")
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_pretrain_refuses_noencoder(data, tmp_path, capsys):
    assert run("pretrain", "--data", data, "--out", tmp_path / "p", "--encoder", "noencoder", *FAST) == 2
    assert "pre-training requires GRU encoders" in capsys.readouterr().err


def test_missing_inputs_are_reported(data, tmp_path, capsys):
    assert run("finetune", "--data", data, "--out", tmp_path / "f", "--clusters", tmp_path / "nope.txt") == 2
    assert "nope.txt" in capsys.readouterr().err
    assert run("finetune", "--data", data) == 2


def test_pretrain_finetune_evaluate_compose(data, tmp_path):
    pre = tmp_path / "pre"
    assert run("pretrain", "--data", data, "--out", pre, "--model", "conve", *FAST) == 0
    assert (pre / "checkpoint" / "manifest.json").exists() and (pre / "config.txt").exists()
    assert (pre / "train.log").read_text().splitlines()[0].startswith("epoch\tloss")
    for encoder in ("gru", "noencoder"):
        ft = tmp_path / f"ft-{encoder}"
        assert run("finetune", "--data", data, "--out", ft, "--checkpoint", pre / "checkpoint",
                   "--encoder", encoder, "--clusters", data / "clusters.txt", *FAST) == 0
        manifest = json.loads((ft / "checkpoint" / "manifest.json").read_text())
        assert manifest["encoder"] == encoder and manifest["model"] == "conve"
        ev = tmp_path / f"ev-{encoder}"
        assert run("evaluate", "--data", data, "--out", ev, "--checkpoint", ft / "checkpoint",
                   "--clusters", data / "clusters.txt") == 0
        assert read_report(ev / "test_report.tsv") == read_report(ft / "test_report.tsv")
        assert len((ev / "test_ranks.tsv").read_text().splitlines()) == 3
    zs = tmp_path / "zs"
    assert run("zeroshot", "--data", data, "--out", zs, "--checkpoint", pre / "checkpoint") == 0
    header = (zs / "zeroshot_test_report.tsv").read_text().splitlines()[0].split("\t")
    assert header[-6:] == ["H@1", "H@3", "H@5", "H@10", "H@30", "H@50"]


def test_random_init_fine_tune_and_dimension_refusal(data, tmp_path, capsys):
    pre = tmp_path / "pre"
    assert run("pretrain", "--data", data, "--out", pre, "--model", "tucker", *FAST) == 0
    assert run("finetune", "--data", data, "--out", tmp_path / "rand", "--model", "tucker", *FAST) == 0
    assert run("finetune", "--data", data, "--out", tmp_path / "bad", "--checkpoint", pre / "checkpoint",
               *FAST, "--dim", "12") == 2
    assert "dimension" in capsys.readouterr().err


def test_rerun_from_config_echo_is_bit_identical(data, tmp_path):
    a = tmp_path / "a"
    assert run("finetune", "--data", data, "--out", a, "--model", "5star", "--n3", "0.1", *FAST) == 0
    echo = read_config(a / "config.txt")
    echo["out"] = str(tmp_path / "b")
    write_config(echo, tmp_path / "echo.txt")
    assert run("finetune", "--config", tmp_path / "echo.txt") == 0
    for f in ("train.log", "test_report.tsv", "checkpoint/tensors.bin"):
        assert (a / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert read_config(tmp_path / "b" / "config.txt")["n3"] == 0.1


def test_flags_override_config_file(data, tmp_path):
    (tmp_path / "c.txt").write_text("# settings\nmodel=tucker\nlr=0.5\n")
    assert run("finetune", "--config", tmp_path / "c.txt", "--data", data, "--out", tmp_path / "o",
               *FAST, "--lr", "0.02") == 0
    echo = read_config(tmp_path / "o" / "config.txt")
    assert echo["model"] == "tucker" and echo["lr"] == 0.02


def test_evaluate_twice_is_identical(data, tmp_path):
    assert run("finetune", "--data", data, "--out", tmp_path / "f", "--model", "tucker", *FAST) == 0
    for name in ("e1", "e2"):
        assert run("evaluate", "--data", data, "--out", tmp_path / name, "--checkpoint",
                   tmp_path / "f" / "checkpoint", "--split", "valid") == 0
    assert (tmp_path / "e1" / "valid_report.tsv").read_bytes() == (tmp_path / "e2" / "valid_report.tsv").read_bytes()


def test_gridsearch_marks_the_best_run(data, tmp_path):
    (tmp_path / "grid.txt").write_text("lr=0.0001,0.03\n")
    out = tmp_path / "g"
    assert run("gridsearch", "--data", data, "--out", out, "--grid", tmp_path / "grid.txt", "--model", "tucker",
               *FAST) == 0
    rows = [line.split("\t") for line in (out / "grid.tsv").read_text().splitlines()[1:]]
    assert len(rows) == 2 and [r[3] for r in rows].count("*") == 1
    best = max(float(r[1]) for r in rows)
    assert float(next(r for r in rows if r[3] == "*")[1]) == best
    assert sorted(p.name for p in (out / "runs").iterdir()) == ["run000.log", "run001.log"]
    assert (out / "winner" / "checkpoint" / "manifest.json").exists()
    assert read_config(out / "winner" / "config.txt")["command"] == "finetune"


def test_single_cell_grid_equals_finetune(data, tmp_path):
    (tmp_path / "grid.txt").write_text("lr=0.01\n")
    assert run("gridsearch", "--data", data, "--out", tmp_path / "g", "--grid", tmp_path / "grid.txt",
               "--model", "tucker", *FAST) == 0
    assert run("finetune", "--data", data, "--out", tmp_path / "f", "--model", "tucker", *FAST) == 0
    assert (tmp_path / "g" / "runs" / "run000.log").read_bytes() == (tmp_path / "f" / "train.log").read_bytes()
    assert ((tmp_path / "g" / "winner" / "checkpoint" / "tensors.bin").read_bytes()
            == (tmp_path / "f" / "checkpoint" / "tensors.bin").read_bytes())


def test_in_batch_flag_maps_to_mode(data, tmp_path):
    assert run("finetune", "--data", data, "--out", tmp_path / "o", "--in-batch-negatives", "on", *FAST) == 0
    assert read_config(tmp_path / "o" / "config.txt")["negatives"] == "in-batch"
