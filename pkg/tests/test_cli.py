import csv
import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from xtrack.evalcli import certify, cli
from xtrack.evalcli.ablation import TABLE_GRID, ablate
from xtrack.evalcli.cli import cli_main
from xtrack.evalcli.configfile import (
    ConfigFileError,
    build_format_config,
    build_model_config,
    build_train_config,
    data_options,
    dump_config,
    parse_config,
)
from xtrack.model import ModelConfig, TrainConfig
from xtrack.scenario import HIGHD, read_archive, write_archive

TOY = """
# toy dimensions
embed_dim = 8
encoder_hidden = 8
decoder_hidden = 8
gat_heads = 2
gat_dim = 8
interaction_dim = 8
epochs = 2   # short
batch_size = 4
"""


# ---------------------------------------------------------------- config file

def test_parse_config_comments_and_errors():
    vals = parse_config("balance = no\n# x\n\nseed = 3 # trailing\n")
    assert vals == {"balance": "no", "seed": "3"}
    with pytest.raises(ConfigFileError, match="line 2"):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigFileError, match="unknown key"):
        parse_config("colour = red\n")
    with pytest.raises(ConfigFileError):
        parse_config("just words\n")


def test_config_values_are_typed():
    vals = parse_config("variant = xtraj\nencoder_hidden = 12\nclip_norm = none\nlearning_rate = 0.01\n"
                        "gat_concat2 = false\noutput_scale = 10, 20\nbalance = yes\nstride = 0.5\n")
    mc, tc = build_model_config(vals), build_train_config(vals)
    assert mc.variant == "xtraj" and mc.encoder_hidden == 12 and mc.gat_concat2 is False
    assert mc.output_scale == (10.0, 20.0)
    assert tc.clip_norm is None and tc.learning_rate == 0.01
    assert data_options(vals) == {"balance": True, "stride": 0.5}
    with pytest.raises(ConfigFileError):
        build_model_config({"encoder_hidden": "wide"})


def test_config_roundtrip():
    mc = ModelConfig(variant="xtraj", encoder_cell="mlstm", encoder_hidden=24, seed=7)
    tc = TrainConfig(batch_size=8, clip_norm=2.5, lr_decay=0.99, seed=7)
    vals = parse_config(dump_config(mc, tc))
    assert build_model_config(vals) == mc
    assert build_train_config(vals) == tc


def test_format_keys_override_base():
    fmt = build_format_config({"format.column.x": "posX", "format.frame_rate": "30"}, HIGHD)
    assert fmt.vendor("x") == "posX" and fmt.frame_rate == 30.0
    assert HIGHD.columns == {} and HIGHD.frame_rate == 25.0


# ---------------------------------------------------------------- commands

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "toy.cfg").write_text(TOY)
    rc = cli_main(["synth", "--out", str(d / "data.jsonl"), "--keep-lane", "3", "--accelerating", "2",
                   "--lane-change", "3", "--seed", "4"])
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def checkpoint(workdir):
    ck = workdir / "model.json"
    rc = cli_main(["train", "--config", str(workdir / "toy.cfg"), "--data", str(workdir / "data.jsonl"),
                   "--out", str(ck), "--seed", "1"])
    assert rc == 0
    return ck


def test_synth_writes_archive(workdir):
    assert len(read_archive(workdir / "data.jsonl")) == 8


def test_unknown_flag_prints_usage(capsys):
    assert cli_main(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert cli_main(["train"]) == 1
    assert "--data" in capsys.readouterr().err


def test_bad_seed_is_validation_error(workdir):
    assert cli_main(["synth", "--out", str(workdir / "x.jsonl"), "--seed", "-3"]) == 1


def test_flags_override_config_file(workdir):
    args = cli.build_parser().parse_args(["train", "--config", str(workdir / "toy.cfg"), "--epochs", "9"])
    vals = cli._settings(args)
    assert vals["epochs"] == "9" and vals["encoder_hidden"] == "8"


def test_predict_row_count(workdir, checkpoint):
    out = workdir / "pred.csv"
    assert cli_main(["predict", "--checkpoint", str(checkpoint), "--data", str(workdir / "data.jsonl"),
                     "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["scenario_id", "t", "x_pred", "y_pred", "ax_pred", "psidot_pred"]
    assert len(rows) - 1 == 8 * 25
    assert rows[1][1] == "0.2" and rows[25][1] == "5.0"


def test_evaluate_is_idempotent(workdir, checkpoint):
    a, b = workdir / "a.json", workdir / "b.json"
    for out in (a, b):
        assert cli_main(["evaluate", "--checkpoint", str(checkpoint), "--data", str(workdir / "data.jsonl"),
                         "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    assert rep["n_scenarios"] == 8 and rep["ade"] > 0


def test_evaluate_perfect_predictions(workdir):
    scen = read_archive(workdir / "data.jsonl")
    path = workdir / "gt.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cli.PRED_HEADER)
        for s in scen:
            for k, (x, y) in enumerate(s.future_xy()):
                w.writerow([s.scenario_id, repr(round((k + 1) * 0.2, 12)), repr(float(x)), repr(float(y))])
    out = workdir / "perfect.json"
    assert cli_main(["evaluate", "--predictions", str(path), "--data", str(workdir / "data.jsonl"),
                     "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["ade"] == 0.0 and rep["fde"] == 0.0


def test_evaluate_needs_a_source(workdir):
    assert cli_main(["evaluate", "--data", str(workdir / "data.jsonl"), "--out", str(workdir / "z.json")]) == 1


def test_checkpoint_mismatch_exits_1(workdir):
    assert cli_main(["predict", "--checkpoint", str(workdir / "data.jsonl"), "--data", str(workdir / "data.jsonl"),
                     "--out", str(workdir / "p.csv")]) == 1


def test_failed_certification_exits_2(monkeypatch, capsys):
    failing = certify.SuiteReport([certify.CheckResult("linear", 0, 1.0, 10, 1e-4)], 0.0)
    monkeypatch.setattr(certify, "run_suite", lambda **kw: failing)
    assert cli_main(["gradcheck", "--seeds", "1"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_certification_report_json(monkeypatch, tmp_path):
    results = [certify.CheckResult("linear", s, np.float64(1e-8), 10, 1e-4) for s in range(2)]
    monkeypatch.setattr(certify, "run_suite", lambda **kw: certify.SuiteReport(results, 1.5))
    out = tmp_path / "g.json"
    assert cli_main(["gradcheck", "--seeds", "2", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["passed"] is True and doc["checks"]["linear"]["seeds"] == 2


def test_runtime_failure_exits_2(monkeypatch, workdir):
    def boom(*a, **kw):
        raise cli.TrainingError("diverged", 0, 0)

    monkeypatch.setattr(cli, "train", boom)
    assert cli_main(["train", "--data", str(workdir / "data.jsonl"), "--out", str(workdir / "never.json")]) == 2


def test_preprocess_from_tracks(tmp_path):
    tracks = tmp_path / "rec.csv"
    assert cli_main(["synth", "--tracks", "--vehicles", "30", "--out", str(tracks), "--seed", "2"]) == 0
    out = tmp_path / "scen"
    assert cli_main(["preprocess", "--data", str(tracks), "--out", str(out), "--seed", "2"]) == 0
    stats = json.loads((out / "stats.json").read_text())
    total = sum(len(read_archive(out / f"{k}.jsonl")) for k in ("train", "val", "test"))
    assert total == sum(stats["counts"].values()) > 0


def test_single_combination_ablation(small_scenarios):
    mc = ModelConfig(embed_dim=8, encoder_hidden=8, decoder_hidden=8, gat_heads=2, gat_dim=8, interaction_dim=8)
    table = ablate(small_scenarios, None, mc, TrainConfig(epochs=1, batch_size=5), grid=[("slstm", "lstm")])
    assert len(table.rows) == 1 and table.best().encoder == "slstm"
    assert "sLSTM" in table.to_text()
    assert len(TABLE_GRID) == 6


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "xtrack", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("preprocess", "synth", "train", "evaluate", "predict", "gradcheck", "ablate"):
        assert name in res.stdout
