import csv
import hashlib
import json

import numpy as np
import pytest

from pcnn.cli import main
from pcnn.config import ExperimentConfig
from pcnn.network import ConfigError
from pcnn.optics import load_matrix

from conftest import mnist_dir, needs_mnist

REF21 = {"optics": {"wavelength": 1.55e-6, "slab_index": 2.85, "mode_width": 5e-7,
                   "radius": 340.9e-6, "inputs": 21},
        "sweep": {"n": 32, "steps": 3}}


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# --- config --------------------------------------------------------------------

def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig.from_dict({"colour": 1})
    with pytest.raises(ConfigError, match="optics"):
        ExperimentConfig.from_dict({"optics": {"wavelenght": 1.5e-6}})


def test_require_names_key():
    with pytest.raises(ConfigError, match="optics.wavelength"):
        ExperimentConfig().require("optics", "wavelength")


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_dict({"seed": 4, "train": {"epochs": 3}, **REF21})
    again = ExperimentConfig.load(write_cfg(tmp_path, cfg.to_dict()))
    assert again == cfg
    assert again.network_config().seed == 4 and again.train_spec().epochs == 3


def test_desk_scale():
    cfg = ExperimentConfig()
    cfg.apply_desk_scale()
    assert (cfg.train.train_subset, cfg.train.test_subset, cfg.train.epochs, cfg.noise.instances) == (10000, 2000, 10, 5)


# --- design / footprint / gradcheck -----------------------------------------------

def test_design_ref21(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["design", "--config", write_cfg(tmp_path, REF21), "--out", str(out), "--sweep"]) == 0
    printed = capsys.readouterr().out
    assert "F=0.99" in printed and "T=0.16" in printed
    report = json.loads((out / "design.json").read_text())
    assert report["T"] == pytest.approx(0.162, abs=0.01)
    assert load_matrix(out / "transfer_matrix.bin").shape == (21, 21)
    rows = read_csv(out / "tradeoff.csv")
    assert list(rows[0]) == ["theta_deg", "R_m", "R_norm_m", "F", "T"] and len(rows) == 3
    assert json.loads((out / "config.resolved.json").read_text())["optics"]["inputs"] == 21
    manifest = json.loads((out / "manifest.json").read_text())
    for entry in manifest["files"]:
        assert hashlib.sha256((out / entry["name"]).read_bytes()).hexdigest() == entry["sha256"]


def test_design_full_precision(tmp_path):
    out = tmp_path / "run"
    main(["design", "--config", write_cfg(tmp_path, REF21), "--out", str(out), "--sweep"])
    text = (out / "tradeoff.csv").read_text().splitlines()[1]
    assert len(text.split(",")[3].replace("0.", "", 1)) >= 15


def test_design_missing_key(tmp_path, capsys):
    cfg = {"optics": {k: v for k, v in REF21["optics"].items() if k != "wavelength"}}
    assert main(["design", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "r")]) != 0
    assert "optics.wavelength" in capsys.readouterr().err


def test_refuses_non_empty_out(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["footprint", "--out", str(out)]) != 0
    assert "refusing" in capsys.readouterr().err
    assert (out / "keep.txt").read_text() == "x"


def test_footprint(tmp_path, capsys):
    assert main(["footprint", "--out", str(tmp_path / "r")]) == 0
    printed = capsys.readouterr().out
    assert "1024 MZIs" in printed and "6.14 mm^2" in printed
    row = read_csv(tmp_path / "r" / "footprint.csv")[0]
    assert abs(float(row["ratio"]) - 34) <= 3.4


def test_gradcheck_exit_codes(tmp_path, monkeypatch):
    monkeypatch.delenv("PCNN_DATA_DIR", raising=False)
    ok = write_cfg(tmp_path, {"network": {"preset": "PCNN-32-8"}}, "a.json")
    assert main(["gradcheck", "--config", ok, "--out", str(tmp_path / "a")]) == 0
    strict = write_cfg(tmp_path, {"network": {"preset": "PCNN-32-8"},
                                  "gradcheck": {"tolerance": 1e-30}}, "b.json")
    assert main(["gradcheck", "--config", strict, "--out", str(tmp_path / "b")]) == 1


def test_flags_override_file(tmp_path):
    from pcnn.cli import build_parser, resolve_config
    path = write_cfg(tmp_path, {"seed": 1, "network": {"preset": "MLP-784"}, "retrain": {"sigma": 0.2}})
    args = build_parser().parse_args(["retrain", "--config", path, "--seed", "7", "--preset",
                                      "PCNN-32-8", "--sigma", "0.05", "--scope", "final"])
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.network.preset, cfg.retrain.sigma, cfg.retrain.scope) == (
        7, "PCNN-32-8", 0.05, "final_layer_only")
    args = build_parser().parse_args(["retrain", "--config", path])
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.network.preset, cfg.retrain.sigma, cfg.retrain.scope) == (1, "MLP-784", 0.2, "full")


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "r")]) != 0
    assert "none.json" in capsys.readouterr().err


def test_bad_data_path_echoed(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"data": {"root": str(tmp_path / "nowhere")}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r")]) != 0
    assert str(tmp_path / "nowhere") in capsys.readouterr().err


# --- data-backed subcommands ------------------------------------------------------

SMALL = {"train": {"epochs": 2, "train_subset": 300, "test_subset": 200},
         "noise": {"sigmas": [0.0, 0.05], "instances": 2, "kinds": ["phase_only"]},
         "retrain": {"epochs": 1}, "network": {"preset": "PCNN-32-8"}}


@needs_mnist
def test_train_evaluate_noise_retrain(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PCNN_DATA_DIR", str(mnist_dir().parent))
    cfg = write_cfg(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(a)]) == 0
    assert main(["train", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "train_report.csv").read_bytes() == (b / "train_report.csv").read_bytes()
    hist = read_csv(a / "train_report.csv")
    assert list(hist[0]) == ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]
    ckpt = str(a / "checkpoint.ckpt")

    assert main(["evaluate", "--config", cfg, "--checkpoint", ckpt, "--out", str(tmp_path / "e")]) == 0
    summary = (tmp_path / "e" / "summary.txt").read_text()
    assert f"accuracy={hist[-1]['test_acc']}" in summary

    assert main(["noise", "--config", cfg, "--checkpoint", ckpt, "--out", str(tmp_path / "n")]) == 0
    rows = read_csv(tmp_path / "n" / "noise.csv")
    assert list(rows[0]) == ["sigma", "kind", "mean_acc", "std_acc", "instances", "seed"]
    assert rows[0]["mean_acc"] == hist[-1]["test_acc"]

    assert main(["retrain", "--config", cfg, "--checkpoint", ckpt, "--scope", "full",
                 "--out", str(tmp_path / "r")]) == 0
    rows = read_csv(tmp_path / "r" / "retrain.csv")
    assert rows[0]["scope"] == "full" and float(rows[0]["sigma"]) == 0.05 and len(rows) == 2


@needs_mnist
def test_sweep_subcommand(tmp_path, monkeypatch):
    monkeypatch.setenv("PCNN_DATA_DIR", str(mnist_dir().parent))
    cfg = dict(SMALL, network={"preset": "PCNN-112-16"}, sweep={"thetas_deg": [10.0]},
               train={"epochs": 1, "train_subset": 200, "test_subset": 100})
    assert main(["sweep", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "s")]) == 0
    rows = read_csv(tmp_path / "s" / "fidelity_accuracy.csv")
    assert list(rows[0]) == ["theta_deg", "R_m", "F", "T", "accuracy"]
