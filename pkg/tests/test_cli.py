#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Тесты командной строки"""

import csv
import io
import os

import numpy as np
import pytest

from anytsr.app.cli import build_parser, main
from anytsr.app.trainer import CHECKPOINT_NAME, LOSS_LOG_NAME
from anytsr.utils.helpers import scaled_size
from anytsr.utils.imaging import load_image, save_image

SMALL_SETTINGS = [
    "channels=8", "layers=1", "blocks=1", "d_state=4", "sam_hidden=16", "neo_width=16", "neo_heads=2",
    "lr_size=8", "batch=2", "epochs=2", "repeats_per_image=2", "warmup_epochs=1", "scan_mode=parallel",
]


def train_args(data, out, *extra):
    args = ["train", "--data", str(data), "--out", str(out), "--seed", "3"]
    for item in SMALL_SETTINGS:
        args += ["--set", item]
    return args + list(extra)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "synth"
    assert main(["synth-data", "--out", str(data), "--train-count", "4", "--test-count", "2",
                 "--size", "64", "--seed", "1"]) == 0
    out = root / "run"
    assert main(train_args(data, out, "--max-steps", "3")) == 0
    return root, data, out / CHECKPOINT_NAME


@pytest.mark.parametrize("command,flags", [
    ("train", ["--config", "--set", "--data", "--out", "--seed", "--workers", "--deterministic",
               "--max-steps", "--resume"]),
    ("infer", ["--ckpt", "--input", "--scale", "--output", "--bit-depth"]),
    ("eval", ["--ckpt", "--data", "--scales", "--csv", "--crop-border", "--dump-dir", "--plot"]),
    ("multistep", ["--ckpt", "--data", "--chains", "--csv", "--crop-border"]),
    ("synth-data", ["--out", "--train-count", "--test-count", "--size", "--seed"]),
    ("gradcheck", ["--preset", "--blocks", "--seed", "--max-elements"]),
])
def test_help_lists_flags(capsys, command, flags):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for flag in flags:
        assert flag in text


def test_global_flags():
    args = build_parser().parse_args(["-v", "--threads", "2", "gradcheck"])
    assert args.verbose == 1
    assert args.threads == 2


def test_synth_data_layout(workspace):
    _, data, _ = workspace
    assert len(os.listdir(data / "train")) == 4
    assert len(os.listdir(data / "test")) == 2
    assert load_image(str(data / "train" / "synth_0000.png")).shape == (64, 64)


def test_same_seed_same_loss_log(tmp_path, workspace):
    _, data, _ = workspace
    assert main(train_args(data, tmp_path / "a", "--max-steps", "3")) == 0
    assert main(train_args(data, tmp_path / "b", "--max-steps", "3")) == 0
    first = (tmp_path / "a" / LOSS_LOG_NAME).read_text(encoding="utf-8")
    assert first == (tmp_path / "b" / LOSS_LOG_NAME).read_text(encoding="utf-8")
    assert len(first.splitlines()) == 3


def test_config_file(tmp_path, workspace):
    _, data, _ = workspace
    path = tmp_path / "run.cfg"
    path.write_text("\n".join(SMALL_SETTINGS[:-1]).replace("=", " = ") + "\nmax_steps = 2\n", encoding="utf-8")
    assert main(["train", "--config", str(path), "--data", str(data), "--out", str(tmp_path / "out")]) == 0
    assert len((tmp_path / "out" / LOSS_LOG_NAME).read_text(encoding="utf-8").splitlines()) == 2


def test_resume(tmp_path, workspace):
    _, data, checkpoint = workspace
    out = tmp_path / "resumed"
    assert main(train_args(data, out, "--max-steps", "5", "--resume", str(checkpoint))) == 0
    lines = (out / LOSS_LOG_NAME).read_text(encoding="utf-8").splitlines()
    assert [int(line.split("\t")[0]) for line in lines] == [3, 4]


def test_missing_data(tmp_path, capsys):
    absent = tmp_path / "absent"
    assert main(train_args(absent, tmp_path / "out")) == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error[data]:")
    assert str(absent) in err
    assert "\n" not in err


def test_missing_data_key(capsys):
    assert main(["train"]) == 2
    assert "error[config]" in capsys.readouterr().err


def test_unknown_key(tmp_path, workspace, capsys):
    _, data, _ = workspace
    assert main(train_args(data, tmp_path / "out", "--set", "bogus=1")) == 2
    assert "bogus" in capsys.readouterr().err


@pytest.mark.parametrize("scale", [2.45, 1.0])
def test_infer(tmp_path, workspace, scale):
    _, _, checkpoint = workspace
    source = tmp_path / "lr.png"
    save_image(str(source), np.random.default_rng(0).random((64, 64)))
    output = tmp_path / "sr.png"
    assert main(["infer", "--ckpt", str(checkpoint), "--input", str(source), "--scale", str(scale),
                 "--output", str(output)]) == 0
    size = scaled_size(64, scale)
    assert load_image(str(output)).shape == (size, size)
    if scale == 2.45:
        assert size == 157


def test_infer_bad_scale(tmp_path, workspace):
    _, _, checkpoint = workspace
    assert main(["infer", "--ckpt", str(checkpoint), "--input", "x.png", "--scale", "0.5",
                 "--output", str(tmp_path / "o.png")]) == 2


def test_corrupt_checkpoint(tmp_path, capsys):
    path = tmp_path / "bad.atsr"
    path.write_bytes(b"JUNK" + bytes(64))
    source = tmp_path / "lr.png"
    save_image(str(source), np.zeros((16, 16)))
    assert main(["infer", "--ckpt", str(path), "--input", str(source), "--scale", "2",
                 "--output", str(tmp_path / "o.png")]) == 5
    assert capsys.readouterr().err.startswith("error[checkpoint]:")


def test_eval(tmp_path, workspace, capsys):
    _, data, checkpoint = workspace
    path = tmp_path / "report.csv"
    assert main(["eval", "--ckpt", str(checkpoint), "--data", str(data), "--scales", "2,4.5",
                 "--csv", str(path), "--plot", str(tmp_path / "plot.png")]) == 0
    rows = list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))
    assert [(r["scale"], r["ood"]) for r in rows] == [("2", "0"), ("2", "0"), ("4.5", "1"), ("4.5", "1")]
    assert os.path.exists(tmp_path / "plot.png")
    assert "4.5*" in capsys.readouterr().out


def test_eval_several_sets(workspace, capsys):
    _, data, checkpoint = workspace
    assert main(["eval", "--ckpt", str(checkpoint), "--data", f"one={data}", f"two={data}",
                 "--scales", "2"]) == 0
    out = capsys.readouterr().out
    assert "set,scale,ood,image,psnr_model,psnr_bicubic" in out


def test_eval_bad_scales(workspace):
    _, data, checkpoint = workspace
    assert main(["eval", "--ckpt", str(checkpoint), "--data", str(data), "--scales", "2,abc"]) == 2


def test_multistep(tmp_path, workspace):
    _, data, checkpoint = workspace
    path = tmp_path / "multi.csv"
    assert main(["multistep", "--ckpt", str(checkpoint), "--data", str(data), "--csv", str(path)]) == 0
    rows = list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))
    assert [r["chain"] for r in rows] == ["->6", "->2->6", "->2->4->6"]


def test_gradcheck_block(capsys):
    assert main(["gradcheck", "--blocks", "sam"]) == 0
    assert "[OK] sam" in capsys.readouterr().out


def test_gradcheck_unknown_block():
    assert main(["gradcheck", "--blocks", "nope"]) == 2
