import csv
import os
from pathlib import Path

import pytest

from rrvq.cli import COMMANDS, main
from rrvq.config import LayerSpec, ModelConfig
from rrvq.data import gen_swatches, read_ppm, write_ppm
from rrvq.model import HierarchicalVAE
from rrvq.training import save_checkpoint

GOLDEN = Path(__file__).parent / "golden"


def help_text(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv + ["--help"])
    assert exc.value.code == 0
    return capsys.readouterr().out


@pytest.mark.parametrize("command", [None] + sorted(COMMANDS))
def test_help_matches_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    argv = [] if command is None else [command]
    text = help_text(capsys, argv)
    path = GOLDEN / f"help_{command or 'main'}.txt"
    if os.environ.get("RRVQ_REGEN_GOLDEN"):
        path.parent.mkdir(exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()
    if command:
        assert "--seed" in text


@pytest.fixture
def model_path(tmp_path):
    cfg = ModelConfig(layers=(LayerSpec(4, 16), LayerSpec(2, 8)), image_side=8, d_e=4, channels=8)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, HierarchicalVAE(cfg, rng=0))
    return path


def test_usage_errors_exit_one(capsys, tmp_path):
    assert main(["entropy", "--bogus", "--out", str(tmp_path / "x")]) == 1
    assert main(["compress"]) == 1
    assert main([]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("d_e = many\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith(("usage error", "config error")) for line in err)


def test_runtime_errors_exit_two(capsys, tmp_path):
    assert main(["sample", "--model", str(tmp_path / "missing.ckpt"), "--out", str(tmp_path / "s.ppm")]) == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--model", str(junk)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 2 and all(line.startswith("error:") for line in err)


def test_entropy_csv(tmp_path, capsys):
    out = tmp_path / "curve.csv"
    assert main(["entropy", "--K", "256", "--delta", "1", "--d-min", "10", "--d-max", "30", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 21
    assert {"rvq_exact_nats", "rvq_approx_nats", "softmax_exact_nats", "softmax_approx_nats"} <= set(rows[0])
    assert float(rows[0]["rvq_exact_nats"]) == pytest.approx(0.080212000824189893419, rel=1e-11)
    printed = capsys.readouterr().out
    assert "# resolved configuration" in printed and "arg.K = 256" in printed


def test_compress_decompress_pipeline(model_path, tmp_path):
    img = tmp_path / "img.ppm"
    write_ppm(img, gen_swatches(1, 8, 3)[0])
    bits = tmp_path / "img.rrvb"
    back = tmp_path / "back.ppm"
    assert main(["compress", "--model", str(model_path), "--in", str(img), "--out", str(bits)]) == 0
    assert main(["decompress", "--model", str(model_path), "--in", str(bits), "--out", str(back)]) == 0
    assert read_ppm(back).shape == (3, 8, 8)
    assert bits.read_bytes()[:4] == b"RRVB"


def run_twice(tmp_path, make_argv, names):
    outs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        assert main(make_argv(d)) == 0
        outs.append([(d / n).read_bytes() for n in names])
    assert outs[0] == outs[1]


def test_reruns_are_byte_identical(model_path, tmp_path):
    img = tmp_path / "img.ppm"
    write_ppm(img, gen_swatches(1, 8, 1)[0])
    cases = [
        (lambda d: ["gen-data", "--n", "5", "--out", str(d), "--grid", str(d / "grid.ppm"), "--seed", "4"],
         ["swatch_0.ppm", "grid.ppm"]),
        (lambda d: ["mc-entropy", "--K", "8", "--d-e", "4", "--trials", "100", "--out", str(d / "mc.csv")],
         ["mc.csv"]),
        (lambda d: ["sample", "--model", str(model_path), "--n", "4", "--out", str(d / "s.ppm"), "--seed", "3"],
         ["s.ppm"]),
        (lambda d: ["layerwise", "--model", str(model_path), "--in", str(img), "--layer", "2", "--n", "3",
                    "--out", str(d / "l.ppm")], ["l.ppm"]),
        (lambda d: ["reconstruct", "--model", str(model_path), "--in", str(img), "--out", str(d / "r.ppm")],
         ["r.ppm"]),
        (lambda d: ["compress", "--model", str(model_path), "--in", str(img), "--out", str(d / "c.rrvb")],
         ["c.rrvb"]),
        (lambda d: ["eval", "--model", str(model_path), "--n", "16", "--out", str(d / "e.csv")], ["e.csv"]),
    ]
    for i, (argv, names) in enumerate(cases):
        sub = tmp_path / str(i)
        sub.mkdir()
        run_twice(sub, argv, names)


def test_train_command(tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("image_side = 4\nd_e = 3\nchannels = 4\nlayer.1.grid_side = 2\nlayer.1.K = 4\n"
                   "max_epochs = 2\nbatch_size = 16\n")
    argv = lambda d: ["train", "--config", str(cfg), "--data", "swatches", "--n-train", "32", "--n-eval", "8",
                      "--out", str(d)]
    run_twice(tmp_path, argv, ["log.csv", "model.ckpt"])
    lines = (tmp_path / "a" / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,elbo_nats,bpd,lr,tau" and len(lines) == 5


def test_grad_check_command(capsys):
    assert main(["grad-check", "--batch", "1", "--max-entries", "3"]) == 0
    assert "PASS" in capsys.readouterr().out
