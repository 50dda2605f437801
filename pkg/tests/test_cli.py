import subprocess
import sys

import numpy as np
import pytest

from rlsrgan.cli import run
from rlsrgan.codec import load_image, read_container, save_image
from rlsrgan.data import photo_like


@pytest.fixture
def image_file(tmp_path):
    path = tmp_path / "in.png"
    save_image(path, photo_like(64)[:50, :45])
    return path


@pytest.fixture
def corpus_dir(tmp_path):
    valid = tmp_path / "corpus" / "valid"
    valid.mkdir(parents=True)
    for i in range(3):
        save_image(valid / f"img{i}.png", photo_like(48, seed=i))
    return tmp_path / "corpus"


def test_compress_decompress(tmp_path, image_file, capsys):
    box = tmp_path / "x.rlsr"
    assert run(["compress", str(image_file), "--factor", "4", "--out", str(box)]) == 0
    c = read_container(box)
    assert (c.orig_width, c.orig_height, c.factor) == (45, 50, 4)
    out = tmp_path / "out.png"
    assert run(["decompress", str(box), "--upsampler", "bicubic", "--out", str(out)]) == 0
    assert load_image(out).shape == (50, 45, 3)
    assert "effective config" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(image_file, capsys):
    assert run(["compress", str(image_file), "--bogus", "--out", "x"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand():
    assert run([]) == 1


def test_model_upsampler_requires_checkpoint(tmp_path, image_file):
    box = tmp_path / "x.rlsr"
    run(["compress", str(image_file), "--out", str(box)])
    assert run(["decompress", str(box), "--upsampler", "model", "--out", str(tmp_path / "o.png")]) == 1


def test_corrupt_container_exit_code(tmp_path):
    bad = tmp_path / "bad.rlsr"
    bad.write_bytes(b"RLSR" + b"\0" * 10)
    assert run(["decompress", str(bad), "--out", str(tmp_path / "o.png")]) == 2


def test_missing_input_exit_code(tmp_path):
    assert run(["compress", str(tmp_path / "nope.png"), "--out", str(tmp_path / "x")]) == 2


def test_eval_csv(corpus_dir, tmp_path, capsys):
    out = tmp_path / "eval.csv"
    assert run(["eval", str(corpus_dir), "--methods", "lanczos,nearest", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "image_id,method,psnr_db,ms_ssim,bytes_original,bytes_compressed"
    assert len(lines) == 1 + 3 * 2
    assert "LANCZOS" in capsys.readouterr().out


def test_eval_byte_stable(corpus_dir, tmp_path):
    outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for out in outs:
        run(["eval", str(corpus_dir), "--out", str(out)])
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_eval_unknown_method(corpus_dir):
    assert run(["eval", str(corpus_dir), "--methods", "lanczos,magic"]) == 1


def test_eval_json(corpus_dir, capsys):
    assert run(["eval", str(corpus_dir), "--methods", "nearest", "--format", "json"]) == 0
    assert '"nearest"' in capsys.readouterr().out


def test_baseline(image_file, capsys):
    assert run(["baseline", str(image_file), "--upsampler", "lanczos"]) == 0
    assert "psnr_db=" in capsys.readouterr().out


def test_train_tiny(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("patch_hr = 16\nbatch = 1\nwidth = 4\nn_blocks = 1\ndisc_width = 2\ncorpus_size = 3\n")
    ckpt, log = tmp_path / "g.ckpt", tmp_path / "log.jsonl"
    code = run(["train", "--config", str(cfg), "--iters", "10", "--out", str(ckpt), "--log", str(log)])
    assert code == 0
    assert ckpt.exists() and len(log.read_text().splitlines()) == 10


def test_train_bad_config_key(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("nonsense = 3\n")
    assert run(["train", "--config", str(cfg)]) == 1


def test_module_entry_point(image_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rlsrgan", "compress", str(image_file), "--out",
                           str(tmp_path / "m.rlsr")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert np.isfinite(read_container(tmp_path / "m.rlsr").payload_len)
