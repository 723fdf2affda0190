import csv

import numpy as np
import pytest

from daftgan.cli import main
from daftgan.config import serialize_config
from daftgan.harness.imageio import read_pgm, read_ppm, write_pgm, write_ppm
from daftgan.harness.scenes import export_dataset, render_scene


def test_mask_demo_center(tmp_path, capsys):
    assert main(["mask-demo", "--kind", "center", "--ratio", "0.25", "--size", "32", "--out", str(tmp_path / "a.pgm")]) == 0
    assert capsys.readouterr().out.strip() == "fraction 0.250000 square 16x16 at row 8 col 8"
    m = read_pgm(tmp_path / "a.pgm")
    assert m.sum() == 256 and m[8:24, 8:24].all()


def test_mask_demo_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["mask-demo", "--seed", "5", "--out", str(tmp_path / f"{name}.pgm")]) == 0
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


def test_mask_demo_sweep(capsys):
    assert main(["mask-demo", "--sweep", "200", "--size", "16"]) == 0
    line = capsys.readouterr().out.splitlines()[0]
    lo, hi = float(line.split("min ")[1].split()[0]), float(line.split("max ")[1].split()[0])
    assert 0.10 <= lo and hi <= 0.70


def test_unreachable_bounds_exit_runtime(capsys):
    assert main(["mask-demo", "--lo", "0.501953125", "--hi", "0.501953125", "--size", "16"]) == 1
    assert "rounds" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["grad-check", "--scope", "bogus"],
    ["mask-demo", "--kind", "center", "--ratio", "1.5"],
    ["train", "--config", "/nonexistent/run.cfg"],
    ["infer", "--checkpoint", "/nonexistent.ckpt", "--image", "x", "--mask", "y", "--caption", "c", "--out", "z"],
    ["frobnicate"],
])
def test_usage_errors_exit_two(argv):
    assert main(argv) == 2


def test_bad_config_exits_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[model]\nimage_size = 48\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "model.image_size" in capsys.readouterr().err


def test_grad_check_tensor_core(capsys):
    assert main(["grad-check", "--scope", "tensor-core", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].endswith("passed")


def test_train_cli_with_dataset_cache(tiny_cfg, tmp_path, capsys):
    data = tmp_path / "data"
    export_dataset(range(1, 9), 16, data)
    (tmp_path / "run.cfg").write_text(serialize_config(tiny_cfg.with_overrides(steps=2)))
    out = tmp_path / "out"
    assert main(["train", "--config", str(tmp_path / "run.cfg"), "--data", str(data), "--out", str(out)]) == 0
    assert "step 2" in capsys.readouterr().out
    assert (out / "final.ckpt").is_file()
    assert len(list(csv.reader(open(out / "train_log.csv")))) == 3


def _write_inputs(tmp_path, mask):
    scene = render_scene(3, 16)
    write_ppm(tmp_path / "img.ppm", scene.image)
    write_pgm(tmp_path / "mask.pgm", mask)
    return scene


def test_infer_triptych(tiny_run, tmp_path):
    _, run = tiny_run
    mask = np.zeros((16, 16))
    mask[4:12, 4:12] = 1
    _write_inputs(tmp_path, mask)
    args = ["infer", "--checkpoint", str(run / "final.ckpt"), "--image", str(tmp_path / "img.ppm"),
            "--mask", str(tmp_path / "mask.pgm"), "--caption", "large red circle center"]
    assert main(args + ["--out", str(tmp_path / "a.ppm")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.ppm")]) == 0
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    tri = read_ppm(tmp_path / "a.ppm")
    src = read_ppm(tmp_path / "img.ppm")
    assert tri.shape == (3, 16, 48)
    left, mid, right = tri[:, :, :16], tri[:, :, 16:32], tri[:, :, 32:]
    assert np.array_equal(right, src)
    outside = mask == 0
    assert np.array_equal(mid[:, outside], src[:, outside])
    assert np.all(np.abs(left[:, mask == 1]) <= 1 / 255)  # zero lands on byte 128


def test_infer_all_valid_mask_reproduces_input(tiny_run, tmp_path):
    _, run = tiny_run
    _write_inputs(tmp_path, np.zeros((16, 16)))
    assert main(["infer", "--checkpoint", str(run / "final.ckpt"), "--image", str(tmp_path / "img.ppm"),
                 "--mask", str(tmp_path / "mask.pgm"), "--caption", "small blue square left",
                 "--out", str(tmp_path / "t.ppm")]) == 0
    tri = read_ppm(tmp_path / "t.ppm")
    assert np.array_equal(tri[:, :, 16:32], tri[:, :, 32:])


def test_infer_size_mismatch(tiny_run, tmp_path, capsys):
    _, run = tiny_run
    write_ppm(tmp_path / "img.ppm", render_scene(3, 32).image)
    write_pgm(tmp_path / "mask.pgm", np.zeros((16, 16)))
    assert main(["infer", "--checkpoint", str(run / "final.ckpt"), "--image", str(tmp_path / "img.ppm"),
                 "--mask", str(tmp_path / "mask.pgm"), "--caption", "x", "--out", str(tmp_path / "o.ppm")]) == 2
    assert "expects 16x16" in capsys.readouterr().err


def test_eval_outputs_table_and_csv(tiny_run, tmp_path, capsys):
    _, run = tiny_run
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--scenes", "4", "--out", str(tmp_path / "m.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["row", "psnr", "ssim"]
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert float(rows[1][1]) == pytest.approx(float(lines[1].split()[1]), abs=5e-5)
    assert rows[1][3] == "4"


def test_eval_empty_masks_hit_cap(tiny_run, capsys):
    _, run = tiny_run
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--scenes", "2",
                 "--kind", "irregular", "--lo", "0", "--hi", "0"]) == 0
    composited = capsys.readouterr().out.splitlines()[1].split()
    assert composited[1:] == ["100.0000", "1.0000"]
