import json

import numpy as np
import pytest

from kernelsynth.cli import main
from kernelsynth.core import Image, read_ksim, write_ksim
from kernelsynth.evaluation import read_curve_csv
from kernelsynth.phantoms import read_manifest
from kernelsynth.training import read_training_log

from conftest import rel_l2


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


def test_gen_phantom_wire(tmp_path):
    out = tmp_path / "wire.ksim"
    assert run("gen-phantom", "wire", "--n", 256, "--dfov", 10, "--out", out,
               "--png", tmp_path / "wire.png") == 0
    img = read_ksim(out)
    assert img.size == 256 and img.dfov_cm == 10.0
    assert img.pixels.sum() == pytest.approx(1.0)
    assert (tmp_path / "wire.png").exists()
    assert json.loads((tmp_path / "wire.ksim.json").read_text())["kind"] == "wire"


def test_gen_phantom_water_deterministic(tmp_path):
    a, b = tmp_path / "a.ksim", tmp_path / "b.ksim"
    for out in (a, b):
        assert run("--seed", 1, "gen-phantom", "water", "--n", 64, "--sigma", 0, "--out", out) == 0
    assert a.read_bytes() == b.read_bytes()


def test_invalid_dfov_exit_2(tmp_path, capsys):
    assert run("gen-phantom", "wire", "--dfov", 0, "--out", tmp_path / "x.ksim") == 2
    assert "positive" in capsys.readouterr().err


def test_simulate_dataset_round_robin_and_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run("--seed", 5, "--threads", 2, "simulate-dataset", "--count", 8, "--n", 32,
                   "--dfov-list", "5,10,15,20", "--sigma", 0.001, "--out-dir", tmp_path / d) == 0
    rows = read_manifest(tmp_path / "a" / "manifest.json")
    dfovs = [r["dfov_cm"] for r in rows]
    assert sorted(dfovs) == [5, 5, 10, 10, 15, 15, 20, 20]
    assert all(r["input"].dfov_cm == r["dfov_cm"] for r in rows)
    assert (tmp_path / "a" / "manifest.json").read_text() == (tmp_path / "b" / "manifest.json").read_text()
    for name in ("pair_00003_input.ksim", "pair_00007_target.ksim"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.fixture
def dataset(tmp_path):
    assert run("simulate-dataset", "--count", 4, "--n", 32, "--sigma", 0.0,
               "--out-dir", tmp_path / "ds") == 0
    return tmp_path / "ds"


def test_synthesize_direct_matches_target(dataset, tmp_path):
    out = tmp_path / "d.ksim"
    assert run("synthesize", "--input", dataset / "pair_00001_input.ksim", "--method", "direct",
               "--eps", 0, "--out", out) == 0
    assert rel_l2(read_ksim(out), read_ksim(dataset / "pair_00001_target.ksim")) < 1e-6


def test_synthesize_tikhonov_flat_profiles(tmp_path):
    src = tmp_path / "in.ksim"
    y = Image(np.random.default_rng(0).standard_normal((16, 16)), 8.0)
    write_ksim(src, y)
    out = tmp_path / "t.ksim"
    assert run("synthesize", "--input", src, "--method", "tikhonov", "--input-profile", "flat",
               "--target-profile", "flat", "--eps", 0, "--out", out) == 0
    np.testing.assert_allclose(read_ksim(out).pixels, y.pixels / 1.5, atol=1e-6)


def test_train_resume_and_modl_degeneracy(dataset, tmp_path):
    ckpt = tmp_path / "m.ksnn"
    log = tmp_path / "log.csv"
    assert run("train", "--manifest", dataset / "manifest.json", "--epochs", 2, "--unrolls", 2,
               "--learning-rate", 1e-3, "--out", ckpt, "--log", log) == 0
    assert run("train", "--manifest", dataset / "manifest.json", "--epochs", 1, "--unrolls", 2,
               "--resume", ckpt, "--out", tmp_path / "m2.ksnn", "--log", log) == 0
    assert [r["epoch"] for r in read_training_log(log)] == [0, 1, 2]
    src = dataset / "pair_00000_input.ksim"
    a, b = tmp_path / "modl.ksim", tmp_path / "tik.ksim"
    assert run("synthesize", "--input", src, "--method", "modl", "--checkpoint", ckpt,
               "--unrolls", 0, "--out", a) == 0
    assert run("synthesize", "--input", src, "--method", "tikhonov", "--out", b) == 0
    np.testing.assert_array_equal(read_ksim(a).pixels, read_ksim(b).pixels)


def test_train_zero_lr_keeps_init(dataset, tmp_path):
    from kernelsynth.denoiser import init_params, load_checkpoint
    ckpt = tmp_path / "m.ksnn"
    assert run("--seed", 2, "train", "--manifest", dataset / "manifest.json", "--epochs", 1,
               "--unrolls", 1, "--learning-rate", 0, "--out", ckpt) == 0
    ref = init_params(seed=2).flat().astype(np.float32).astype(np.float64)
    np.testing.assert_array_equal(load_checkpoint(ckpt).flat(), ref)


def test_synthesize_modl_needs_checkpoint(dataset, tmp_path):
    assert run("synthesize", "--input", dataset / "pair_00000_input.ksim", "--method", "modl",
               "--out", tmp_path / "x.ksim") == 3


def test_synthesize_dfov_mismatch(dataset, tmp_path):
    assert run("synthesize", "--input", dataset / "pair_00000_input.ksim", "--method", "direct",
               "--dfov", 12, "--out", tmp_path / "x.ksim") == 2


def test_config_sidecar_reproduces_run(dataset, tmp_path):
    out = tmp_path / "s.ksim"
    assert run("synthesize", "--input", dataset / "pair_00002_input.ksim", "--method", "tikhonov",
               "--lambda0", 0.3, "--out", out) == 0
    again = tmp_path / "again.ksim"
    assert run("--config", str(out) + ".json", "synthesize", "--out", again) == 0
    assert out.read_bytes() == again.read_bytes()


def test_estimate_mtf_identity_and_blank(tmp_path):
    wire = tmp_path / "w.ksim"
    run("gen-phantom", "wire", "--n", 64, "--dfov", 10, "--out", wire)
    csv_path = tmp_path / "w.csv"
    assert run("estimate-mtf", "--image", wire, "--out", csv_path) == 0
    assert np.max(np.abs(read_curve_csv(csv_path).values - 1.0)) < 1e-6
    blank = tmp_path / "blank.ksim"
    write_ksim(blank, Image(np.zeros((64, 64)), 10.0))
    assert run("estimate-mtf", "--image", blank, "--out", tmp_path / "b.csv") == 3


def test_estimate_mtf_known_filter(tmp_path, capsys):
    wire = tmp_path / "w.ksim"
    run("gen-phantom", "wire", "--n", 256, "--dfov", 10, "--filter-profile", "smooth", "--out", wire)
    capsys.readouterr()
    assert run("estimate-mtf", "--image", wire, "--reference-profile", "smooth",
               "--out", tmp_path / "w.csv") == 0
    assert json.loads(capsys.readouterr().out)["rmse"] < 0.02


def test_eval_metrics(tmp_path, capsys):
    a, b = tmp_path / "a.ksim", tmp_path / "b.ksim"
    px = np.random.default_rng(1).random((16, 16))
    write_ksim(a, Image(px, 5.0))
    write_ksim(b, Image(px, 5.0))
    capsys.readouterr()
    assert run("eval", "--pred", a, "--target", b) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["mse"] == 0 and m["ssim"] == pytest.approx(1.0)


def test_missing_file_exit_3(tmp_path):
    assert run("eval", "--pred", tmp_path / "nope.ksim", "--target", tmp_path / "nope.ksim") == 3
