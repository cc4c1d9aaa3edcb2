"""End-to-end command tests, run in process through main(argv)."""

import json
import re

import numpy as np
import pytest

from grformer.attention import WindowSpec
from grformer.cli import main
from grformer.config import ModelConfig, save_config
from grformer.imaging import ImageU8, write_png
from grformer.network import init_parameters, named_tensors
from grformer.precision import set_precision
from grformer.rng import Rng
from grformer.weights_io import load_weights


@pytest.fixture(autouse=True)
def _restore_precision():
    yield
    set_precision("f64")


@pytest.fixture
def tiny_cfg_path(tmp_path):
    cfg = ModelConfig(groups=1, blocks_per_group=2, channels=8, heads=2,
                      window=WindowSpec(4, 4), scale=2, c_hidden_rpb=8)
    path = str(tmp_path / "tiny.cfg")
    save_config(cfg, path)
    return path


def make_png(path, h, w, seed=0):
    img = ImageU8(Rng(seed).integers(256, (h, w, 3)).astype(np.uint8))
    write_png(img, str(path))
    return str(path)


def total_macs_from_table(out: str) -> int:
    for line in out.splitlines():
        if line.startswith("total"):
            return int(line.split()[-1].replace(",", ""))
    raise AssertionError(f"no total row in:\n{out}")


class TestCount:
    def test_defaults_print_pinned_totals(self, capsys):
        assert main(["count"]) == 0
        out = capsys.readouterr().out
        assert "797,748" in out  # scale-4 default parameters
        assert "attention-only per module: 8,085 params" in out
        assert re.search(r"params 60\.\d%, macs (49|50)\.\d%", out)

    def test_scale_flag(self, capsys):
        assert main(["count", "--scale", "2"]) == 0
        assert "778,272" in capsys.readouterr().out

    def test_variant_flag(self, capsys):
        assert main(["count", "--variant", "sa-ungrouped"]) == 0
        assert "attention-only per module: 20,310 params" in capsys.readouterr().out

    def test_quadrupled_resolution_quadruples_macs_at_scale_2(self, capsys):
        # Both resolutions are window-aligned at scale 2; only the flat bias
        # MLP term keeps the ratio from being exactly 4.
        assert main(["count", "--scale", "2", "--resolution", "1280x720"]) == 0
        base = total_macs_from_table(capsys.readouterr().out)
        assert main(["count", "--scale", "2", "--resolution", "2560x1440"]) == 0
        quad = total_macs_from_table(capsys.readouterr().out)
        assert abs(quad - 4 * base) / (4 * base) < 1e-3

    def test_config_file(self, capsys, tiny_cfg_path):
        assert main(["count", tiny_cfg_path]) == 0
        assert "variant=grsa" in capsys.readouterr().out

    def test_bad_resolution_is_usage_error(self, capsys):
        assert main(["count", "--resolution", "1280by720"]) == 2
        assert "usage error" in capsys.readouterr().err

    def test_missing_config_is_io_error(self, capsys, tmp_path):
        assert main(["count", str(tmp_path / "absent.cfg")]) == 3

    def test_malformed_config_is_validation_error(self, capsys, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("channels = sixty\n")
        assert main(["count", str(path)]) == 1
        assert "channels" in capsys.readouterr().err


class TestVerify:
    def test_fast_suites_pass(self, capsys):
        assert main(["verify", "--suite", "rpb-properties"]) == 0
        assert "[pass]" in capsys.readouterr().out
        assert main(["verify", "--suite", "qk-equivalence"]) == 0
        assert "100/100 trials" in capsys.readouterr().out

    def test_severed_residual_fails_with_exit_1(self, capsys):
        assert main(["verify", "--suite", "gradcheck", "--corrupt-grl-residual"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] grl zero-weight identity" in out

    def test_suite_flag_required(self):
        with pytest.raises(SystemExit) as exc:
            main(["verify"])
        assert exc.value.code == 2

    def test_unknown_suite_rejected(self):
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--suite", "everything"])
        assert exc.value.code == 2


@pytest.fixture
def toy_weights(tmp_path, tiny_cfg_path):
    hr = make_png(tmp_path / "hr.png", 24, 24, seed=3)
    out = str(tmp_path / "toy.grfw1")
    code = main(["train-toy", hr, "--config", tiny_cfg_path, "--iters", "0", "-o", out])
    assert code == 0
    return out


class TestSr:
    def test_upscales_and_writes_manifest(self, tmp_path, toy_weights, capsys):
        lr = make_png(tmp_path / "in.png", 12, 10, seed=4)
        out = str(tmp_path / "up.png")
        assert main(["sr", lr, toy_weights, "-o", out]) == 0
        from grformer.imaging import read_png

        img = read_png(out)
        assert (img.height, img.width) == (24, 20)
        manifest = json.load(open(out + ".manifest.json"))
        assert manifest["command"] == "sr"
        assert manifest["outputs"] == [out]
        assert manifest["precision"] == "f64"

    def test_default_output_name_carries_scale(self, tmp_path, toy_weights, capsys):
        lr = make_png(tmp_path / "frame.png", 8, 8, seed=5)
        assert main(["sr", lr, toy_weights]) == 0
        assert (tmp_path / "frame_x2.png").exists()

    def test_repeat_runs_byte_identical(self, tmp_path, toy_weights, capsys):
        lr = make_png(tmp_path / "in.png", 8, 8, seed=6)
        a, b = str(tmp_path / "a.png"), str(tmp_path / "b.png")
        assert main(["sr", lr, toy_weights, "-o", a]) == 0
        assert main(["sr", lr, toy_weights, "-o", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_scale_mismatch(self, tmp_path, toy_weights, capsys):
        lr = make_png(tmp_path / "in.png", 8, 8)
        assert main(["sr", lr, toy_weights, "--scale", "4"]) == 1
        assert "scale" in capsys.readouterr().err

    def test_missing_input_io_error(self, tmp_path, toy_weights):
        assert main(["sr", str(tmp_path / "none.png"), toy_weights]) == 3

    def test_not_a_png_io_error(self, tmp_path, toy_weights, capsys):
        fake = tmp_path / "fake.png"
        fake.write_text("plain text")
        assert main(["sr", str(fake), toy_weights]) == 3

    def test_corrupt_weights_io_error(self, tmp_path, capsys):
        lr = make_png(tmp_path / "in.png", 8, 8)
        bad = tmp_path / "bad.grfw1"
        bad.write_bytes(b"garbage here")
        assert main(["sr", lr, str(bad)]) == 3


class TestTrainToy:
    def test_zero_iters_equals_fresh_init(self, tmp_path, tiny_cfg_path):
        hr = make_png(tmp_path / "hr.png", 16, 16, seed=7)
        out = str(tmp_path / "w.grfw1")
        assert main(["train-toy", hr, "--config", tiny_cfg_path, "--iters", "0",
                     "--seed", "11", "-o", out]) == 0
        loaded, cfg = load_weights(out)
        fresh = init_parameters(cfg, Rng(11).split("init"))
        want = dict(named_tensors(fresh))
        for name, t in named_tensors(loaded):
            assert np.array_equal(t.data, want[name].data), name
        assert open(out + ".loss.csv").read() == ""

    def test_loss_curve_rows(self, tmp_path, tiny_cfg_path, capsys):
        hr = make_png(tmp_path / "hr.png", 16, 16, seed=8)
        out = str(tmp_path / "w.grfw1")
        assert main(["train-toy", hr, "--config", tiny_cfg_path, "--iters", "2", "-o", out]) == 0
        rows = open(out + ".loss.csv").read().strip().split("\n")
        assert len(rows) == 2
        assert rows[0].startswith("0,") and rows[1].startswith("1,")
        float(rows[0].split(",")[1])
        assert "loss" in capsys.readouterr().out

    def test_same_seed_byte_identical_weights(self, tmp_path, tiny_cfg_path, capsys):
        hr = make_png(tmp_path / "hr.png", 16, 16, seed=9)
        a, b = str(tmp_path / "a.grfw1"), str(tmp_path / "b.grfw1")
        args = ["train-toy", hr, "--config", tiny_cfg_path, "--iters", "2", "--seed", "5"]
        assert main(args + ["-o", a]) == 0
        assert main(args + ["-o", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_manifest_written(self, tmp_path, tiny_cfg_path):
        hr = make_png(tmp_path / "hr.png", 16, 16, seed=10)
        out = str(tmp_path / "w.grfw1")
        assert main(["train-toy", hr, "--config", tiny_cfg_path, "--iters", "0",
                     "--seed", "3", "-o", out]) == 0
        manifest = json.load(open(out + ".manifest.json"))
        assert manifest["command"] == "train-toy"
        assert manifest["seed"] == 3
        assert manifest["config_path"] == tiny_cfg_path
        assert manifest["outputs"] == [out, out + ".loss.csv"]


class TestEval:
    def test_identical_images(self, tmp_path, capsys):
        img = make_png(tmp_path / "a.png", 16, 16, seed=12)
        assert main(["eval", img, img]) == 0
        out = capsys.readouterr().out
        assert "psnr: inf" in out
        assert "ssim: 1.0000" in out

    def test_different_images_finite(self, tmp_path, capsys):
        a = make_png(tmp_path / "a.png", 16, 16, seed=13)
        b = make_png(tmp_path / "b.png", 16, 16, seed=14)
        assert main(["eval", a, b, "--crop", "2"]) == 0
        out = capsys.readouterr().out
        score = float(out.split("psnr: ")[1].split("\n")[0])
        assert 0.0 < score < 30.0

    def test_size_mismatch_is_validation_error(self, tmp_path, capsys):
        a = make_png(tmp_path / "a.png", 16, 16)
        b = make_png(tmp_path / "b.png", 16, 18)
        assert main(["eval", a, b]) == 1


class TestRpbCurve:
    def test_default_config_exports_63_offsets(self, tmp_path, capsys):
        out = str(tmp_path / "c.csv")
        assert main(["rpb-curve", "-o", out]) == 0
        rows = open(out).read().strip().split("\n")
        assert len(rows) == 3  # one per head
        assert all(len(r.split(",")) == 63 for r in rows)
        assert "3 heads x 63 offsets" in capsys.readouterr().out

    def test_tiny_config_shapes(self, tmp_path, tiny_cfg_path, capsys):
        out = str(tmp_path / "c.csv")
        assert main(["rpb-curve", "--config", tiny_cfg_path, "-o", out]) == 0
        rows = open(out).read().strip().split("\n")
        assert len(rows) == 2
        assert all(len(r.split(",")) == 7 for r in rows)

    def test_weights_source(self, tmp_path, toy_weights, capsys):
        out = str(tmp_path / "c.csv")
        assert main(["rpb-curve", toy_weights, "-o", out]) == 0
        assert len(open(out).read().strip().split("\n")) == 2

    def test_block_out_of_range(self, tmp_path, tiny_cfg_path, capsys):
        out = str(tmp_path / "c.csv")
        assert main(["rpb-curve", "--config", tiny_cfg_path, "--block", "7", "-o", out]) == 1
        assert "no block" in capsys.readouterr().err

    def test_row_out_of_range(self, tmp_path, tiny_cfg_path, capsys):
        out = str(tmp_path / "c.csv")
        assert main(["rpb-curve", "--config", tiny_cfg_path, "--row", "99", "-o", out]) == 1


class TestPrecision:
    def test_env_var_selects_f32(self, tmp_path, tiny_cfg_path, monkeypatch):
        monkeypatch.setenv("GRF_PRECISION", "f32")
        hr = make_png(tmp_path / "hr.png", 16, 16, seed=15)
        out = str(tmp_path / "w.grfw1")
        assert main(["train-toy", hr, "--config", tiny_cfg_path, "--iters", "0", "-o", out]) == 0
        set_precision("f64")  # loading must respect the stored dtype, not the mode
        loaded, _ = load_weights(out)
        assert loaded.conv_shallow.w.data.dtype == np.float32
        manifest = json.load(open(out + ".manifest.json"))
        assert manifest["precision"] == "f32"

    def test_flag_beats_env(self, tmp_path, tiny_cfg_path, monkeypatch):
        monkeypatch.setenv("GRF_PRECISION", "f32")
        hr = make_png(tmp_path / "hr.png", 16, 16, seed=16)
        out = str(tmp_path / "w.grfw1")
        assert main(["train-toy", hr, "--config", tiny_cfg_path, "--iters", "0",
                     "--precision", "f64", "-o", out]) == 0
        loaded, _ = load_weights(out)
        assert loaded.conv_shallow.w.data.dtype == np.float64

    def test_invalid_env_value_is_usage_error(self, monkeypatch, capsys):
        monkeypatch.setenv("GRF_PRECISION", "f16")
        assert main(["count"]) == 2
        assert "precision" in capsys.readouterr().err


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
