import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image as PILImage

from o2sr.cli import main
from o2sr.imaging import Image, load_image, save_image
from o2sr.synthetic import write_phantoms
from o2sr.training import read_loss_log


@pytest.fixture(scope="module")
def phantoms(tmp_path_factory):
    root = tmp_path_factory.mktemp("ph")
    write_phantoms(root, 3, size=48)
    return root


@pytest.fixture(scope="module")
def dataset(phantoms, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main([ "make-dataset", str(phantoms), "--out", str(out), "--preset", "mini", "--scale", "4"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text("train.batch_size = 4\ntrain.hr_patch = 32\n")
    rc = main(["train", "--data", str(dataset), "--out", str(out), "--preset", "tiny", "--scale", "4",
               "--max-steps", "12", "--config", str(cfg)])
    assert rc == 0
    return out


class TestMakeDataset:
    def test_layout_and_manifest(self, dataset):
        assert sorted(p.name for p in (dataset / "lr_x4").iterdir()) == [
            "phantom_0000.png", "phantom_0001.png", "phantom_0002.png"]
        assert load_image(dataset / "lr_x4" / "phantom_0000.png").shape == (12, 12)
        man = json.loads((dataset / "manifest.json").read_text())
        assert man["degradation"]["scale"] == 4
        assert man["degradation"]["kernels"][0]["sigma"] == 1.2
        assert man["failures"] == []

    def test_replay_identical_bytes(self, phantoms, dataset, tmp_path):
        rc = main(["make-dataset", str(phantoms), "--out", str(tmp_path), "--config",
                   str(dataset / "degrade.cfg")])
        assert rc == 0
        for p in (dataset / "lr_x4").iterdir():
            assert (tmp_path / "lr_x4" / p.name).read_bytes() == p.read_bytes()

    def test_identity_pipeline(self, phantoms, tmp_path):
        cfg = tmp_path / "id.cfg"
        cfg.write_text("degrade.kernel = delta\ndegrade.scale = 1\ndegrade.noise_sigma = 0\n")
        assert main(["make-dataset", str(phantoms), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 0
        for p in (tmp_path / "o" / "hr").iterdir():
            assert (tmp_path / "o" / "lr_x1" / p.name).read_bytes() == p.read_bytes()

    def test_indivisible_image_listed(self, tmp_path, capsys):
        src = tmp_path / "src"
        src.mkdir()
        save_image(Image(np.zeros((25, 25))), src / "odd.png")
        save_image(Image(np.zeros((24, 24))), src / "ok.png")
        rc = main(["make-dataset", str(src), "--out", str(tmp_path / "o"), "--preset", "mini"])
        assert rc == 3
        assert "odd.png" in capsys.readouterr().err
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert [f["file"] for f in man["failures"]] == ["odd.png"]
        assert man["images"] == ["ok"]

    def test_config_error(self, phantoms, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("degrade.kernel = boxcar\n")
        assert main(["make-dataset", str(phantoms), "--out", str(tmp_path), "--config", str(cfg)]) == 2

    def test_missing_input(self, tmp_path):
        assert main(["make-dataset", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 3


class TestTrain:
    def test_outputs(self, trained, capsys):
        rows = read_loss_log(trained / "loss.log")
        assert [r[0] for r in rows] == list(range(1, 13))
        assert rows[-1][1] < rows[0][1]
        assert (trained / "latest.o2ck").exists()
        assert json.loads((trained / "manifest.json").read_text())["train"]["batch_size"] == 4

    def test_max_steps_zero(self, dataset, tmp_path, capsys):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--preset", "tiny",
                     "--max-steps", "0"]) == 0
        assert sorted(p.name for p in tmp_path.glob("*.o2ck")) == ["ckpt_0000000.o2ck", "latest.o2ck"]
        out = capsys.readouterr().out
        assert "final loss" in out and "elapsed" in out

    def test_misspelled_key(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("model.chnnels = 8\n")
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--config", str(cfg)]) == 2
        assert "model.chnnels" in capsys.readouterr().err

    def test_resume_incompatible(self, dataset, trained, tmp_path, capsys):
        import shutil

        run = tmp_path / "r"
        shutil.copytree(trained, run)
        cfg = tmp_path / "c.cfg"
        cfg.write_text("model.channels = 8\ntrain.batch_size = 4\ntrain.hr_patch = 32\n")
        rc = main(["train", "--data", str(dataset), "--out", str(run), "--preset", "tiny",
                   "--config", str(cfg), "--max-steps", "14"])
        assert rc == 5
        assert "model.channels" in capsys.readouterr().err

    def test_divergence_exit(self, dataset, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("train.learning_rate = 1e30\ntrain.batch_size = 2\ntrain.hr_patch = 32\n")
        rc = main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), "--preset", "tiny",
                   "--config", str(cfg), "--max-steps", "5"])
        assert rc == 4


class TestInfer:
    def test_single_and_directory(self, dataset, trained, tmp_path):
        ck = str(trained / "latest.o2ck")
        assert main(["infer", str(dataset / "lr_x4" / "phantom_0000.png"), "--checkpoint", ck,
                     "--out", str(tmp_path / "one")]) == 0
        assert load_image(tmp_path / "one" / "phantom_0000.png").shape == (48, 48)
        assert main(["infer", str(dataset / "lr_x4"), "--checkpoint", ck, "--out", str(tmp_path / "all")]) == 0
        assert sorted(p.stem for p in (tmp_path / "all").glob("*.png")) == [
            "phantom_0000", "phantom_0001", "phantom_0002"]

    def test_24_to_96(self, trained, tmp_path):
        save_image(Image(np.random.default_rng(0).random((24, 24))), tmp_path / "x.png")
        assert main(["infer", str(tmp_path / "x.png"), "--checkpoint", str(trained / "latest.o2ck"),
                     "--out", str(tmp_path / "o")]) == 0
        assert load_image(tmp_path / "o" / "x.png").shape == (96, 96)

    def test_rgb_named(self, trained, tmp_path, capsys):
        PILImage.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "colour.png")
        rc = main(["infer", str(tmp_path / "colour.png"), "--checkpoint", str(trained / "latest.o2ck"),
                   "--out", str(tmp_path / "o")])
        assert rc != 0
        assert "colour.png" in capsys.readouterr().err

    def test_scale_mismatch(self, dataset, trained, tmp_path):
        assert main(["infer", str(dataset / "lr_x4"), "--checkpoint", str(trained / "latest.o2ck"),
                     "--scale", "2", "--out", str(tmp_path)]) == 2

    def test_corrupt_checkpoint(self, dataset, tmp_path):
        (tmp_path / "bad.o2ck").write_bytes(b"garbage")
        assert main(["infer", str(dataset / "lr_x4"), "--checkpoint", str(tmp_path / "bad.o2ck"),
                     "--out", str(tmp_path)]) == 3


class TestEval:
    def test_identity(self, dataset, tmp_path, capsys):
        hr = str(dataset / "hr")
        assert main(["eval", "--sr", hr, "--hr", hr, "--scale", "4", "--out", str(tmp_path / "m.csv")]) == 0
        out = capsys.readouterr().out
        assert "AGGREGATE" in out and "ssim=1.0" in out

    def test_bicubic_baseline(self, dataset, tmp_path, capsys):
        from o2sr.imaging import bicubic_resample

        (tmp_path / "bic").mkdir()
        for p in (dataset / "lr_x4").iterdir():
            save_image(bicubic_resample(load_image(p), 4), tmp_path / "bic" / p.name)
        rc = main(["eval", "--sr", str(tmp_path / "bic"), "--hr", str(dataset / "hr"), "--scale", "4",
                   "--out", str(tmp_path / "m.csv")])
        assert rc == 0
        text = (tmp_path / "m.csv").read_text().splitlines()
        assert text[0] == "image_id,psnr_db,ssim" and text[-1].startswith("AGGREGATE,")
        assert (tmp_path / "m.manifest.json").exists()

    def test_empty_dirs(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        assert main(["eval", "--sr", str(tmp_path / "a"), "--hr", str(tmp_path / "b"),
                     "--out", str(tmp_path / "m.csv")]) == 3


class TestVizGrad:
    def test_two_inputs(self, dataset, tmp_path):
        imgs = sorted((dataset / "hr").glob("*.png"))[:2]
        assert main(["viz-grad", *map(str, imgs), "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*_gradmag.png"))) == 2
        assert len(list(tmp_path.glob("*_orient.png"))) == 2

    def test_constant(self, tmp_path):
        save_image(Image(np.full((16, 16), 0.5)), tmp_path / "flat.png")
        assert main(["viz-grad", str(tmp_path / "flat.png"), "--out", str(tmp_path / "o")]) == 0
        assert np.all(load_image(tmp_path / "o" / "flat_gradmag.png").pixels == 0)

    def test_missing_file(self, tmp_path):
        assert main(["viz-grad", str(tmp_path / "none.png"), "--out", str(tmp_path)]) == 3


class TestSurface:
    @pytest.mark.parametrize("cmd,flag", [("make-dataset", "--preset"), ("train", "--max-steps"),
                                          ("infer", "--checkpoint"), ("eval", "--border-crop"),
                                          ("viz-grad", "--cell")])
    def test_help_lists_flags(self, cmd, flag, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        assert flag in capsys.readouterr().out

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--sr", "a", "--hr", "b", "--out", "c", "--bogus"])
        assert exc.value.code == 2

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "o2sr", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.startswith("o2sr ")
