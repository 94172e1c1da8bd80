import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from camoseg.cli import main
from camoseg.train import Checkpoint

TINY = ["--set", "encoder.channels=4,8,8,8,8", "--set", "decoder.width=4",
        "--set", "train.pretrain_epochs=1", "--set", "train.adv_epochs=1",
        "--set", "train.batch_size=4", "--set", "train.max_steps=2"]


def _tree_hashes(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def _manifest(run_dir):
    return json.loads((run_dir / "manifest.json").read_text())


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    rc = main(["synth", "--n", "6", "--size", "32", "--seed", "3",
               "--out", str(root / "data"), "--runs", str(root / "runs")])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def pretrain_ckpt(ws):
    rc = main(["train", "--data", str(ws / "data"), *TINY, "--runs", str(ws / "runs")])
    assert rc == 0
    run = sorted((ws / "runs").glob("train-*"))[-1]
    return run / "checkpoint.pt"


@pytest.fixture(scope="module")
def adv_ckpt(ws, pretrain_ckpt):
    rc = main(["advtrain", "--data", str(ws / "data"), "--init-ckpt", str(pretrain_ckpt),
               *TINY, "--set", "train.max_steps=1", "--runs", str(ws / "runs")])
    assert rc == 0
    run = sorted((ws / "runs").glob("advtrain-*"))[-1]
    return run / "checkpoint.pt"


class TestSynth:
    def test_layout_and_rerun_is_byte_identical(self, ws, tmp_path):
        data = ws / "data"
        assert sorted(p.name for p in (data / "images").iterdir()) \
            == sorted(p.name for p in (data / "masks").iterdir())
        assert len(list((data / "images").iterdir())) == 6
        assert json.loads((data / "manifest.json").read_text())["count"] == 6

        rc = main(["synth", "--n", "6", "--size", "32", "--seed", "3",
                   "--out", str(tmp_path / "again"), "--runs", str(tmp_path / "runs")])
        assert rc == 0
        assert _tree_hashes(tmp_path / "again") == _tree_hashes(data)

    def test_rerun_to_same_out_is_idempotent(self, ws):
        before = _tree_hashes(ws / "data")
        rc = main(["synth", "--n", "6", "--size", "32", "--seed", "3",
                   "--out", str(ws / "data"), "--runs", str(ws / "runs")])
        assert rc == 0
        assert _tree_hashes(ws / "data") == before

    def test_invalid_arguments_exit_one(self, tmp_path, capsys):
        args = ["--out", str(tmp_path / "d"), "--runs", str(tmp_path / "runs")]
        assert main(["synth", "--n", "0", "--size", "32", *args]) == 1
        assert main(["synth", "--n", "2", "--size", "16", *args]) == 1
        assert main(["synth", "--n", "2", "--size", "32", "--contrast", "0.9", *args]) == 1
        assert "error:" in capsys.readouterr().err

    def test_run_dirs_increment(self, tmp_path):
        for expect in ("synth-001", "synth-002"):
            rc = main(["synth", "--n", "1", "--size", "32", "--out",
                       str(tmp_path / expect / "data"), "--runs", str(tmp_path / "runs")])
            assert rc == 0
            assert (tmp_path / "runs" / expect / "manifest.json").is_file()


class TestTrain:
    def test_outputs_and_manifest(self, ws, pretrain_ckpt):
        run = pretrain_ckpt.parent
        assert pretrain_ckpt.is_file()
        log = [json.loads(line) for line in (run / "log.jsonl").read_text().splitlines()]
        assert len(log) == 2 and log[-1]["phase"] == "pretrain"
        m = _manifest(run)
        assert m["command"] == "train"
        assert m["seed"] == 0
        assert m["config_hash"]
        assert str(pretrain_ckpt) in m["outputs"]
        assert not (run / "loss_curve.png").exists()  # no --plots

    def test_checkpoint_loads_with_config(self, pretrain_ckpt):
        ckpt = Checkpoint.load(pretrain_ckpt)
        assert ckpt.model_cfg.width == 4
        assert ckpt.model_cfg.encoder_channels == (4, 8, 8, 8, 8)
        assert ckpt.generator is None

    def test_plots_flag_writes_curve(self, ws, tmp_path):
        rc = main(["train", "--data", str(ws / "data"), *TINY, "--set",
                   "train.max_steps=1", "--plots", "--runs", str(tmp_path / "runs")])
        assert rc == 0
        run = next((tmp_path / "runs").glob("train-*"))
        assert (run / "loss_curve.png").stat().st_size > 0

    def test_config_file_applies(self, ws, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("# tiny run\n"
                       "encoder.channels = 4,8,8,8,8\n"
                       "decoder.width = 4\n"
                       "train.pretrain_epochs = 1\n"
                       "train.batch_size = 4\n"
                       "train.max_steps = 1\n"
                       "train.seed = 5\n")
        rc = main(["train", "--data", str(ws / "data"), "--config", str(cfg),
                   "--runs", str(tmp_path / "runs")])
        assert rc == 0
        run = next((tmp_path / "runs").glob("train-*"))
        assert _manifest(run)["seed"] == 5

    def test_seed_flag_overrides_config(self, ws, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("train.seed = 5\n"
                       "encoder.channels = 4,8,8,8,8\n"
                       "decoder.width = 4\n"
                       "train.pretrain_epochs = 1\n"
                       "train.batch_size = 4\n"
                       "train.max_steps = 1\n")
        rc = main(["train", "--data", str(ws / "data"), "--config", str(cfg),
                   "--seed", "9", "--runs", str(tmp_path / "runs")])
        assert rc == 0
        run = next((tmp_path / "runs").glob("train-*"))
        assert _manifest(run)["seed"] == 9

    def test_bad_config_exits_one(self, ws, tmp_path, capsys):
        runs = ["--runs", str(tmp_path / "runs")]
        data = ["--data", str(ws / "data")]
        assert main(["train", *data, "--set", "bogus.key=1", *runs]) == 1
        assert main(["train", *data, "--set", "train.batch_size=zero", *runs]) == 1
        assert main(["train", *data, "--set", "train.image_size=40", *runs]) == 1
        assert main(["train", *data, "--config", str(tmp_path / "nope.cfg"), *runs]) == 1
        assert main(["train", "--data", str(tmp_path / "missing"), *TINY, *runs]) == 1
        capsys.readouterr()

    def test_missing_required_flag_exits_one(self, capsys):
        assert main(["train"]) == 1
        assert "error:" in capsys.readouterr().err


class TestAdvtrain:
    def test_requires_init_ckpt(self, ws, capsys):
        assert main(["advtrain", "--data", str(ws / "data")]) == 1
        assert "init-ckpt" in capsys.readouterr().err

    def test_outputs(self, adv_ckpt):
        run = adv_ckpt.parent
        ckpt = Checkpoint.load(adv_ckpt)
        assert ckpt.generator is not None
        assert ckpt.phase == "adversarial"
        log = [json.loads(line) for line in (run / "log.jsonl").read_text().splitlines()]
        assert {r["phase"] for r in log} == {"gen", "det"}
        m = _manifest(run)
        assert m["command"] == "advtrain"
        assert m["args"]["init_ckpt"]


class TestEval:
    def test_checkpoint_mode(self, ws, pretrain_ckpt, tmp_path, capsys):
        rc = main(["eval", "--ckpt", str(pretrain_ckpt), "--data", str(ws / "data"),
                   "--runs", str(tmp_path / "runs")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "MAE=" in out and "S=" in out
        run = next((tmp_path / "runs").glob("eval-*"))
        report = json.loads((run / "metrics.json").read_text())
        assert report["count"] == 6
        lines = (run / "metrics.csv").read_text().splitlines()
        assert len(lines) == 1 + 6 + 1
        assert lines[0].startswith("id,") and lines[-1].startswith("mean,")

    def test_prediction_dir_mode_perfect(self, ws, tmp_path, capsys):
        masks = ws / "data" / "masks"
        rc = main(["eval", "--pred-dir", str(masks), "--gt-dir", str(masks),
                   "--runs", str(tmp_path / "runs")])
        assert rc == 0
        run = next((tmp_path / "runs").glob("eval-*"))
        report = json.loads((run / "metrics.json").read_text())
        assert report["mae"] < 1e-9
        assert report["f_measure"] > 0.999
        assert report["e_measure"] > 0.999
        assert report["s_measure"] > 0.999
        capsys.readouterr()

    def test_mode_selection_errors(self, ws, pretrain_ckpt, tmp_path, capsys):
        runs = ["--runs", str(tmp_path / "runs")]
        masks = str(ws / "data" / "masks")
        assert main(["eval", *runs]) == 1
        assert main(["eval", "--ckpt", str(pretrain_ckpt), "--pred-dir", masks, *runs]) == 1
        assert main(["eval", "--ckpt", str(pretrain_ckpt), *runs]) == 1
        assert main(["eval", "--pred-dir", masks, *runs]) == 1
        capsys.readouterr()

    def test_missing_prediction_exits_one(self, ws, tmp_path, capsys):
        pred = tmp_path / "preds"
        pred.mkdir()
        rc = main(["eval", "--pred-dir", str(pred), "--gt-dir",
                   str(ws / "data" / "masks"), "--runs", str(tmp_path / "runs")])
        assert rc == 1
        capsys.readouterr()

    def test_plots_flag(self, ws, tmp_path, capsys):
        masks = str(ws / "data" / "masks")
        rc = main(["eval", "--pred-dir", masks, "--gt-dir", masks, "--plots",
                   "--runs", str(tmp_path / "runs")])
        assert rc == 0
        run = next((tmp_path / "runs").glob("eval-*"))
        assert (run / "metrics.png").stat().st_size > 0
        capsys.readouterr()


class TestCamouflage:
    def test_rejects_checkpoint_without_generator(self, ws, pretrain_ckpt, tmp_path, capsys):
        rc = main(["camouflage", "--ckpt", str(pretrain_ckpt), "--data", str(ws / "data"),
                   "--runs", str(tmp_path / "runs")])
        assert rc == 1
        assert "generator" in capsys.readouterr().err

    def test_writes_images(self, ws, adv_ckpt, tmp_path, capsys):
        out = tmp_path / "camo"
        rc = main(["camouflage", "--ckpt", str(adv_ckpt), "--data", str(ws / "data"),
                   "--out", str(out), "--runs", str(tmp_path / "runs")])
        assert rc == 0
        files = sorted(out.iterdir())
        assert len(files) == 6
        arr = np.asarray(Image.open(files[0]))
        assert arr.shape == (32, 32, 3)
        capsys.readouterr()

    def test_default_out_inside_run_dir(self, ws, adv_ckpt, tmp_path, capsys):
        rc = main(["camouflage", "--ckpt", str(adv_ckpt), "--data", str(ws / "data"),
                   "--runs", str(tmp_path / "runs")])
        assert rc == 0
        run = next((tmp_path / "runs").glob("camouflage-*"))
        assert len(list((run / "images").iterdir())) == 6
        capsys.readouterr()


class TestTopLevel:
    def test_no_arguments_exits_one(self, capsys):
        assert main([]) == 1
        capsys.readouterr()

    def test_unknown_command_exits_one(self, capsys):
        assert main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "camoseg" in capsys.readouterr().out

    def test_missing_checkpoint_exits_one(self, ws, tmp_path, capsys):
        rc = main(["eval", "--ckpt", str(tmp_path / "nope.pt"), "--data",
                   str(ws / "data"), "--runs", str(tmp_path / "runs")])
        assert rc == 1
        capsys.readouterr()
