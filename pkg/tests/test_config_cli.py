import json

import numpy as np
import pytest
from PIL import Image

from reconlab import cli
from reconlab.config import ConfigError, load_config
from reconlab.datagen import load_dataset
from reconlab.metrics import MetricReport
from reconlab.tensorio import save_tensor
from reconlab.trajectory import Pattern

TINY = {
    "dataset": {"n_train": 2, "n_test": 2},
    "unet": {"base_channels": 4},
    "train": {"epochs": 2},
    "grasp": {"admm_iters": 3},
    "sweeps": {"snr_db": [20, 10], "accel": [12, 13, 14], "crop_shifts": [-4, 0, 4]},
    "seed": 3,
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """A tiny experiment carried through make-dataset, train and recon."""
    out = tmp_path_factory.mktemp("run")
    path = out / "cfg.json"
    path.write_text(json.dumps({**TINY, "output_dir": str(out / "out")}))
    for argv in (["make-dataset", "--patterns", "all"],
                 ["train"],
                 ["recon", "--method", "all", "--png"]):
        assert cli.main(argv + ["--config", str(path)]) == 0
    return out / "out", path


def test_defaults_are_desk_scale():
    cfg = load_config(env={})
    assert (cfg.dataset.matrix, cfg.dataset.crop, cfg.dataset.frames) == (96, 64, 20)
    assert cfg.trajectory.build().acceleration == 13
    assert cfg.patterns() == [Pattern.TGA_ROT]


def test_unknown_key_reports_location(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epoch": 3}}))
    with pytest.raises(ConfigError, match=r"train\.epoch: unknown key"):
        load_config(p, env={})
    with pytest.raises(ConfigError, match="bogus"):
        load_config(overrides=["bogus=1"], env={})


@pytest.mark.parametrize("override, fragment", [
    ("train.epochs=abc", "train.epochs"),
    ("train.epochs=0", "epochs"),
    ("trajectory.pattern=SPIRAL", "SPIRAL"),
    ("unet.mode=4d", "unet.mode"),
    ("dataset.crop=128", "crop"),
    ("sweeps.snr_reference=db", "snr_reference"),
    ("grasp.lam=-1", "lambda"),
])
def test_invalid_values(override, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(overrides=[override], env={})


def test_overrides_and_env_seed():
    cfg = load_config(overrides=["train.epochs=7", "trajectory.pattern=reg_rot",
                                 "dataset.patterns=[\"tga_no_rot\", \"REG_NO_ROT\"]"],
                      env={"RECONLAB_SEED": "11"})
    assert cfg.train.epochs == 7 and cfg.seed == 11
    assert cfg.trajectory.pattern == "REG_ROT"
    assert cfg.patterns() == [Pattern.TGA_NO_ROT, Pattern.REG_NO_ROT]
    with pytest.raises(ConfigError):
        load_config(env={"RECONLAB_SEED": "x"})


def test_semantic_hash():
    base = load_config(env={})
    assert base.semantic_hash() == load_config(overrides=["output_dir=/elsewhere"],
                                               env={}).semantic_hash()
    assert base.semantic_hash() == load_config(overrides=["train.loss=l2"], env={}).semantic_hash()
    for o in ("seed=1", "train.epochs=41", "grasp.lam=0.03", "sweeps.accel=[13]"):
        assert load_config(overrides=[o], env={}).semantic_hash() != base.semantic_hash(), o


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["train", "--set", "train.nope=1"]) == 2
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["train", "--config", str(p)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_artifact_exit_code(tmp_path):
    assert cli.main(["train", "--set", f"output_dir=\"{tmp_path}\""]) == 3
    assert cli.main(["sweep", "--axis", "snr", "--set", f"output_dir=\"{tmp_path}\""]) == 3
    assert cli.main(["export-frames", "--input", str(tmp_path / "none.rct"),
                     "--out", str(tmp_path / "x")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path):
    out = tmp_path / "o"
    sets = ["--set", f"output_dir=\"{out}\"", "--set", "dataset.n_train=1",
            "--set", "dataset.n_test=1", "--set", "unet.base_channels=2"]
    assert cli.main(["make-dataset"] + sets) == 0
    assert cli.main(["train", "--set", "train.lr=1e300", "--set", "train.epochs=3"] + sets) == 4


def test_make_dataset_layout(run_dir):
    out, cfg = run_dir
    for p in Pattern:
        assert len(list((out / "datasets" / p.value / "train").glob("sample_*"))) == 2
        assert len(list((out / "datasets" / p.value / "test").glob("sample_*"))) == 2
    manifest = json.loads((out / "manifests" / "make-dataset.json").read_text())
    effective = load_config(cfg, ['dataset.patterns=["all"]'], env={})
    assert manifest["config_hash"] == effective.semantic_hash()
    assert {"command", "config_hash", "tool_version", "started", "finished", "files"} <= set(manifest)
    assert all(not f.startswith("/") for f in manifest["files"])


def test_patterns_share_truth(run_dir):
    out, _ = run_dir
    sets = {p: load_dataset(out / "datasets" / p.value / "test") for p in Pattern}
    ref = sets[Pattern.TGA_ROT]
    for p in Pattern:
        for a, b in zip(ref, sets[p]):
            assert np.array_equal(a.truth.data, b.truth.data)
    assert not np.array_equal(ref[0].aliased.data, sets[Pattern.REG_NO_ROT][0].aliased.data)


def test_train_outputs(run_dir):
    out, _ = run_dir
    d = out / "models" / "TGA_ROT"
    assert (d / "model.ckpt").is_file()
    lines = (d / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss" and len(lines) == 3


def test_recon_outputs(run_dir):
    out, _ = run_dir
    rep = MetricReport.from_csv((out / "recon" / "TGA_ROT" / "metrics.csv").read_text())
    assert sorted({r.method for r in rep.rows}) == ["grasp", "grid", "unet"]
    assert len(rep.rows) == 6
    assert all(r.wall_time_s >= 0 and 0 <= r.rmse for r in rep.rows)
    assert len(list((out / "recon" / "TGA_ROT" / "unet").glob("sample_*.rct"))) == 2
    assert list(out.rglob("*.png"))


def test_compare_and_sweeps(run_dir, capsys):
    out, cfg = run_dir
    assert cli.main(["compare-patterns", "--config", str(cfg)]) == 3  # other nets not trained
    assert cli.main(["sweep", "--axis", "snr", "--config", str(cfg)]) == 0
    rep = MetricReport.from_csv((out / "reports" / "sweep_snr.csv").read_text())
    assert {r.sweep_value for r in rep.rows} >= {"20.0", "10.0"}
    assert (out / "reports" / "sweep_snr.png").is_file()
    assert "mean SSIM" in capsys.readouterr().out


def test_export_frames(tmp_path):
    cine = np.full((20, 8, 6), 0.5, np.float32)
    save_tensor(tmp_path / "c.rct", cine)
    out = tmp_path / "png"
    assert cli.main(["export-frames", "--input", str(tmp_path / "c.rct"), "--out", str(out)]) == 0
    frames = sorted(out.glob("frame_*.png"))
    assert len(frames) == 20 and (out / "xt.png").is_file()
    img = np.asarray(Image.open(frames[0]))
    assert img.dtype == np.uint8 and len(np.unique(img)) == 1
    xt = np.asarray(Image.open(out / "xt.png"))
    assert xt.shape == (20, 6) and np.all(xt == xt[0])
    save_tensor(tmp_path / "flat.rct", np.zeros((4, 4), np.float32))
    assert cli.main(["export-frames", "--input", str(tmp_path / "flat.rct"), "--out", str(out)]) == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert "recon-lab" in capsys.readouterr().out
