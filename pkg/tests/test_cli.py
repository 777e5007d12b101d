import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from rrdbsr.cli import run_command
from rrdbsr.data import read_image, write_image
from rrdbsr.metrics import QualityReport

CONFIG = """
preset = "desk"

[data]
manifest = "train.txt"
scale = 4

[generator]
num_blocks = 1
base_channels = 8
growth_channels = 4

[discriminator]
base_channels = 4
dense_width = 8

[schedule.psnr]
total_iters = 4
hr_patch = 64
batch = 2

[logging]
log_every = 2
"""


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _tree(root):
    """File digests under ``root`` except the timestamped manifest."""
    root = Path(root)
    return {str(p.relative_to(root)): _digest(p) for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    for i in range(2):
        write_image(root / "hr" / f"im{i}.png", rng.random((3, 64, 64)))
    (root / "train.txt").write_text("hr/im0.png\nhr/im1.png\n")
    (root / "run.toml").write_text(CONFIG)
    write_image(root / "lr" / "small.png", rng.random((3, 20, 24)))
    code = run_command(["train", "--config", str(root / "run.toml"), "--stage", "psnr", "--seed", "1",
                        "--deterministic", "--out", str(root / "psnr")])
    assert code == 0
    return root


def test_train_outputs(workspace):
    out = workspace / "psnr"
    for name in ("generator.ckpt", "generator_psnr.ckpt", "state.pt", "train_log.jsonl", "manifest.json"):
        assert (out / name).is_file()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 1 and len(man["config_hash"]) == 64 and len(man["dataset_manifest_hash"]) == 64
    recs = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in recs] == [2, 4]


def test_train_is_idempotent(workspace):
    args = ["train", "--config", str(workspace / "run.toml"), "--stage", "psnr", "--seed", "1", "--deterministic"]
    assert run_command(args + ["--out", str(workspace / "again")]) == 0
    assert _digest(workspace / "again" / "generator_psnr.ckpt") == _digest(workspace / "psnr" / "generator_psnr.ckpt")


def test_resume_matches_uninterrupted(workspace):
    base = ["train", "--config", str(workspace / "run.toml"), "--stage", "psnr", "--seed", "1", "--deterministic"]
    assert run_command(base + ["--out", str(workspace / "half"), "--iters", "2"]) == 0
    assert run_command(base + ["--out", str(workspace / "resumed"), "--resume",
                               str(workspace / "half" / "state.pt")]) == 0
    assert _digest(workspace / "resumed" / "generator_psnr.ckpt") == \
        _digest(workspace / "psnr" / "generator_psnr.ckpt")


def test_sr_writes_scaled_image_and_is_idempotent(workspace):
    ckpt = str(workspace / "psnr" / "generator.ckpt")
    out = workspace / "sr"
    assert run_command(["sr", "--ckpt", ckpt, "--in", str(workspace / "lr" / "small.png"), "--out", str(out)]) == 0
    assert read_image(out / "small.png").shape == (3, 80, 96)
    first = _tree(out)
    assert run_command(["sr", "--ckpt", ckpt, "--in", str(workspace / "lr"), "--out", str(out)]) == 0
    assert _tree(out) == first
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "small.png"]


def test_sr_backprojection(workspace):
    ckpt = str(workspace / "psnr" / "generator.ckpt")
    assert run_command(["sr", "--ckpt", ckpt, "--in", str(workspace / "lr"), "--out", str(workspace / "bp"),
                        "--backproject", "3"]) == 0
    assert read_image(workspace / "bp" / "small.png").shape == (3, 80, 96)


def test_interp_sweep(workspace):
    ckpt = str(workspace / "psnr" / "generator.ckpt")
    out = workspace / "interp"
    assert run_command(["interp", "--psnr", ckpt, "--gan", ckpt, "--alpha", "sweep", "--out", str(out),
                        "--in", str(workspace / "lr")]) == 0
    assert len(list(out.glob("interp_*.ckpt"))) == 6
    assert sorted(p.name for p in out.glob("alpha_*")) == [f"alpha_{a:.1f}" for a in (0, .2, .4, .6, .8, 1)]
    first = _tree(out)
    assert run_command(["interp", "--psnr", ckpt, "--gan", ckpt, "--alpha", "sweep", "--out", str(out),
                        "--in", str(workspace / "lr")]) == 0
    assert _tree(out) == first


def test_interp_bad_alpha(workspace, capsys):
    ckpt = str(workspace / "psnr" / "generator.ckpt")
    assert run_command(["interp", "--psnr", ckpt, "--gan", ckpt, "--alpha", "half", "--out",
                        str(workspace / "x")]) == 2
    assert run_command(["interp", "--psnr", ckpt, "--gan", ckpt, "--alpha", "1.5", "--out",
                        str(workspace / "x")]) == 4


def test_eval_and_report(workspace, tmp_path, capsys):
    rng = np.random.default_rng(3)
    hr = rng.random((3, 128, 128))
    write_image(tmp_path / "hr" / "a.png", hr)
    write_image(tmp_path / "sr" / "a.png", np.clip(hr + rng.normal(0, 0.05, hr.shape), 0, 1))
    (tmp_path / "ma.csv").write_text("image,ma\na.png,6.0\n")
    rep = tmp_path / "out" / "report.csv"
    assert run_command(["eval", "--sr", str(tmp_path / "sr"), "--hr", str(tmp_path / "hr"),
                        "--ma-scores", str(tmp_path / "ma.csv"), "--report", str(rep)]) == 0
    report, stored = QualityReport.read_csv(rep)
    row = report.rows[0]
    assert row.image == "a" and 20 < row.psnr_y < 40
    assert row.perceptual_index == 0.5 * ((10 - 6.0) + row.niqe)
    assert "border_crop=4" in report.convention
    capsys.readouterr()
    assert run_command(["report", "--report", str(rep)]) == 0
    assert json.loads(capsys.readouterr().out)["consistent"] is True


def test_fit_niqe(tmp_path):
    rng = np.random.default_rng(4)
    for i in range(2):
        write_image(tmp_path / "imgs" / f"{i}.png", rng.random((3, 192, 192)))
    assert run_command(["fit-niqe", "--images", str(tmp_path / "imgs"), "--out", str(tmp_path / "m.npz")]) == 0
    assert (tmp_path / "m.npz").is_file()


class TestErrors:
    def _err(self, capsys):
        return json.loads(capsys.readouterr().err.strip().splitlines()[-1])

    def test_missing_config(self, tmp_path, capsys):
        assert run_command(["train", "--config", str(tmp_path / "missing.toml"), "--stage", "psnr"]) == 3
        assert self._err(capsys)["error"] == "config"

    def test_bad_config_field(self, tmp_path, capsys):
        (tmp_path / "c.toml").write_text('[schedule.gan]\nlr0 = "fast"\n')
        assert run_command(["train", "--config", str(tmp_path / "c.toml"), "--stage", "gan"]) == 3
        assert self._err(capsys)["field"] == "schedule.gan.lr0"
        (tmp_path / "d.toml").write_text('[generator]\nwidth = 3\n')
        assert run_command(["train", "--config", str(tmp_path / "d.toml"), "--stage", "psnr"]) == 3
        assert self._err(capsys)["field"] == "generator.width"

    def test_gan_without_weights(self, workspace, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("RRDBSR_WEIGHTS_DIR", str(tmp_path))
        cfg = CONFIG.replace("[logging]", '[schedule.gan]\npretrained = "psnr/generator.ckpt"\nhr_patch = 64\n'
                                          'total_iters = 1\nbatch = 2\n\n[logging]')
        (workspace / "gan.toml").write_text(cfg)
        assert run_command(["train", "--config", str(workspace / "gan.toml"), "--stage", "gan", "--seed", "0",
                            "--out", str(tmp_path / "g")]) == 3
        assert self._err(capsys)["field"] == "losses.vgg_weights"

    def test_unknown_subcommand(self, capsys):
        assert run_command(["upscale"]) == 2

    def test_help(self, capsys):
        for cmd in ("train", "sr", "interp", "eval", "feat-stats", "fit-niqe", "report"):
            assert run_command([cmd, "--help"]) == 0

    def test_missing_input(self, workspace, tmp_path, capsys):
        ckpt = str(workspace / "psnr" / "generator.ckpt")
        assert run_command(["sr", "--ckpt", ckpt, "--in", str(tmp_path / "none.png"), "--out", str(tmp_path)]) == 4
        assert self._err(capsys)["error"] == "invalid-argument"
