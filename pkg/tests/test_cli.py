import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from dsfn.cli import main


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def synth_args(out, seqs=1, frames=43, size="48x48", seed=5, scale=2):
    return ["synth", "toy", "--out", str(out), "--seqs", str(seqs),
            "--frames", str(frames), "--size", size, "--seed", str(seed),
            "--scale", str(scale), "--shapes", "2"]


TINY_CFG = """
model.scale = 2
model.enc_widths = 4,8
model.jdsr_width = 8
model.jdsr_depth = 1
model.tfbfi_width = 8
model.tfbfi_depth = 1
model.dec_width = 4
train.steps = 3
train.lr = 0.001
train.checkpoint_every = 2
data.crop = 32
data.jitter = 0.0
data.noise_sigma = 0.0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(synth_args(data)) == 0
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    run = root / "run"
    assert main(["train", "--data", str(data), "--config", str(cfg),
                 "--out", str(run)]) == 0
    return {"root": root, "data": data, "cfg": cfg, "run": run,
            "ckpt": run / "ckpt_final.bin"}


class TestSynth:
    def test_tree_layout_and_counts(self, workspace):
        data = workspace["data"]
        for kind in ("sharp", "blurry_lr", "gt_hr"):
            assert (data / kind / "seq000" / "manifest.json").is_file()
        blurry = json.loads((data / "blurry_lr" / "seq000" / "manifest.json").read_text())
        assert blurry["frame_count"] == 5  # floor((43-11)/8)+1
        gt = json.loads((data / "gt_hr" / "seq000" / "manifest.json").read_text())
        assert gt["frame_count"] == 9

    def test_repeat_synth_is_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(synth_args(a)) == 0
        assert main(synth_args(b)) == 0
        assert tree_digest(a) == tree_digest(b)

    def test_nonempty_out_requires_force(self, workspace):
        assert main(synth_args(workspace["data"])) == 2
        assert main(synth_args(workspace["data"]) + ["--force"]) == 0

    def test_degrade_mode(self, workspace, tmp_path):
        out = tmp_path / "degraded"
        assert main(["synth", "degrade", "--in", str(workspace["data"]),
                     "--out", str(out), "--scale", "2"]) == 0
        assert (out / "blurry_lr" / "seq000" / "manifest.json").is_file()


class TestTrain:
    def test_outputs_present(self, workspace):
        run = workspace["run"]
        assert (run / "ckpt_final.bin").is_file()
        assert (run / "ckpt_step_000002.bin").is_file()
        assert (run / "config.txt").is_file()
        lines = (run / "loss.csv").read_text().strip().splitlines()
        assert len(lines) == 4  # header + 3 steps

    def test_resolved_config_is_reloadable(self, workspace):
        from dsfn.config import RunConfig

        cfg = RunConfig.from_file(workspace["run"] / "config.txt")
        assert cfg["model.enc_widths"] == (4, 8)
        assert cfg["train.steps"] == 3

    def test_resume_continues_step_numbering(self, workspace, tmp_path):
        out = tmp_path / "resumed"
        assert main(["train", "--data", str(workspace["data"]),
                     "--config", str(workspace["cfg"]), "--out", str(out),
                     "--resume", str(workspace["ckpt"]), "--steps", "5"]) == 0
        rows = (out / "loss.csv").read_text().strip().splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == ["4", "5"]

    def test_missing_data_is_usage_error(self):
        assert main(["train", "--out", "/tmp/x"]) == 1

    def test_unknown_config_key_errors(self, workspace, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.warp_speed = 9\n")
        code = main(["train", "--data", str(workspace["data"]),
                     "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 1


class TestInfer:
    def test_output_count_and_resolution(self, workspace, tmp_path):
        out = tmp_path / "enhanced"
        src = workspace["data"] / "blurry_lr" / "seq000"
        assert main(["infer", "--ckpt", str(workspace["ckpt"]),
                     "--in", str(src), "--out", str(out)]) == 0
        frames = sorted(out.glob("*.png"))
        assert len(frames) == 7  # 2*5 - 3
        from dsfn.data import read_png

        img = read_png(frames[0])
        assert img.shape == (3, 48, 48)  # 2x the 24x24 inputs

    def test_emit_level1(self, workspace, tmp_path):
        out = tmp_path / "enhanced_l1"
        src = workspace["data"] / "blurry_lr" / "seq000"
        assert main(["infer", "--ckpt", str(workspace["ckpt"]), "--in", str(src),
                     "--out", str(out), "--emit-level1"]) == 0
        assert len(list((out / "level1").glob("*.png"))) == 7

    def test_too_few_frames_is_data_error(self, workspace, tmp_path):
        src = tmp_path / "short"
        src.mkdir()
        from dsfn.data import write_png

        for i in range(3):
            write_png(src / f"{i:06d}.png", np.full((3, 24, 24), 0.5, np.float32))
        assert main(["infer", "--ckpt", str(workspace["ckpt"]),
                     "--in", str(src), "--out", str(tmp_path / "o")]) == 2


class TestEval:
    def test_identical_dirs_hit_caps(self, workspace, tmp_path):
        gt_dir = workspace["data"] / "gt_hr" / "seq000"
        report_path = tmp_path / "report.json"
        assert main(["eval", "--pred", str(gt_dir), "--gt", str(gt_dir),
                     "--scale", "2", "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["aggregates"]["combined"]["psnr"] == 99.0
        assert report["aggregates"]["combined"]["ssim"] == 1.0

    def test_schema_and_recomputed_aggregates(self, workspace, tmp_path):
        out = tmp_path / "pred"
        src = workspace["data"] / "blurry_lr" / "seq000"
        main(["infer", "--ckpt", str(workspace["ckpt"]), "--in", str(src),
              "--out", str(out)])
        report_path = tmp_path / "report.json"
        assert main(["eval", "--pred", str(out), "--gt",
                     str(workspace["data"] / "gt_hr" / "seq000"),
                     "--scale", "2", "--input-scale-deblur",
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        frames = report["frames"]
        assert {f["kind"] for f in frames} == {"key", "intermediate"}
        combined = np.mean([f["psnr"] for f in frames])
        assert abs(report["aggregates"]["combined"]["psnr"] - combined) < 1e-9
        assert "input_scale" in report
        assert len(report["input_scale"]["frames"]) == len(frames)

    def test_missing_gt_indices_listed(self, workspace, tmp_path):
        pred = tmp_path / "pred"
        pred.mkdir()
        from dsfn.data import write_png

        write_png(pred / "000099.png", np.full((3, 8, 8), 0.5, np.float32))
        code = main(["eval", "--pred", str(pred),
                     "--gt", str(workspace["data"] / "gt_hr" / "seq000")])
        assert code == 2


class TestViz:
    def test_two_pngs_and_csv_per_window(self, workspace, tmp_path):
        out = tmp_path / "viz"
        src = workspace["data"] / "blurry_lr" / "seq000"
        assert main(["viz-offsets", "--ckpt", str(workspace["ckpt"]),
                     "--in", str(src), "--out", str(out)]) == 0
        # 5 blurry frames -> window starts 0 and 1
        assert sorted(p.name for p in out.glob("*.png")) == [
            "window_0000_next.png", "window_0000_prev.png",
            "window_0001_next.png", "window_0001_prev.png",
        ]
        csvs = sorted(out.glob("*.csv"))
        assert [c.name for c in csvs] == ["window_0000_hist.csv", "window_0001_hist.csv"]
        header = csvs[0].read_text().splitlines()[0]
        assert header == "bin_lo,bin_hi,count"

    def test_untrained_zero_projection_gives_neutral_maps(self, tmp_path):
        from dsfn.checkpoint import config_to_meta, save_checkpoint
        from dsfn.data import read_png, write_sequence
        from dsfn.model import ModelConfig, TwoLevelDSFN

        cfg = ModelConfig(scale=2, channels=3, enc_widths=(4, 8), jdsr_width=8,
                          jdsr_depth=1, tfbfi_width=8, tfbfi_depth=1, dec_width=4)
        model = TwoLevelDSFN(cfg, np.random.default_rng(0))
        ckpt = tmp_path / "fresh.bin"
        arrays = dict(model.state_arrays())
        arrays.update(config_to_meta(cfg))
        save_checkpoint(ckpt, arrays)
        frames = np.random.default_rng(1).uniform(0, 1, (4, 3, 16, 16)).astype(np.float32)
        write_sequence(tmp_path / "seq", frames, "seq", 30)
        out = tmp_path / "viz"
        assert main(["viz-offsets", "--ckpt", str(ckpt),
                     "--in", str(tmp_path / "seq"), "--out", str(out)]) == 0
        img = read_png(out / "window_0000_prev.png")
        assert np.allclose(img, 1.0)  # zero offsets render neutral white


class TestGradcheckCommand:
    def test_reports_are_deterministic(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        first = capsys.readouterr().out
        assert main(["gradcheck", "--seed", "0"]) == 0
        second = capsys.readouterr().out
        assert first == second
        assert "two_level" in first
