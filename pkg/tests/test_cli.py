import json
from pathlib import Path

import numpy as np
import pytest

from kmrvae import cli, videoio

TINY = """
seed = 5
num_clips = 4
holdout_clips = 1
frames = 4
height = 16
width = 16
latent_dim = 4
c_lo = 2
c_hi = 4
batch_size = 1
phase0_steps = 4
phase1_steps = 3
phase2_steps = 2
checkpoint_every = 100
adv_start_step = 1000
"""


def _write_cfg(tmp_path, **extra):
    values = {}
    for line in TINY.strip().splitlines():
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    values["data_dir"] = tmp_path / "data"
    values["out_dir"] = tmp_path / "run"
    values.update(extra)
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return str(path)


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def test_gen_data_deterministic(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["gen-data", cfg]) == 0
    files = sorted((tmp_path / "data").glob("*.dcvr"))
    assert len(files) == 4
    blobs = [f.read_bytes() for f in files]
    assert cli.main(["gen-data", cfg]) == 0
    assert [f.read_bytes() for f in files] == blobs
    assert cli.main(["gen-data", cfg, "--set", "seed=6"]) == 0
    assert [f.read_bytes() for f in files] != blobs


def test_usage_errors_exit_1(tmp_path, capsys):
    assert cli.main(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli.main(["train", "--no-such-flag"]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli.main([]) == 1
    cfg = _write_cfg(tmp_path)
    assert cli.main(["eval", cfg]) == 1
    assert "--ref" in capsys.readouterr().err


def test_missing_inputs_exit_1(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["train", str(tmp_path / "absent.cfg")]) == 1
    assert cli.main(["train", cfg]) == 1  # gen-data not run yet
    err = capsys.readouterr().err
    assert "gen-data" in err
    assert cli.main(["train", cfg, "--set", "height=17"]) == 1
    assert "height" in capsys.readouterr().err


def test_full_pipeline_round_trip(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["gen-data", cfg]) == 0
    assert cli.main(["train", cfg]) == 0
    report = _last_json(capsys)
    assert report["steps"] == 9
    final = str(tmp_path / "run" / "final.dcpt")
    assert Path(final).exists()

    clip = str(tmp_path / "data" / "clip_000.dcvr")
    rec = str(tmp_path / "rec.dcvr")
    assert cli.main(["reconstruct", cfg, "--checkpoint", final,
                     "--input", clip, "--output", rec,
                     "--ppm-dir", str(tmp_path / "ppm")]) == 0
    rec_report = _last_json(capsys)
    assert rec_report["psnr"] > 0
    stored = videoio.load_video(rec)
    assert stored.shape == (3, 4, 16, 16)
    assert len(list((tmp_path / "ppm").glob("*.ppm"))) == 4

    assert cli.main(["eval", cfg, "--ref", clip, "--cand", rec]) == 0
    pair = _last_json(capsys)
    assert pair["psnr"] == pytest.approx(rec_report["psnr"])
    assert cli.main(["eval", cfg, "--ref", clip, "--cand", clip]) == 0
    ident = _last_json(capsys)
    assert ident == {"psnr": 100.0, "ssim": 1.0}

    assert cli.main(["decouple", cfg, "--checkpoint", final,
                     "--input", clip,
                     "--out-dir", str(tmp_path / "comps")]) == 0
    for stack in ("keyframe", "motion", "residual"):
        frames = list((tmp_path / "comps" / stack).glob("*.ppm"))
        assert len(frames) == 4

    assert cli.main(["eval", cfg, "--checkpoint", final]) == 0
    model_report = _last_json(capsys)
    assert set(model_report) == {"psnr", "ssim", "clips", "latent"}
    assert model_report["clips"] == 4
    assert set(model_report["latent"]) == {"k", "m", "r"}


def test_pretrain_then_resume(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, out_dir=str(tmp_path / "warm"))
    assert cli.main(["gen-data", cfg]) == 0
    assert cli.main(["pretrain-motion", cfg]) == 0
    warm = _last_json(capsys)
    assert warm["steps"] == 4
    assert cli.main(["train", cfg, "--set",
                     f"out_dir={tmp_path / 'full'}",
                     "--resume", warm["checkpoint"]]) == 0
    resumed = _last_json(capsys)
    assert resumed["steps"] == 9
    assert Path(resumed["checkpoint"]).exists()


def test_aborted_training_exits_2(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["gen-data", cfg]) == 0
    assert cli.main(["train", cfg, "--set", "lr=100000000.0"]) == 2
    assert "aborted at step" in capsys.readouterr().err
    assert (tmp_path / "run" / "crash.dcpt").exists()


def test_ablation_subcommand(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, phase0_steps=2)
    assert cli.main(["ablation", cfg]) == 0
    report = _last_json(capsys)
    assert {"dedicated", "concat", "psnr_gap", "dedicated_wins"} <= set(report)
    assert cli.main(["ablation", cfg, "--set", "ablation=schedule",
                     "--set", "ablation_seeds=1"]) == 0
    sched = _last_json(capsys)
    assert sched["seeds"] == 1 and len(sched["rows"]) == 1


def test_gradcheck_subcommand(capsys):
    assert cli.main(["gradcheck", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "conv3d" in out and "FAIL" not in out
