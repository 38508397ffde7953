"""Container format, PPM dumps and synthetic clip guarantees."""

import os

import numpy as np
import pytest

from kmrvae import autodiff as ad
from kmrvae import videoio
from kmrvae.autodiff import Tensor
from kmrvae.errors import FormatError, ShapeError


def test_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    video = rng.random((3, 4, 16, 16)).astype(np.float32)
    p = str(tmp_path / "clip.dcv")
    videoio.save_video(p, video)
    back = videoio.load_video(p)
    assert back.dtype == np.float32
    assert np.array_equal(back, video)


def test_save_clamps_out_of_range(tmp_path):
    video = np.full((3, 2, 16, 16), 1.5, np.float32)
    p = str(tmp_path / "hot.dcv")
    videoio.save_video(p, video)
    assert videoio.load_video(p).max() == 1.0


def test_header_layout(tmp_path):
    p = str(tmp_path / "h.dcv")
    videoio.save_video(p, np.zeros((3, 2, 16, 17), np.float32))
    blob = open(p, "rb").read()
    assert blob[:4] == b"DCVR"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert int.from_bytes(blob[6:10], "little") == 2    # T
    assert int.from_bytes(blob[10:14], "little") == 16  # H
    assert int.from_bytes(blob[14:18], "little") == 17  # W
    assert len(blob) == 18 + 2 * 3 * 16 * 17 * 4


@pytest.mark.parametrize("mangle,needle", [
    (lambda b: b"JUNK" + b[4:], "offset 0"),
    (lambda b: b[:10], "offset"),
    (lambda b: b[:-5], "offset"),
    (lambda b: b + b"x", "offset"),
    (lambda b: b[:4] + (9).to_bytes(2, "little") + b[6:], "version"),
])
def test_bad_files_rejected_with_position(tmp_path, mangle, needle):
    p = str(tmp_path / "x.dcv")
    videoio.save_video(p, np.zeros((3, 2, 16, 16), np.float32))
    blob = open(p, "rb").read()
    open(p, "wb").write(mangle(blob))
    with pytest.raises(FormatError, match=needle):
        videoio.load_video(p)


def test_nonfinite_payload_rejected(tmp_path):
    p = str(tmp_path / "nan.dcv")
    videoio.save_video(p, np.zeros((3, 2, 16, 16), np.float32))
    blob = bytearray(open(p, "rb").read())
    blob[18:22] = np.array([np.nan], "<f4").tobytes()
    open(p, "wb").write(bytes(blob))
    with pytest.raises(FormatError, match="finite"):
        videoio.load_video(p)


def test_ppm_layout(tmp_path):
    video = np.zeros((3, 1, 2, 3), np.float32)
    video[0, 0, 0, 0] = 1.0   # red pixel top-left
    paths = videoio.dump_ppm(video, str(tmp_path), "f")
    blob = open(paths[0], "rb").read()
    assert blob.startswith(b"P6\n3 2\n255\n")
    body = blob[len(b"P6\n3 2\n255\n"):]
    assert len(body) == 2 * 3 * 3
    assert body[0:3] == bytes([255, 0, 0])


def test_ppm_signed_midpoint(tmp_path):
    paths = videoio.dump_ppm(np.zeros((3, 1, 2, 2), np.float32),
                             str(tmp_path), "s", signed=True)
    body = open(paths[0], "rb").read()[-12:]
    assert body == bytes([128] * 12)


def test_generator_is_deterministic():
    for regime in videoio.REGIMES:
        a = videoio.gen_synthetic(5, 4, 16, 16, regime)
        b = videoio.gen_synthetic(5, 4, 16, 16, regime)
        assert np.array_equal(a.video, b.video)
        assert np.array_equal(a.true_flow, b.true_flow)
        assert np.array_equal(a.valid, b.valid)
        c = videoio.gen_synthetic(6, 4, 16, 16, regime)
        assert not np.array_equal(a.video, c.video)


@pytest.mark.parametrize("regime", videoio.REGIMES)
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_ground_truth_flow_reproduces_frames(regime, seed):
    """Warping frame 0 by true_flow must rebuild each frame wherever the
    sample is marked valid. Exact for whole-pixel regimes, float32
    rounding for the scale one."""
    t, h, w = 5, 24, 16
    s = videoio.gen_synthetic(seed, t, h, w, regime)
    assert s.video.min() >= 0.0 and s.video.max() <= 1.0
    assert s.valid[0].all()
    assert s.valid.mean() > 0.5
    assert np.abs(s.true_flow).max() <= min(h, w) / 4 + 1e-6
    pyr = Tensor(np.stack([s.video[:, 0]] * 4))
    tol = 0.0 if regime != "scale-change" else 5e-6
    for i in range(1, t):
        mot = np.concatenate(
            [s.true_flow[:, i], np.zeros((1, h, w), np.float32)])
        out = ad.scale_space_warp(pyr, Tensor(mot)).data
        err = np.abs(out - s.video[:, i])[:, s.valid[i]]
        assert err.size == 0 or err.max() <= tol, (regime, seed, i, err.max())


def test_flow_is_nontrivial():
    # every regime must actually move something
    for regime in videoio.REGIMES:
        moved = 0.0
        for seed in range(4):
            s = videoio.gen_synthetic(seed, 5, 16, 16, regime)
            moved += float(np.abs(s.true_flow[:, -1]).max())
        assert moved > 0.5, regime


def test_generator_input_validation():
    with pytest.raises(ShapeError):
        videoio.gen_synthetic(0, 4, 8, 16, "translate")
    with pytest.raises(ShapeError):
        videoio.gen_synthetic(0, 1, 16, 16, "translate")
    with pytest.raises(ShapeError):
        videoio.gen_synthetic(0, 4, 16, 16, "spin")


def test_video_validation_helpers(tmp_path):
    with pytest.raises(ShapeError):
        videoio.check_video(np.zeros((4, 2, 16, 16), np.float32))
    with pytest.raises(ShapeError):
        videoio.check_video(np.zeros((3, 2, 16, 16), np.float64))
    with pytest.raises(ShapeError):
        videoio.check_video(np.full((3, 2, 16, 16), 2.0, np.float32))
    with pytest.raises(ShapeError):
        videoio.save_video(str(tmp_path / "bad.dcv"),
                           np.full((3, 2, 4, 4), np.nan, np.float32))
    ok = np.zeros((3, 2, 16, 16), np.float32)
    assert videoio.check_video(ok) is ok
