"""Synthetic scene generation and the clip container/file format."""

import numpy as np
import pytest

from wav2vid.errors import MalformedHeader, TruncatedPayload
from wav2vid.media import (AudiovisualClip, AudioWaveform, VideoClip,
                           frame_window, project_landmarks, read_clip,
                           synth_scene, write_clip)


def test_synth_scene_shapes_and_ranges():
    clip, scene = synth_scene(0, 2.0)
    assert clip.audio.n_samples == 16000
    assert clip.video.n_frames == 50
    assert clip.video.frames.shape == (50, 64, 64)
    assert clip.video.frames.dtype == np.float32
    assert clip.video.frames.min() >= 0.0
    assert clip.video.frames.max() <= 1.0
    assert np.max(np.abs(clip.audio.samples)) <= 0.95 + 1e-6
    assert scene.n_frames == 50
    assert scene.mouth_open.min() >= 0.0 and scene.mouth_open.max() <= 1.0


def test_synth_scene_deterministic():
    a, sa = synth_scene(3, 1.2)
    b, sb = synth_scene(3, 1.2)
    assert np.array_equal(a.audio.samples, b.audio.samples)
    assert np.array_equal(a.video.frames, b.video.frames)
    assert np.array_equal(sa.yaw, sb.yaw)
    c, _ = synth_scene(4, 1.2)
    assert not np.array_equal(a.audio.samples, c.audio.samples)


def test_static_profile_has_zero_pose():
    _, scene = synth_scene(5, 1.2, motion_profile="static")
    assert np.all(scene.yaw == 0)
    assert np.all(scene.pitch == 0)
    assert np.all(scene.roll == 0)


def test_turning_profile_sweeps_at_least_ten_degrees():
    _, scene = synth_scene(6, 2.0, motion_profile="turning")
    assert scene.yaw.max() - scene.yaw.min() >= 10.0
    # monotone sweep start to end
    assert scene.yaw[-1] > scene.yaw[0]


def test_mouth_open_is_normalized_frame_rms():
    clip, scene = synth_scene(7, 1.2)
    n = clip.audio.n_samples
    rms = []
    for t in range(clip.video.n_frames):
        start = int(np.floor(t * 8000.0 / 25.0))
        stop = min(int(np.floor((t + 1) * 8000.0 / 25.0)), n)
        seg = clip.audio.samples[start:stop].astype(np.float64)
        rms.append(np.sqrt(np.mean(seg * seg)))
    rms = np.asarray(rms)
    np.testing.assert_allclose(scene.mouth_open, rms / rms.max(), rtol=1e-9)
    assert scene.mouth_open.max() == pytest.approx(1.0)


def test_bad_scene_args_rejected():
    with pytest.raises(ValueError):
        synth_scene(0, -1.0)
    with pytest.raises(ValueError):
        synth_scene(0, 1.0, fps=0)
    with pytest.raises(ValueError):
        synth_scene(0, 1.0, motion_profile="sprinting")


def test_waveform_validation():
    with pytest.raises(ValueError):
        AudioWaveform(np.zeros(0, dtype=np.float32), 8000.0)
    with pytest.raises(ValueError):
        AudioWaveform(np.array([np.nan], dtype=np.float32), 8000.0)
    with pytest.raises(ValueError):
        AudioWaveform(np.zeros(10, dtype=np.float32), 0.0)


def test_video_clip_validation():
    with pytest.raises(ValueError):
        VideoClip(np.full((2, 8, 8), 2.0, dtype=np.float32), 25.0, peak=1.0)
    with pytest.raises(ValueError):
        VideoClip(np.zeros((8, 8), dtype=np.float32), 25.0)  # missing T axis
    with pytest.raises(ValueError):
        VideoClip(np.zeros((2, 8, 8), dtype=np.float32), -25.0)


def test_av_clip_duration_agreement():
    a = AudioWaveform(np.zeros(8000, dtype=np.float32) + 0.1, 8000.0)
    v = VideoClip(np.zeros((50, 8, 8), dtype=np.float32), 25.0)  # 2 s
    with pytest.raises(ValueError):
        AudiovisualClip(a, v)


def test_clip_file_roundtrip(tmp_path):
    clip, _ = synth_scene(8, 1.2)
    p = tmp_path / "clip.w2vc"
    write_clip(clip, p)
    back = read_clip(p)
    assert np.array_equal(back.audio.samples, clip.audio.samples)
    assert np.array_equal(back.video.frames, clip.video.frames)
    assert back.audio.sample_rate == clip.audio.sample_rate
    assert back.video.fps == clip.video.fps
    assert back.video.peak == clip.video.peak


def test_clip_file_bad_magic(tmp_path):
    p = tmp_path / "bad.w2vc"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(MalformedHeader):
        read_clip(p)


def test_clip_file_truncated(tmp_path):
    clip, _ = synth_scene(8, 1.2)
    p = tmp_path / "clip.w2vc"
    write_clip(clip, p)
    buf = p.read_bytes()
    p.write_bytes(buf[: len(buf) // 2])
    with pytest.raises(TruncatedPayload):
        read_clip(p)


def test_clip_file_trailing_bytes(tmp_path):
    clip, _ = synth_scene(8, 1.2)
    p = tmp_path / "clip.w2vc"
    write_clip(clip, p)
    p.write_bytes(p.read_bytes() + b"\x00\x00")
    with pytest.raises(MalformedHeader):
        read_clip(p)


def test_frame_window_boundaries():
    a = AudioWaveform(np.arange(8000, dtype=np.float32) / 8000.0, 8000.0)
    w0 = frame_window(a, 0, 25.0)
    assert w0.size == 320
    assert np.array_equal(w0, a.samples[:320])
    w_last = frame_window(a, 24, 25.0)
    assert np.array_equal(w_last, a.samples[7680:8000])
    with pytest.raises(ValueError):
        frame_window(a, 25, 25.0)
    with pytest.raises(ValueError):
        frame_window(a, -1, 25.0)


def test_project_landmarks_range_check():
    _, scene = synth_scene(9, 1.2)
    pts = project_landmarks(scene, 0)
    assert pts.shape == (5, 2)
    with pytest.raises(ValueError):
        project_landmarks(scene, scene.n_frames)
