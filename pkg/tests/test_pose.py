"""Head pose recovery from projected landmarks and the transmit gate."""

import numpy as np
import pytest

from wav2vid.errors import EstimationError
from wav2vid.media import (CANONICAL_LANDMARKS, project_landmarks,
                           rotation_matrix, synth_scene)
from wav2vid.pose import (estimate_pose, gate, pose_change_score, pose_deltas)


def _project(yaw, pitch, roll, center=(32.0, 34.0), scale=19.2):
    rot = rotation_matrix(yaw, pitch, roll)
    pts = CANONICAL_LANDMARKS @ rot.T
    return np.asarray(center) + scale * pts[:, :2]


def test_identity_pose_recovered():
    angles = estimate_pose(_project(0.0, 0.0, 0.0), CANONICAL_LANDMARKS)
    np.testing.assert_allclose(angles, [[0.0, 0.0, 0.0]], atol=1e-6)


def test_pure_yaw_recovered_exactly():
    angles = estimate_pose(_project(5.0, 0.0, 0.0), CANONICAL_LANDMARKS)
    np.testing.assert_allclose(angles, [[5.0, 0.0, 0.0]], atol=1e-6)


def test_combined_rotation_recovered():
    angles = estimate_pose(_project(7.0, -4.0, 2.5), CANONICAL_LANDMARKS)
    np.testing.assert_allclose(angles, [[7.0, -4.0, 2.5]], atol=1e-6)


def test_scene_pose_track_recovered():
    _, scene = synth_scene(11, 1.2, motion_profile="gentle")
    lm2 = np.stack([project_landmarks(scene, t) for t in range(scene.n_frames)])
    angles = estimate_pose(lm2, scene.landmarks)
    np.testing.assert_allclose(angles[:, 0], scene.yaw, atol=0.5)
    np.testing.assert_allclose(angles[:, 1], scene.pitch, atol=0.5)
    np.testing.assert_allclose(angles[:, 2], scene.roll, atol=0.5)


def test_landmark_order_consistency():
    pts = _project(6.0, 1.0, -2.0)
    perm = np.array([3, 1, 4, 0, 2])
    a = estimate_pose(pts, CANONICAL_LANDMARKS)
    b = estimate_pose(pts[perm], CANONICAL_LANDMARKS[perm])
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_collinear_landmarks_rejected():
    model = np.stack([np.linspace(-1, 1, 5),
                      np.zeros(5), np.zeros(5)], axis=1)
    pts = model[:, :2] * 20.0 + 32.0
    with pytest.raises(EstimationError):
        estimate_pose(pts, model)


def test_too_few_landmarks_rejected():
    with pytest.raises(ValueError):
        estimate_pose(np.zeros((3, 2)), np.zeros((3, 3)))


def test_pose_deltas_hand_case():
    angles = np.array([
        [1.0, 0.0, 0.5],
        [5.0, 2.0, 1.5],
        [3.0, 1.0, 1.0],
    ])
    d = pose_deltas(angles)
    assert d.d_yaw == pytest.approx(4.0)
    assert d.d_pitch == pytest.approx(2.0)
    assert d.d_roll == pytest.approx(1.0)
    assert pose_change_score(angles) == pytest.approx(7.0)


def test_single_frame_scores_zero():
    assert pose_change_score(np.array([[3.0, -1.0, 2.0]])) == 0.0


def test_empty_angles_rejected():
    with pytest.raises(ValueError):
        pose_change_score(np.zeros((0, 3)))


def test_gate_threshold_and_first_clip():
    assert gate(5.0, 5.0, False).transmit_video        # boundary counts
    assert not gate(4.99, 5.0, False).transmit_video
    assert gate(0.0, 5.0, True).transmit_video          # first clip primes cache
    d = gate(2.0, 5.0, False)
    assert d.score == 2.0 and d.threshold == 5.0
    with pytest.raises(ValueError):
        gate(1.0, -0.1, False)
