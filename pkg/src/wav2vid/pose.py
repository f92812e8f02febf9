"""Head-pose recovery from projected landmarks and the transmit/skip gate.

A clip's video stream is worth sending only when the head orientation moved
enough; otherwise the receiver regenerates frames from cached video plus
fresh audio. The score is the summed per-angle range (max - min) over the
clip, and the gate fires when it reaches the threshold. The first clip always
transmits so the receiver cache is never empty.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError


@dataclass
class PoseDelta:
    d_yaw: float
    d_pitch: float
    d_roll: float  # all degrees, ranges over the clip, always >= 0


@dataclass
class GateDecision:
    transmit_video: bool
    score: float
    threshold: float


def estimate_pose(landmarks_2d: np.ndarray, landmark_model: np.ndarray) -> np.ndarray:
    """Per-frame (yaw, pitch, roll) in degrees from projected landmarks.

    landmarks_2d: (T, N, 2) projected points; landmark_model: (N, 3) canonical
    positions. Fits scale * R[:2] per frame by least squares under an
    orthographic camera, then orthonormalizes via the polar factor.
    """
    lm2 = np.asarray(landmarks_2d, dtype=np.float64)
    model = np.asarray(landmark_model, dtype=np.float64)
    if lm2.ndim == 2:
        lm2 = lm2[None]
    if lm2.ndim != 3 or lm2.shape[2] != 2:
        raise ValueError(f"landmarks_2d must be (T, N, 2), got {lm2.shape}")
    if model.ndim != 2 or model.shape[1] != 3 or model.shape[0] != lm2.shape[1]:
        raise ValueError("landmark model must be (N, 3) matching the 2-D points")
    if model.shape[0] < 4:
        raise ValueError("need at least 4 landmarks")

    xc = model - model.mean(axis=0)
    angles = np.empty((lm2.shape[0], 3))
    for t in range(lm2.shape[0]):
        pc = lm2[t] - lm2[t].mean(axis=0)
        m, *_ = np.linalg.lstsq(xc, pc, rcond=None)  # (3, 2): M^T
        u, sv, vt = np.linalg.svd(m.T, full_matrices=False)
        if sv[1] < 1e-9 * max(sv[0], 1e-12):
            raise EstimationError(f"frame {t}: degenerate landmark configuration")
        r2 = u @ vt  # nearest 2x3 with orthonormal rows
        r3 = np.cross(r2[0], r2[1])
        rot = np.vstack([r2, r3])
        # rot = Rz(roll) @ Rx(pitch) @ Ry(yaw), angles within +/-45 deg
        pitch = np.arcsin(np.clip(rot[2, 1], -1.0, 1.0))
        yaw = np.arctan2(-rot[2, 0], rot[2, 2])
        roll = np.arctan2(-rot[0, 1], rot[1, 1])
        angles[t] = np.rad2deg([yaw, pitch, roll])
    return angles


def pose_deltas(angles: np.ndarray) -> PoseDelta:
    """Range (max - min) of each angle track over the clip."""
    a = np.asarray(angles, dtype=np.float64)
    if a.size == 0:
        raise ValueError("empty angle sequence")
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"angles must be (T, 3), got {a.shape}")
    rng = a.max(axis=0) - a.min(axis=0)
    return PoseDelta(float(rng[0]), float(rng[1]), float(rng[2]))


def pose_change_score(angles: np.ndarray) -> float:
    """Summed per-angle range in degrees; a single frame scores 0."""
    d = pose_deltas(angles)
    return d.d_yaw + d.d_pitch + d.d_roll


def gate(score: float, threshold: float, is_first_clip: bool) -> GateDecision:
    """Transmit video iff score >= threshold, or unconditionally on the first
    clip (the receiver cache must be primed)."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    return GateDecision(bool(score >= threshold or is_first_clip), float(score),
                        float(threshold))
