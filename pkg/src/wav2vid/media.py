"""Domain types for audiovisual clips plus a deterministic synthetic scene.

The scene generator stands in for real conferencing footage: an ellipse head
with five projected landmarks and a mouth whose opening tracks the per-frame
audio RMS exactly, so lip sync has an analytic ground truth. File I/O is a
small little-endian binary format that round-trips bitwise.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedHeader, TruncatedPayload
from .rng import TAG_SCENE, make_rng

# canonical face model: x right, y up, z toward viewer (units of face scale)
CANONICAL_LANDMARKS = np.array(
    [
        [-0.38, 0.30, 0.10],   # left eye
        [0.38, 0.30, 0.10],    # right eye
        [0.00, -0.05, 0.45],   # nose tip (off-plane, makes pose identifiable)
        [-0.28, -0.45, 0.12],  # left mouth corner
        [0.28, -0.45, 0.12],   # right mouth corner
    ]
)

CLIP_MAGIC = b"W2VC"
CLIP_VERSION = 1


@dataclass
class AudioWaveform:
    samples: np.ndarray  # float32, nominal range [-1, 1]
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("audio needs at least one sample")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class VideoClip:
    frames: np.ndarray  # float32 (T, H, W), intensities in [0, peak]
    fps: float
    peak: float = 1.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (T, H, W) with T >= 1, got {self.frames.shape}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.peak <= 0:
            raise ValueError(f"peak must be positive, got {self.peak}")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < 0 or hi > self.peak:
            raise ValueError(f"intensities [{lo}, {hi}] outside [0, {self.peak}]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class AudiovisualClip:
    audio: AudioWaveform
    video: VideoClip

    def __post_init__(self):
        da = self.audio.duration
        dv = self.video.n_frames / self.video.fps
        if abs(da - dv) > 1.0 / self.video.fps + 1e-9:
            raise ValueError(
                f"audio ({da:.4f}s) and video ({dv:.4f}s) durations differ "
                f"by more than one frame period"
            )


@dataclass
class SceneParams:
    """Ground truth behind a synthetic clip: pose tracks, lip state, geometry."""

    yaw: np.ndarray     # degrees, per frame
    pitch: np.ndarray
    roll: np.ndarray
    mouth_open: np.ndarray  # [0, 1], per frame
    landmarks: np.ndarray   # (5, 3) canonical model
    center: tuple           # face center, x right / y up pixel coords
    scale: float            # face scale in pixels

    def __post_init__(self):
        n = len(self.yaw)
        for name in ("pitch", "roll", "mouth_open"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} track length differs from yaw track")
        for name in ("yaw", "pitch", "roll"):
            if np.max(np.abs(getattr(self, name))) > 45.0:
                raise ValueError(f"{name} exceeds 45 degrees")
        if np.min(self.mouth_open) < 0 or np.max(self.mouth_open) > 1:
            raise ValueError("mouth_open outside [0, 1]")

    @property
    def n_frames(self) -> int:
        return len(self.yaw)


def rotation_matrix(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """R = Rz(roll) @ Rx(pitch) @ Ry(yaw); yaw about the up axis."""
    y, p, r = np.deg2rad([yaw_deg, pitch_deg, roll_deg])
    cy, sy = np.cos(y), np.sin(y)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ rx @ ry


def project_landmarks(scene: SceneParams, t: int) -> np.ndarray:
    """Orthographic projection of the landmark model at frame t; (5, 2) x/y-up."""
    if not 0 <= t < scene.n_frames:
        raise ValueError(f"frame index {t} out of range [0, {scene.n_frames})")
    rot = rotation_matrix(scene.yaw[t], scene.pitch[t], scene.roll[t])
    pts = scene.landmarks @ rot.T
    return np.asarray(scene.center) + scene.scale * pts[:, :2]


def frame_window(audio: AudioWaveform, t: int, fps: float) -> np.ndarray:
    """Audio samples covering video frame t: [t/fps, (t+1)/fps). Final window
    may run short."""
    start = int(np.floor(t * audio.sample_rate / fps))
    if t < 0 or start >= audio.n_samples:
        raise ValueError(f"frame index {t} has no audio samples")
    stop = int(np.floor((t + 1) * audio.sample_rate / fps))
    return audio.samples[start : min(stop, audio.n_samples)]


def _ellipse_mask(xg, yg, cx, cy, ax, ay, sharp):
    """Soft-edged ellipse coverage in [0, 1]."""
    d = np.sqrt(((xg - cx) / ax) ** 2 + ((yg - cy) / ay) ** 2)
    return np.clip((1.0 - d) * sharp + 0.5, 0.0, 1.0)


def render_scene(scene: SceneParams, width: int = 64, height: int = 64,
                 peak: float = 1.0) -> np.ndarray:
    """Pure rasterizer: SceneParams -> (T, H, W) float32 frames."""
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    xg = cols
    yg = (height - 1) - rows  # y-up
    cx, cy = scene.center
    s = scene.scale
    frames = np.empty((scene.n_frames, height, width), dtype=np.float32)
    for t in range(scene.n_frames):
        img = np.full((height, width), 0.05 * peak)
        head = _ellipse_mask(xg, yg, cx, cy, 0.80 * s, 1.00 * s, s / 2.0)
        img = img * (1 - head) + 0.85 * peak * head
        pts = project_landmarks(scene, t)
        # mouth: ellipse between the projected corners, height follows openness
        mcx, mcy = pts[3:5].mean(axis=0)
        half_w = max(np.linalg.norm(pts[4] - pts[3]) / 2.0, 1e-3)
        half_h = s * (0.05 + 0.15 * scene.mouth_open[t])
        mouth = _ellipse_mask(xg, yg, mcx, mcy, half_w, half_h, half_h)
        img = img * (1 - mouth) + 0.25 * peak * mouth
        for px, py in pts[:3]:  # eye and nose dots
            dot = _ellipse_mask(xg, yg, px, py, 1.3, 1.3, 1.3)
            img = img * (1 - dot) + 0.15 * peak * dot
        frames[t] = img
    return np.clip(frames, 0.0, peak).astype(np.float32)


def synth_scene(seed: int, duration_s: float, fps: float = 25.0,
                sample_rate: float = 8000.0, motion_profile: str = "gentle",
                width: int = 64, height: int = 64):
    """Deterministic synthetic talking-head clip with ground truth.

    Audio is three amplitude-modulated sinusoids plus band-limited noise;
    mouth openness per frame is the normalized audio RMS over that frame's
    window. Returns (AudiovisualClip, SceneParams).
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    if fps <= 0 or sample_rate <= 0:
        raise ValueError("fps and sample_rate must be positive")
    if motion_profile not in ("static", "gentle", "turning"):
        raise ValueError(f"unknown motion profile {motion_profile!r}")

    rng = make_rng(seed, TAG_SCENE)
    n_a = int(round(duration_s * sample_rate))
    n_v = int(round(duration_s * fps))
    t = np.arange(n_a) / sample_rate

    carriers = np.array([220.0, 450.0, 710.0])
    weights = np.array([0.5, 0.3, 0.2])
    env_f = rng.uniform(1.2, 2.8, size=3)
    env_ph = rng.uniform(0, 2 * np.pi, size=3)
    car_ph = rng.uniform(0, 2 * np.pi, size=3)
    raw = np.zeros(n_a)
    for i in range(3):
        env = np.maximum(0.0, np.sin(2 * np.pi * env_f[i] * t + env_ph[i]))
        raw += weights[i] * env * np.sin(2 * np.pi * carriers[i] * t + car_ph[i])
    white = rng.standard_normal(n_a + 8)
    raw += 0.02 * np.convolve(white, np.ones(9) / 9.0, mode="valid")
    raw *= 0.95 / max(np.max(np.abs(raw)), 1e-12)
    audio = AudioWaveform(raw.astype(np.float32), sample_rate)

    tv = np.arange(n_v) / fps
    if motion_profile == "static":
        yaw = np.zeros(n_v)
        pitch = np.zeros(n_v)
        roll = np.zeros(n_v)
    elif motion_profile == "gentle":
        f = rng.uniform(0.08, 0.30, size=3)
        ph = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform([1.5, 1.0, 0.5], [3.0, 2.0, 1.5])
        yaw = amp[0] * np.sin(2 * np.pi * f[0] * tv + ph[0])
        pitch = amp[1] * np.sin(2 * np.pi * f[1] * tv + ph[1])
        roll = amp[2] * np.sin(2 * np.pi * f[2] * tv + ph[2])
    else:  # turning: smooth yaw sweep, at least 10 degrees end to end
        u = tv / max(tv[-1], 1e-9) if n_v > 1 else np.zeros(1)
        sweep = u * u * (3 - 2 * u)  # smoothstep
        yaw = -8.0 + 16.0 * sweep
        pitch = 0.8 * np.sin(2 * np.pi * 0.2 * tv + rng.uniform(0, 2 * np.pi))
        roll = 0.5 * np.sin(2 * np.pi * 0.15 * tv + rng.uniform(0, 2 * np.pi))

    # lip state: per-frame RMS of the stored samples, normalized to [0, 1]
    rms = np.empty(n_v)
    for k in range(n_v):
        start = int(np.floor(k * sample_rate / fps))
        if start >= n_a:
            rms[k] = 0.0
            continue
        stop = min(int(np.floor((k + 1) * sample_rate / fps)), n_a)
        seg = audio.samples[start:stop].astype(np.float64)
        rms[k] = np.sqrt(np.mean(seg * seg)) if seg.size else 0.0
    mouth_open = rms / max(rms.max(), 1e-12)

    scene = SceneParams(
        yaw=yaw, pitch=pitch, roll=roll, mouth_open=mouth_open,
        landmarks=CANONICAL_LANDMARKS.copy(),
        center=(width / 2.0, height / 2.0 + 2.0),
        scale=0.30 * min(width, height),
    )
    video = VideoClip(render_scene(scene, width, height), fps)
    return AudiovisualClip(audio, video), scene


def write_clip(clip: AudiovisualClip, path) -> None:
    a, v = clip.audio, clip.video
    header = CLIP_MAGIC + struct.pack(
        "<HffIIHHf",
        CLIP_VERSION,
        float(a.sample_rate),
        float(v.fps),
        a.n_samples,
        v.n_frames,
        v.width,
        v.height,
        float(v.peak),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(a.samples, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())


def read_clip(path) -> AudiovisualClip:
    with open(path, "rb") as f:
        buf = f.read()
    head_len = 4 + struct.calcsize("<HffIIHHf")
    if len(buf) < head_len or buf[:4] != CLIP_MAGIC:
        raise MalformedHeader(f"{path}: not a clip file")
    version, sr, fps, n_a, n_v, w, h, peak = struct.unpack_from("<HffIIHHf", buf, 4)
    if version != CLIP_VERSION:
        raise MalformedHeader(f"{path}: unsupported clip version {version}")
    need = head_len + 4 * (n_a + n_v * h * w)
    if len(buf) < need:
        raise TruncatedPayload(f"{path}: expected {need} bytes, found {len(buf)}")
    if len(buf) > need:
        raise MalformedHeader(f"{path}: {len(buf) - need} trailing bytes")
    off = head_len
    samples = np.frombuffer(buf, dtype="<f4", count=n_a, offset=off).copy()
    off += 4 * n_a
    frames = np.frombuffer(buf, dtype="<f4", count=n_v * h * w, offset=off)
    frames = frames.reshape(n_v, h, w).copy()
    return AudiovisualClip(AudioWaveform(samples, sr), VideoClip(frames, fps, peak))
