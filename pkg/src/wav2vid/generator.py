"""Audio-driven mouth generator for gated (untransmitted) video clips.

A video processor embeds a pose reference (the cached frame with the mouth
region blanked), an audio processor embeds the per-frame audio window, and a
small deconv head renders only the mouth patch, which is written back into a
copy of the cached frame. A cosine sync score between video and audio
embeddings plus a binary patch discriminator give the composite training
loss: (1 - w_s - w_g) * recon + w_s * sync + w_g * gan.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MissingReferenceError
from .media import AudioWaveform, VideoClip, frame_window
from .nn import (
    Conv1d,
    Conv2d,
    Deconv2d,
    Dense,
    Net,
    ParameterSet,
    Sigmoid,
    Tanh,
    backward,
    forward,
    sgd_step,
)
from .rng import TAG_INIT, TAG_TRAIN, make_rng

EMBED_DIM = 16
PATCH_HW = (12, 20)
DEFAULT_KAPPA = 1e-6
DEFAULT_KAPPA_P = 1e-3
DEFAULT_W_S = 0.3
DEFAULT_W_G = 0.07


@dataclass
class Embeddings:
    """One (video, audio) embedding pair per frame."""

    v: np.ndarray  # (T, d)
    a: np.ndarray  # (T, d)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.v.shape != self.a.shape or self.v.ndim != 2:
            raise ValueError(f"embedding shapes differ: {self.v.shape} vs {self.a.shape}")
        if not (np.isfinite(self.v).all() and np.isfinite(self.a).all()):
            raise ValueError("embeddings must be finite")

    def pairs(self):
        return list(zip(self.v, self.a))


@dataclass
class GenLossWeights:
    w_s: float = DEFAULT_W_S
    w_g: float = DEFAULT_W_G
    kappa: float = DEFAULT_KAPPA
    kappa_p: float = DEFAULT_KAPPA_P

    def __post_init__(self):
        if self.w_s < 0 or self.w_g < 0:
            raise ValueError("weights must be >= 0")
        if self.w_s + self.w_g > 1:
            raise ValueError(f"w_s + w_g = {self.w_s + self.w_g} exceeds 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if not 0 < self.kappa_p < 1:
            raise ValueError("kappa_p must lie in (0, 1)")


def mouth_rect(scene, frame_hw: tuple, patch_hw: tuple = PATCH_HW) -> tuple:
    """Fixed-size mouth rectangle (r0, c0, r1, c1) from scene geometry.

    Centered on the neutral-pose mouth (0.45 * scale below face center),
    shifted as needed to stay inside the frame.
    """
    h, w = frame_hw
    ph, pw = patch_hw
    if ph > h or pw > w:
        raise ValueError(f"patch {patch_hw} larger than frame {frame_hw}")
    cx, cy = scene.center
    row_mid = (h - 1) - (cy - 0.45 * scene.scale)
    r0 = int(np.clip(round(row_mid - ph / 2), 0, h - ph))
    c0 = int(np.clip(round(cx - pw / 2), 0, w - pw))
    return (r0, c0, r0 + ph, c0 + pw)


class GeneratorModel:
    """Processors, deconv mouth head, and patch discriminator."""

    def __init__(self, seed: int = 0, d: int = EMBED_DIM,
                 patch_hw: tuple = PATCH_HW, peak: float = 1.0):
        from .video_codec import _balance_deconv
        rng = make_rng(seed, TAG_INIT, 4)
        ph, pw = patch_hw
        if ph % 4 or pw % 4:
            raise ValueError(f"patch dims {patch_hw} must be divisible by 4")
        self.d = d
        self.patch_hw = patch_hw
        self.peak = peak
        self.vconv = Net([
            ("c1", Conv2d(1, 4, 3, rng, stride=2)),
            ("a1", Tanh()),
            ("c2", Conv2d(4, 8, 3, rng, stride=2)),
            ("a2", Tanh()),
        ])
        self.vdense = Net([("fc", Dense(8, d, rng))])
        self.aconv = Net([
            ("c1", Conv1d(1, 4, 9, rng, stride=2)),
            ("a1", Tanh()),
            ("c2", Conv1d(4, 8, 9, rng, stride=2)),
            ("a2", Tanh()),
        ])
        self.adense = Net([("fc", Dense(8, d, rng))])
        self.gen_fc = Net([("fc", Dense(2 * d, 8 * (ph // 4) * (pw // 4), rng)),
                           ("a", Tanh())])
        self.gen_deconv = Net([
            ("d1", Deconv2d(8, 8, 5, rng, stride=2)),
            ("a1", Tanh()),
            ("d2", Deconv2d(8, 1, 5, rng, stride=2)),
        ])
        _balance_deconv(self.gen_deconv["d1"].w)
        _balance_deconv(self.gen_deconv["d2"].w)
        self.disc_conv = Net([
            ("c1", Conv2d(1, 4, 3, rng, stride=2)),
            ("a1", Tanh()),
            ("c2", Conv2d(4, 8, 3, rng, stride=2)),
            ("a2", Tanh()),
        ])
        self.disc_fc = Net([("fc", Dense(8, 1, rng)), ("s", Sigmoid())])
        self.params = ParameterSet(
            {
                "vconv": self.vconv, "vdense": self.vdense,
                "aconv": self.aconv, "adense": self.adense,
                "gen_fc": self.gen_fc, "gen_deconv": self.gen_deconv,
                "disc_conv": self.disc_conv, "disc_fc": self.disc_fc,
            },
            trainable={"vconv", "vdense", "aconv", "adense",
                       "gen_fc", "gen_deconv", "disc_conv", "disc_fc"},
        )
        self.history: list = []

    def named_params(self):
        return self.params.named()


# ---------------------------------------------------------------------------
# embedding forward/backward helpers

def _embed_video(model, frame: np.ndarray, want_tape: bool = False):
    h, tape1 = forward(model.vconv, frame[None, None])
    pooled = h.mean(axis=(2, 3))
    e, tape2 = forward(model.vdense, pooled)
    if want_tape:
        return e[0], (tape1, tape2, h.shape)
    return e[0]


def _embed_video_grad(model, tapes, ge: np.ndarray):
    tape1, tape2, hshape = tapes
    gpooled, g_dense = backward(model.vdense, tape2, ge[None])
    gh = np.broadcast_to(gpooled[:, :, None, None], hshape) / (hshape[2] * hshape[3])
    gframe, g_conv = backward(model.vconv, tape1, np.ascontiguousarray(gh))
    return gframe[0, 0], g_conv, g_dense


def _embed_audio(model, window: np.ndarray, n: int, want_tape: bool = False):
    buf = np.zeros(n)
    m = min(window.size, n)
    buf[:m] = window[:m]
    h, tape1 = forward(model.aconv, buf[None, None])
    # rectified pooling: the waveform oscillates around zero, so a plain
    # time mean cancels out and loses the amplitude that carries openness
    pooled = np.abs(h).mean(axis=2)
    e, tape2 = forward(model.adense, pooled)
    if want_tape:
        return e[0], (tape1, tape2, h)
    return e[0]


def _embed_audio_grad(model, tapes, ge: np.ndarray):
    tape1, tape2, h = tapes
    gpooled, g_dense = backward(model.adense, tape2, ge[None])
    gh = np.sign(h) * gpooled[:, :, None] / h.shape[2]
    _, g_conv = backward(model.aconv, tape1, np.ascontiguousarray(gh))
    return g_conv, g_dense


def embed(model: GeneratorModel, frames: np.ndarray, audio: AudioWaveform,
          fps: float) -> Embeddings:
    """Per-frame (video, audio) embedding pairs; audio split by frame_window."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(f"expected (T, H, W) frames, got {frames.shape}")
    t_count = frames.shape[0]
    last_start = int(np.floor((t_count - 1) * audio.sample_rate / fps))
    if last_start >= audio.n_samples:
        raise ValueError(
            f"{t_count} frames need audio past sample {last_start}, "
            f"have {audio.n_samples}")
    n = int(round(audio.sample_rate / fps))
    vs, as_ = [], []
    for t in range(t_count):
        vs.append(_embed_video(model, frames[t]))
        as_.append(_embed_audio(model, frame_window(audio, t, fps), n))
    return Embeddings(np.stack(vs), np.stack(as_))


# ---------------------------------------------------------------------------
# losses

def p_sync(v: np.ndarray, a: np.ndarray, kappa: float = DEFAULT_KAPPA) -> float:
    """Cosine sync score with a noise-floored denominator; always in [-1, 1]."""
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    den = max(float(np.linalg.norm(v) * np.linalg.norm(a)), kappa)
    return float(np.clip(np.dot(v, a) / den, -1.0, 1.0))


def _p_sync_grad(v: np.ndarray, a: np.ndarray, kappa: float = DEFAULT_KAPPA):
    """(P, dP/dv, dP/da); the clip to [-1, 1] only binds at exact parallels
    where the gradient of the ratio is zero along the constraint anyway."""
    nv, na = float(np.linalg.norm(v)), float(np.linalg.norm(a))
    raw_den = nv * na
    dot = float(np.dot(v, a))
    if raw_den > kappa:
        p = dot / raw_den
        gv = a / raw_den - p * v / (nv * nv)
        ga = v / raw_den - p * a / (na * na)
    else:
        p = dot / kappa
        gv = a / kappa
        ga = v / kappa
    return p, gv, ga


def sync_loss(pairs, kappa: float = DEFAULT_KAPPA,
              kappa_p: float = DEFAULT_KAPPA_P) -> float:
    """Mean -ln(P_sync) with P clamped to [kappa_p, 1] so the log is finite."""
    if isinstance(pairs, Embeddings):
        pairs = pairs.pairs()
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one embedding pair")
    if not 0 < kappa_p < 1:
        raise ValueError("kappa_p must lie in (0, 1)")
    total = 0.0
    for v, a in pairs:
        p = np.clip(p_sync(v, a, kappa), kappa_p, 1.0)
        total += -np.log(p)
    return total / len(pairs)


def recon_loss(real, generated) -> float:
    """Mean over frames of the summed absolute pixel difference."""
    rf = real.frames if isinstance(real, VideoClip) else np.asarray(real)
    gf = generated.frames if isinstance(generated, VideoClip) else np.asarray(generated)
    if rf.shape != gf.shape:
        raise ValueError(f"shape mismatch: {rf.shape} vs {gf.shape}")
    rf = rf.astype(np.float64)
    gf = gf.astype(np.float64)
    t = rf.shape[0] if rf.ndim == 3 else 1
    return float(np.sum(np.abs(rf - gf)) / t)


def _disc_forward(model: GeneratorModel, patch: np.ndarray, want_tape: bool = False):
    h, tape1 = forward(model.disc_conv, patch[None, None])
    pooled = h.mean(axis=(2, 3))
    dout, tape2 = forward(model.disc_fc, pooled)
    d = float(dout[0, 0])
    if want_tape:
        return d, (tape1, tape2, h.shape)
    return d


def _disc_backward(model, tapes, gd: float):
    tape1, tape2, hshape = tapes
    gpooled, g_fc = backward(model.disc_fc, tape2, np.array([[gd]]))
    gh = np.broadcast_to(gpooled[:, :, None, None], hshape) / (hshape[2] * hshape[3])
    gpatch, g_conv = backward(model.disc_conv, tape1, np.ascontiguousarray(gh))
    return gpatch[0, 0], g_conv, g_fc


def gan_loss(model: GeneratorModel, patches) -> float:
    """Generator-side objective: mean log(1 - D(patch)), D clamped away
    from both saturation points."""
    patches = list(patches)
    if not patches:
        raise ValueError("need at least one patch")
    total = 0.0
    for p in patches:
        d = np.clip(_disc_forward(model, np.asarray(p, dtype=np.float64)),
                    1e-6, 1.0 - 1e-6)
        total += np.log(1.0 - d)
    return float(total / len(patches))


def total_gen_loss(recon: float, sync: float, gan: float,
                   weights: GenLossWeights) -> float:
    """Exact affine combination (1 - w_s - w_g)*recon + w_s*sync + w_g*gan."""
    if weights.w_s + weights.w_g > 1:
        raise ValueError("w_s + w_g exceeds 1")
    return ((1.0 - weights.w_s - weights.w_g) * recon
            + weights.w_s * sync + weights.w_g * gan)


# ---------------------------------------------------------------------------
# generation

def _render_patch(model: GeneratorModel, ve: np.ndarray, ae: np.ndarray,
                  want_tape: bool = False):
    ph, pw = model.patch_hw
    z, tape_fc = forward(model.gen_fc, np.concatenate([ve, ae])[None])
    grid = z.reshape(1, 8, ph // 4, pw // 4)
    patch, tape_dc = forward(model.gen_deconv, grid)
    if want_tape:
        return patch[0, 0], (tape_fc, tape_dc)
    return patch[0, 0]


def _render_patch_grad(model, tapes, gpatch: np.ndarray):
    tape_fc, tape_dc = tapes
    ggrid, g_dc = backward(model.gen_deconv, tape_dc, gpatch[None, None])
    gz, g_fc = backward(model.gen_fc, tape_fc, ggrid.reshape(1, -1))
    gcat = gz[0]
    d = gcat.size // 2
    return gcat[:d], gcat[d:], g_dc, g_fc


def generate(model: GeneratorModel, cached: VideoClip, audio: AudioWaveform,
             rect: tuple, fps: float | None = None) -> VideoClip:
    """Fill lip motion into cached frames, driven by the audio.

    Every output frame is a copy of a cached frame (held at the last one
    when the audio outlasts the cache) whose mouth rectangle is replaced by
    the deconv head's render; everything outside the rectangle is untouched.
    """
    if cached is None or cached.frames.shape[0] == 0:
        raise MissingReferenceError("no cached clip to generate from")
    fps = cached.fps if fps is None else fps
    r0, c0, r1, c1 = rect
    if (r1 - r0, c1 - c0) != model.patch_hw:
        raise ValueError(f"rect {rect} does not match patch {model.patch_hw}")
    t_out = int(round(audio.duration * fps))
    n = int(round(audio.sample_rate / fps))
    frames = cached.frames.astype(np.float64)
    out = []
    for t in range(t_out):
        base = frames[min(t, frames.shape[0] - 1)].copy()
        cond = base.copy()
        cond[r0:r1, c0:c1] = 0.0
        ve = _embed_video(model, cond)
        ae = _embed_audio(model, frame_window(audio, t, fps), n)
        patch = np.clip(_render_patch(model, ve, ae), 0.0, model.peak)
        base[r0:r1, c0:c1] = patch
        out.append(base)
    return VideoClip(np.stack(out).astype(np.float32), fps, cached.peak)


def mouth_openness_proxy(frames: np.ndarray, rect: tuple, peak: float = 1.0) -> np.ndarray:
    """Per-frame mean darkness of the mouth rectangle (diagnostic: open
    mouths render dark against the bright face)."""
    r0, c0, r1, c1 = rect
    fr = np.asarray(frames, dtype=np.float64)
    return (peak - fr[:, r0:r1, c0:c1]).mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# training

def _add_scaled(acc: dict, prefix: str, grads: dict, scale: float) -> None:
    for k, v in grads.items():
        key = f"{prefix}/{k}"
        acc[key] = acc.get(key, 0.0) + scale * v


def train_generator(model: GeneratorModel, clips_with_scenes, weights=None,
                    lr: float = 1e-3, epochs: int = 200, seed: int = 0,
                    frames_per_step: int = 6) -> GeneratorModel:
    """Offline training: contrastive sync warm-up for the processors, then
    alternating discriminator/generator steps on the composite loss.

    clips_with_scenes: list of (AudiovisualClip, SceneParams). The scene
    provides the mouth rectangle and makes the lips ground truth.
    """
    from .audio_codec import clip_grad_norm
    from .video_codec import AdamState
    if not clips_with_scenes:
        raise ValueError("empty training set")
    weights = weights or GenLossWeights()
    if lr == 0:
        return model
    if lr < 0:
        raise ValueError("lr must be >= 0")
    rng = make_rng(seed, TAG_TRAIN, 5)
    sync_epochs = min(60, max(1, epochs // 4))
    gan_epochs = epochs - sync_epochs
    adam_sync = AdamState()
    adam_gen = AdamState()
    adam_disc = AdamState()
    prepared = []
    for clip, scene in clips_with_scenes:
        frames = clip.video.frames.astype(np.float64)
        rect = mouth_rect(scene, frames.shape[1:], model.patch_hw)
        prepared.append((frames, clip.audio, rect, clip.video.fps))

    # phase 1: contrastive sync expert on real frames
    for ep in range(sync_epochs):
        losses = []
        for ci in rng.permutation(len(prepared)):
            frames, audio, rect, fps = prepared[ci]
            n = int(round(audio.sample_rate / fps))
            grads: dict = {}
            loss = 0.0
            ts = rng.choice(frames.shape[0], size=min(frames_per_step, frames.shape[0]),
                            replace=False)
            for t in ts:
                t_neg = int(rng.integers(0, frames.shape[0]))
                if t_neg == t:
                    t_neg = (t_neg + frames.shape[0] // 2) % frames.shape[0]
                ve, vt = _embed_video(model, frames[t], want_tape=True)
                ae, at = _embed_audio(model, frame_window(audio, t, fps), n,
                                      want_tape=True)
                an, ant = _embed_audio(model, frame_window(audio, t_neg, fps), n,
                                       want_tape=True)
                p_pos, gv_p, ga_p = _p_sync_grad(ve, ae, weights.kappa)
                p_neg, gv_n, ga_n = _p_sync_grad(ve, an, weights.kappa)
                # -ln clamp(p_pos) - ln clamp(1 - p_neg)
                cp = np.clip(p_pos, weights.kappa_p, 1.0)
                cn = np.clip(1.0 - p_neg, weights.kappa_p, 1.0)
                loss += -np.log(cp) - np.log(cn)
                gv = np.zeros_like(ve)
                ga = np.zeros_like(ae)
                gan_ = np.zeros_like(an)
                if weights.kappa_p < p_pos < 1.0:
                    gv += -gv_p / cp
                    ga += -ga_p / cp
                if weights.kappa_p < 1.0 - p_neg < 1.0:
                    gv += gv_n / cn
                    gan_ += ga_n / cn
                _, gvc, gvd = _embed_video_grad(model, vt, gv)
                _add_scaled(grads, "vconv", gvc, 1.0)
                _add_scaled(grads, "vdense", gvd, 1.0)
                gac, gad = _embed_audio_grad(model, at, ga)
                _add_scaled(grads, "aconv", gac, 1.0)
                _add_scaled(grads, "adense", gad, 1.0)
                gac, gad = _embed_audio_grad(model, ant, gan_)
                _add_scaled(grads, "aconv", gac, 1.0)
                _add_scaled(grads, "adense", gad, 1.0)
            grads = {k: v / len(ts) for k, v in grads.items()}
            sgd_step(model.params, adam_sync.direction(clip_grad_norm(grads)), lr)
            losses.append(loss / len(ts))
        model.history.append(("sync", float(np.mean(losses))))

    # phase 2: alternating GAN; processors frozen (the sync expert must stay
    # an honest judge, so only the head and discriminator move)
    gen_groups = ("gen_fc", "gen_deconv")
    disc_groups = ("disc_conv", "disc_fc")
    for ep in range(gan_epochs):
        # cosine decay: the L1 term has sign gradients, so late steps must
        # shrink or the patch just oscillates around the target
        lr_t = lr * (0.5 * (1.0 + np.cos(np.pi * ep / max(1, gan_epochs)))) + 0.02 * lr
        g_losses, d_acc, r_losses = [], [], []
        for ci in rng.permutation(len(prepared)):
            frames, audio, rect, fps = prepared[ci]
            n = int(round(audio.sample_rate / fps))
            r0, c0, r1, c1 = rect
            ts = rng.choice(frames.shape[0], size=min(frames_per_step, frames.shape[0]),
                            replace=False)

            # one D step and one G step per frame: batch-averaged gradients
            # let the head settle on a static mean mouth, per-frame steps
            # force it to track each target through the audio embedding
            correct = 0
            loss_sum = 0.0
            rec_sum = 0.0
            w_r = 1.0 - weights.w_s - weights.w_g
            for t in ts:
                cond = frames[t].copy()
                cond[r0:r1, c0:c1] = 0.0
                ve = _embed_video(model, cond)
                ae = _embed_audio(model, frame_window(audio, t, fps), n)
                real = frames[t][r0:r1, c0:c1]

                # discriminator: real patch up, generated patch down
                d_grads: dict = {}
                fake = np.clip(_render_patch(model, ve, ae), 0.0, model.peak)
                for patch, label in ((real, 1.0), (fake, 0.0)):
                    d, tapes = _disc_forward(model, patch, want_tape=True)
                    dc = np.clip(d, 1e-6, 1 - 1e-6)
                    # minimize -[label*ln d + (1-label)*ln(1-d)]
                    gd = -(label / dc) + (1.0 - label) / (1.0 - dc)
                    _, g_conv, g_fc = _disc_backward(model, tapes, gd)
                    _add_scaled(d_grads, "disc_conv", g_conv, 0.5)
                    _add_scaled(d_grads, "disc_fc", g_fc, 0.5)
                    correct += int((d > 0.5) == (label == 1.0))
                sgd_step(model.params,
                         adam_disc.direction(clip_grad_norm(d_grads)), lr_t)

                # generator on the composite loss
                g_grads = {}
                patch, tapes = _render_patch(model, ve, ae, want_tape=True)
                gpatch = np.zeros_like(patch)
                # recon: frames differ only inside the rect
                l_rec = float(np.abs(patch - real).sum())
                gpatch += w_r * np.sign(patch - real)
                # sync: score the full generated frame against the audio
                gen_frame = frames[t].copy()
                gen_frame[r0:r1, c0:c1] = patch
                vg, vgt = _embed_video(model, gen_frame, want_tape=True)
                p, gv_p, _ = _p_sync_grad(vg, ae, weights.kappa)
                cp = np.clip(p, weights.kappa_p, 1.0)
                l_sync = -np.log(cp)
                if weights.kappa_p < p < 1.0:
                    gframe, _, _ = _embed_video_grad(model, vgt, -gv_p / cp)
                    gpatch += weights.w_s * gframe[r0:r1, c0:c1]
                # gan: push D(fake) up
                d, dtapes = _disc_forward(model, patch, want_tape=True)
                dc = np.clip(d, 1e-6, 1 - 1e-6)
                l_gan = np.log(1.0 - dc)
                gpatch_d, _, _ = _disc_backward(model, dtapes, -1.0 / (1.0 - dc))
                gpatch += weights.w_g * gpatch_d
                loss_sum += w_r * l_rec + weights.w_s * l_sync + weights.w_g * l_gan
                rec_sum += l_rec
                _, _, g_dc, g_fc = _render_patch_grad(model, tapes, gpatch)
                _add_scaled(g_grads, "gen_deconv", g_dc, 1.0)
                _add_scaled(g_grads, "gen_fc", g_fc, 1.0)
                sgd_step(model.params,
                         adam_gen.direction(clip_grad_norm(g_grads)), lr_t)
            d_acc.append(correct / (2 * len(ts)))
            g_losses.append(loss_sum / len(ts))
            r_losses.append(rec_sum / len(ts))
        model.history.append(("gan", float(np.mean(g_losses)), float(np.mean(d_acc)),
                              float(np.mean(r_losses))))
    return model