"""Learned joint source-channel audio codec.

A strided conv stack extracts waveform features, a 1x1 conv aggregates them
into a compact symbol stream (8x fewer symbols than samples), and the decoder
mirrors the stack with transposed convs. The printed reconstruction loss is
the squared-error ratio sum((a - a_hat)^2) / sum(a^2), kept verbatim even
though it is a squared quantity.

Online adaptation touches only the aggregator and decomposer; the outer
extractor and synthesizer stay frozen once pretrained.
"""

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig, equalize, transmit
from .errors import TrainingError, ZeroReferenceError
from .media import AudioWaveform
from .nn import (
    Conv1d,
    Deconv2d,
    LossMonitor,
    Net,
    ParameterSet,
    PointwiseConv,
    Tanh,
    backward,
    forward,
    power_normalize,
    power_normalize_grad,
    sgd_step,
)
from .rng import TAG_INIT, TAG_TRAIN, make_rng

TIME_REDUCTION = 16   # total conv stride over the sample axis
FEATURES_PER_CHUNK = 2  # aggregated channels, so compression is 16/2 = 8x
MIN_INPUT_SAMPLES = 320


@dataclass
class AudioSemantics:
    """Power-normalized symbol stream plus the layout needed to invert it."""

    symbols: np.ndarray          # flat, chunk-major then feature
    frame_layout: tuple          # (chunks, features per chunk)
    orig_len: int                # sample count the decoder must emit

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.float64)
        if not np.all(np.isfinite(self.symbols)):
            raise ValueError("symbols contain non-finite values")
        chunks, feats = self.frame_layout
        if self.symbols.size != chunks * feats:
            raise ValueError(
                f"{self.symbols.size} symbols do not fill layout {self.frame_layout}"
            )


class AudioCodecModel:
    """Extractor -> aggregator (encoder) and decomposer -> synthesizer (decoder)."""

    def __init__(self, seed: int = 0, widths=(8, 16, 24, 32)):
        rng = make_rng(seed, TAG_INIT, 1)
        w1, w2, w3, w4 = widths
        self.widths = tuple(widths)
        ext = []
        c_prev = 1
        for i, c in enumerate(widths):
            ext.append((f"conv{i}", Conv1d(c_prev, c, 9, rng, stride=2)))
            ext.append((f"act{i}", Tanh()))
            c_prev = c
        self.extractor = Net(ext)
        self.aggregator = Net([("mix", PointwiseConv(w4, FEATURES_PER_CHUNK, rng))])
        self.decomposer = Net([("unmix", PointwiseConv(FEATURES_PER_CHUNK, w4, rng))])
        syn = []
        ups = [w3, w2, w1, 1]
        c_prev = w4
        for i, c in enumerate(ups):
            syn.append((f"deconv{i}", Deconv2d(c_prev, c, (1, 9), rng, stride=(1, 2))))
            if i < len(ups) - 1:
                syn.append((f"act{i}", Tanh()))
            c_prev = c
        self.synthesizer = Net(syn)
        self.params = ParameterSet(
            {
                "extractor": self.extractor,
                "aggregator": self.aggregator,
                "decomposer": self.decomposer,
                "synthesizer": self.synthesizer,
            },
            trainable={"aggregator", "decomposer"},
        )
        self.history: list = []

    def groups(self) -> dict:
        return self.params.groups

    def named_params(self) -> dict:
        return self.params.named()


def _encode_raw(model: AudioCodecModel, samples: np.ndarray):
    x = samples[None, None, :]
    h, tape_ext = forward(model.extractor, x)
    feats, tape_agg = forward(model.aggregator, h)  # (1, F, L)
    flat = feats[0].T.reshape(-1)  # chunk-major
    sym, scale = power_normalize(flat)
    return sym, scale, feats.shape[2], (tape_ext, tape_agg)


def audio_encode(model: AudioCodecModel, audio: AudioWaveform) -> AudioSemantics:
    """Waveform -> power-normalized symbol stream (8x compression)."""
    if audio.n_samples < MIN_INPUT_SAMPLES:
        raise ValueError(
            f"need at least {MIN_INPUT_SAMPLES} samples, got {audio.n_samples}"
        )
    samples = audio.samples.astype(np.float64)
    sym, _, chunks, _ = _encode_raw(model, samples)
    return AudioSemantics(sym, (chunks, FEATURES_PER_CHUNK), audio.n_samples)


def _decode_raw(model: AudioCodecModel, symbols: np.ndarray, chunks: int):
    z = symbols.reshape(chunks, FEATURES_PER_CHUNK).T[None]  # (1, F, L)
    h, tape_dec = forward(model.decomposer, z)
    h4 = h[:, :, None, :]
    y, tape_syn = forward(model.synthesizer, h4)
    return y[0, 0, 0], (tape_dec, tape_syn)


def audio_decode(model: AudioCodecModel, sem: AudioSemantics,
                 sample_rate: float = 8000.0) -> AudioWaveform:
    """Symbols -> waveform of the original length, clamped to [-1, 1]."""
    chunks, feats = sem.frame_layout
    if feats != FEATURES_PER_CHUNK:
        raise ValueError(f"layout {sem.frame_layout} does not match the model")
    if sem.orig_len > chunks * TIME_REDUCTION:
        raise ValueError("layout too short for the declared sample count")
    raw, _ = _decode_raw(model, sem.symbols, chunks)
    out = np.clip(raw[: sem.orig_len], -1.0, 1.0)
    return AudioWaveform(out.astype(np.float32), sample_rate)


def nrmse(ref, test) -> float:
    """sum((a - a_hat)^2) / sum(a^2), exactly as printed in the loss."""
    a = ref.samples.astype(np.float64) if isinstance(ref, AudioWaveform) else np.asarray(ref, dtype=np.float64)
    b = test.samples.astype(np.float64) if isinstance(test, AudioWaveform) else np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    denom = float(np.sum(a * a))
    if denom == 0.0:
        raise ZeroReferenceError("reference signal has zero energy")
    return float(np.sum((a - b) ** 2) / denom)


def _roundtrip_step(model: AudioCodecModel, samples: np.ndarray,
                    cfg: ChannelConfig | None):
    """Forward through encode -> channel -> decode; returns loss and grads.

    Zero-forcing with perfect channel knowledge makes the equalized stream
    the sent stream plus independent noise, so the channel backward is the
    identity map.
    """
    n = samples.size
    sym, scale, chunks, (tape_ext, tape_agg) = _encode_raw(model, samples)
    if cfg is not None:
        rx = equalize(transmit(sym, cfg))
    else:
        rx = sym
    recon_full, (tape_dec, tape_syn) = _decode_raw(model, rx, chunks)
    recon = recon_full[:n]
    denom = float(np.sum(samples * samples))
    loss = float(np.sum((recon - samples) ** 2) / denom)

    g = np.zeros_like(recon_full)
    g[:n] = 2.0 * (recon - samples) / denom
    gx, grads_syn = backward(model.synthesizer, tape_syn, g[None, None, None, :])
    gx, grads_dec = backward(model.decomposer, tape_dec, gx[:, :, 0, :])
    gflat = gx[0].T.reshape(-1)
    gsym = power_normalize_grad(sym, scale, gflat)
    gfeats = gsym.reshape(chunks, FEATURES_PER_CHUNK).T[None]
    gx, grads_agg = backward(model.aggregator, tape_agg, gfeats)
    _, grads_ext = backward(model.extractor, tape_ext, gx)
    grads = {}
    for gname, gd in (
        ("extractor", grads_ext),
        ("aggregator", grads_agg),
        ("decomposer", grads_dec),
        ("synthesizer", grads_syn),
    ):
        for k, v in gd.items():
            grads[f"{gname}/{k}"] = v
    return loss, grads


def _crop(samples: np.ndarray, size: int, rng) -> np.ndarray:
    if samples.size <= size:
        return samples
    start = int(rng.integers(0, samples.size - size + 1))
    return samples[start : start + size]


def clip_grad_norm(grads: dict, max_norm: float = 5.0) -> dict:
    """Rescale so the global L2 norm stays under max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        f = max_norm / total
        return {k: v * f for k, v in grads.items()}
    return grads


def _cosine_lr(lr0: float, epoch: int, epochs: int) -> float:
    return lr0 * (0.5 * (1 + np.cos(np.pi * epoch / epochs))) ** 0.7 + 0.002


def pretrain_audio(model: AudioCodecModel, clips, lr: float = 0.06,
                   epochs: int = 150, seed: int = 0, crop: int = 2048) -> AudioCodecModel:
    """Offline stage: trains every group on clean round-trips.

    Plain SGD with a cosine-decayed rate and global gradient clipping; the
    tanh stacks need the decay to settle below 1% reconstruction loss.
    """
    if not clips:
        raise ValueError("empty training set")
    rng = make_rng(seed, TAG_TRAIN, 1)
    allp = ParameterSet(model.groups(), trainable=set(model.groups()))
    for ep in range(epochs):
        step_lr = _cosine_lr(lr, ep, epochs)
        losses = []
        for idx in rng.permutation(len(clips)):
            samples = clips[idx].audio.samples.astype(np.float64)
            seg = _crop(samples, crop, rng)
            loss, grads = _roundtrip_step(model, seg, None)
            sgd_step(allp, clip_grad_norm(grads), step_lr)
            losses.append(loss)
        model.history.append(("pretrain", float(np.mean(losses))))
    return model


def fine_tune_audio(model: AudioCodecModel, clips, cfg: ChannelConfig,
                    lr: float = 0.004, epochs: int = 30,
                    snr_range: tuple = (0.0, 20.0), seed: int = 0,
                    crop: int = 2048, stop_tol: float | None = None,
                    stop_window: int = 10) -> AudioCodecModel:
    """Online stage: adapts aggregator and decomposer through the channel.

    The channel SNR is drawn uniformly from snr_range each step; the outer
    extractor/synthesizer stay bitwise frozen. With stop_tol set, the loop
    ends early once the smoothed loss stops improving by that much per
    stop_window epochs and raises TrainingError if it blows up instead.
    """
    if not clips:
        raise ValueError("empty training set")
    rng = make_rng(seed, TAG_TRAIN, 2)
    monitor = LossMonitor(stop_tol, stop_window)
    for ep in range(epochs):
        losses = []
        for idx in rng.permutation(len(clips)):
            samples = clips[idx].audio.samples.astype(np.float64)
            seg = _crop(samples, crop, rng)
            snr = float(rng.uniform(*snr_range))
            step_cfg = ChannelConfig(snr, cfg.fading, cfg.block_size,
                                     int(rng.integers(0, 2**31 - 1)))
            loss, grads = _roundtrip_step(model, seg, step_cfg)
            grads = {k: v for k, v in grads.items()
                     if k.split("/")[0] in model.params.trainable}
            sgd_step(model.params, clip_grad_norm(grads), lr)
            losses.append(loss)
        ep_loss = float(np.mean(losses))
        model.history.append(("fine_tune", ep_loss))
        if stop_tol is not None:
            verdict = monitor.update(ep_loss)
            if verdict == "diverged":
                raise TrainingError(
                    f"audio fine-tune diverged at epoch {ep}: loss {ep_loss:.4g} "
                    f"vs initial {monitor.losses[0]:.4g}")
            if verdict == "converged":
                break
    return model
