"""Simulated flat-fading channel with AWGN and coherent equalization.

Real symbol streams are packed into complex baseband pairs scaled by 1/sqrt(2)
so unit average real power maps to unit complex power; the configured SNR then
holds exactly in expectation. Fading is blockwise Rayleigh with E[|h|^2] = 1,
and the receiver applies zero-forcing with perfect channel knowledge.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .rng import TAG_CHANNEL, make_rng

FADING_MODES = ("rayleigh", "awgn_only", "ideal")
DEEP_FADE_GAIN_CAP = 1e6


@dataclass
class ChannelConfig:
    snr_db: float = 10.0
    fading: str = "rayleigh"
    block_size: int = 1024  # complex symbols per fading realization
    seed: int = 0

    def __post_init__(self):
        if self.fading not in FADING_MODES:
            raise ValueError(f"fading must be one of {FADING_MODES}, got {self.fading!r}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")

    @property
    def noise_variance(self) -> float:
        if self.fading == "ideal":
            return 0.0
        return 10.0 ** (-self.snr_db / 10.0)


@dataclass
class ChannelRealization:
    h_blocks: np.ndarray      # complex coefficient per block
    noise_variance: float
    received: np.ndarray      # complex symbols after fading + noise
    n_real: int               # length of the original real stream
    block_size: int

    @property
    def deep_fade(self) -> np.ndarray:
        return np.abs(self.h_blocks) < 1e-6


def _pack(symbols: np.ndarray) -> np.ndarray:
    s = np.asarray(symbols, dtype=np.float64)
    if s.size % 2:
        s = np.concatenate([s, [0.0]])
    return (s[0::2] + 1j * s[1::2]) / np.sqrt(2.0)


def _unpack(cplx: np.ndarray, n_real: int) -> np.ndarray:
    s = np.empty(2 * cplx.size)
    scaled = cplx * np.sqrt(2.0)
    s[0::2] = scaled.real
    s[1::2] = scaled.imag
    return s[:n_real]


def transmit(symbols: np.ndarray, cfg: ChannelConfig) -> ChannelRealization:
    """Send a power-normalized real symbol stream through the channel."""
    s = np.asarray(symbols, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty symbol stream")
    power = float(np.mean(s * s))
    if cfg.fading != "ideal" and abs(power - 1.0) > 1e-3:
        raise ContractViolation(f"input power {power:.6f} is not 1 +/- 1e-3")

    c = _pack(s)
    n_blocks = -(-c.size // cfg.block_size)
    if cfg.fading == "ideal":
        h = np.ones(n_blocks, dtype=np.complex128)
        received = c.copy()
        return ChannelRealization(h, 0.0, received, s.size, cfg.block_size)

    rng = make_rng(cfg.seed, TAG_CHANNEL)
    if cfg.fading == "rayleigh":
        g = rng.standard_normal((n_blocks, 2))
        h = (g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0)
    else:
        h = np.ones(n_blocks, dtype=np.complex128)
    sigma2 = cfg.noise_variance
    noise = np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(c.size) + 1j * rng.standard_normal(c.size)
    )
    h_per_symbol = np.repeat(h, cfg.block_size)[: c.size]
    received = h_per_symbol * c + noise
    return ChannelRealization(h, sigma2, received, s.size, cfg.block_size)


def equalize(real: ChannelRealization) -> np.ndarray:
    """Zero-forcing with perfect CSI; deep fades are capped at gain 1e6."""
    h = np.repeat(real.h_blocks, real.block_size)[: real.received.size]
    mag2 = np.abs(h) ** 2
    gain = np.conj(h) / np.maximum(mag2, 1e-300)
    cap = np.abs(gain) > DEEP_FADE_GAIN_CAP
    if np.any(cap):
        gain = np.where(cap, gain / np.abs(gain) * DEEP_FADE_GAIN_CAP, gain)
    return _unpack(real.received * gain, real.n_real)


def snr_sweep_points(lo_db: float, hi_db: float, n: int, *,
                     fading: str = "rayleigh", block_size: int = 1024,
                     seed: int = 0) -> list:
    """Evenly spaced SNR grid as channel configs with independent seeds."""
    if n < 2:
        raise ValueError(f"need at least 2 sweep points, got {n}")
    if not lo_db < hi_db:
        raise ValueError(f"need lo < hi, got [{lo_db}, {hi_db}]")
    out = []
    for i, snr in enumerate(np.linspace(lo_db, hi_db, n)):
        child = int(np.random.SeedSequence([int(seed), 5, i]).generate_state(1)[0])
        out.append(ChannelConfig(float(snr), fading, block_size, child))
    return out
