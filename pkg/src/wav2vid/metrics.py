"""Quality metrics: PSNR, MS-SSIM, Frechet feature distance, segmental SNR.

The Frechet distance runs over a small fixed-weight conv feature net (a
desk-scale stand-in for a large pretrained embedding); the distance formula
itself is exact, with the matrix square root computed in symmetric form.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ZeroReferenceError
from .media import AudioWaveform, VideoClip
from .nn import Conv2d, Dense, Net, Relu, forward

PSNR_CAP_DB = 100.0
FEATURE_NET_SEED = 0xF1D0
_MSSSIM_WEIGHTS = (0.2, 0.3, 0.5)


def _frames(v) -> tuple:
    if isinstance(v, VideoClip):
        return v.frames.astype(np.float64), float(v.peak)
    a = np.asarray(v, dtype=np.float64)
    return a, 1.0


def _samples(a) -> np.ndarray:
    if isinstance(a, AudioWaveform):
        return a.samples.astype(np.float64)
    return np.asarray(a, dtype=np.float64)


def psnr(ref, test, peak: float | None = None) -> float:
    """10*log10(peak^2 / MSE); zero error is capped at 100 dB."""
    va, pa = _frames(ref)
    vb, _ = _frames(test)
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch {va.shape} vs {vb.shape}")
    pk = peak if peak is not None else pa
    mse = float(np.mean((va - vb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(pk * pk / mse), PSNR_CAP_DB)


def _gauss_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _filter_valid(imgs: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering of (T, H, W) along both spatial axes."""
    w = sliding_window_view(imgs, k.size, axis=1)
    imgs = np.einsum("thwu,u->thw", w, k, optimize=True)
    w = sliding_window_view(imgs, k.size, axis=2)
    return np.einsum("thwu,u->thw", w, k, optimize=True)


def _downsample2(imgs: np.ndarray) -> np.ndarray:
    t, h, w = imgs.shape
    h2, w2 = h - h % 2, w - w % 2
    x = imgs[:, :h2, :w2]
    return 0.25 * (x[:, 0::2, 0::2] + x[:, 1::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 1::2])


def ms_ssim(ref, test, scales: int = 3, peak: float | None = None) -> float:
    """Multi-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Contrast-structure terms are accumulated per scale (clamped at 0) and the
    luminance term enters at the coarsest scale; frames are averaged last.
    """
    va, pa = _frames(ref)
    vb, _ = _frames(test)
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch {va.shape} vs {vb.shape}")
    if not 1 <= scales <= len(_MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(_MSSSIM_WEIGHTS)}]")
    if min(va.shape[1], va.shape[2]) / 2 ** (scales - 1) < 11:
        raise ValueError("frames too small for the requested scale count")
    pk = peak if peak is not None else pa
    c1 = (0.01 * pk) ** 2
    c2 = (0.03 * pk) ** 2
    w = np.array(_MSSSIM_WEIGHTS[-scales:], dtype=np.float64)
    w = w / w.sum()
    k = _gauss_kernel()

    per_frame = np.ones(va.shape[0])
    x, y = va, vb
    for s in range(scales):
        mx = _filter_valid(x, k)
        my = _filter_valid(y, k)
        vx = _filter_valid(x * x, k) - mx * mx
        vy = _filter_valid(y * y, k) - my * my
        vxy = _filter_valid(x * y, k) - mx * my
        cs = (2 * vxy + c2) / (vx + vy + c2)
        cs_mean = np.maximum(cs, 0.0).mean(axis=(1, 2))
        per_frame = per_frame * cs_mean ** w[s]
        if s == scales - 1:
            lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
            per_frame = per_frame * np.maximum(lum.mean(axis=(1, 2)), 0.0) ** w[s]
        else:
            x, y = _downsample2(x), _downsample2(y)
    return float(np.clip(per_frame.mean(), 0.0, 1.0))


class FeatureStats:
    """Mean and regularized covariance of per-frame feature vectors."""

    def __init__(self, mu: np.ndarray, sigma: np.ndarray, n: int):
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match mean length")
        if not np.allclose(sigma, sigma.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if n < 2:
            raise ValueError("need at least 2 samples")
        self.mu = mu
        self.sigma = (sigma + sigma.T) / 2.0
        self.n = int(n)


class ProxyFeatureNet:
    """Fixed-weight conv embedding of frames; never trained."""

    def __init__(self, d_f: int = 8, seed: int = FEATURE_NET_SEED):
        rng = np.random.default_rng(seed)
        self.d_f = d_f
        self.conv = Net([
            ("c1", Conv2d(1, 4, 3, rng, stride=2)),
            ("r1", Relu()),
            ("c2", Conv2d(4, 8, 3, rng, stride=2)),
            ("r2", Relu()),
        ])
        self.head = Net([("fc", Dense(8, d_f, rng))])

    def features(self, frames: np.ndarray) -> np.ndarray:
        """(T, H, W) intensities -> (T, d_f) feature matrix."""
        x = np.asarray(frames, dtype=np.float64)[:, None, :, :]
        y, _ = forward(self.conv, x)
        pooled = y.mean(axis=(2, 3))
        out, _ = forward(self.head, pooled)
        return out


def stats_from_features(feats: np.ndarray) -> FeatureStats:
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need a (n >= 2, d_f) feature matrix")
    mu = f.mean(axis=0)
    cov = np.cov(f, rowvar=False, ddof=1).reshape(f.shape[1], f.shape[1])
    cov = cov + 1e-6 * np.eye(f.shape[1])
    return FeatureStats(mu, cov, f.shape[0])


def feature_stats(net: ProxyFeatureNet, video) -> FeatureStats:
    frames, _ = _frames(video)
    if frames.shape[0] < 2:
        raise ValueError("need at least 2 frames for feature statistics")
    return stats_from_features(net.features(frames))


def _psd_sqrt(sym: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh((sym + sym.T) / 2.0)
    if vals.min() < -1e-8:
        raise NumericalError(f"{what}: eigenvalue {vals.min():.3e} below -1e-8")
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(r: FeatureStats, g: FeatureStats) -> float:
    """||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)).

    The cross term uses the symmetric form S_r^(1/2) S_g S_r^(1/2) so a plain
    symmetric eigendecomposition suffices.
    """
    if r.mu.size != g.mu.size:
        raise ValueError("feature dimensions differ")
    root_r = _psd_sqrt(r.sigma, "reference covariance")
    inner = root_r @ g.sigma @ root_r
    vals, _ = np.linalg.eigh((inner + inner.T) / 2.0)
    if vals.min() < -1e-8:
        raise NumericalError(f"cross covariance eigenvalue {vals.min():.3e} below -1e-8")
    tr_cross = float(np.sqrt(np.maximum(vals, 0.0)).sum())
    d2 = float(np.sum((r.mu - g.mu) ** 2))
    val = d2 + float(np.trace(r.sigma) + np.trace(g.sigma)) - 2.0 * tr_cross
    return max(val, 0.0)


def segmental_snr(ref, test, segment: int = 320) -> float:
    """Mean per-segment 10*log10(sum a^2 / sum (a - a_hat)^2), clamped to
    [-10, 35] dB; zero-energy segments are skipped."""
    a = _samples(ref)
    b = _samples(test)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    if segment < 1:
        raise ValueError("segment must be >= 1")
    vals = []
    for start in range(0, a.size, segment):
        sa = a[start : start + segment]
        sb = b[start : start + segment]
        energy = float(np.sum(sa * sa))
        if energy == 0.0:
            continue
        err = float(np.sum((sa - sb) ** 2))
        if err == 0.0:
            vals.append(35.0)
        else:
            vals.append(float(np.clip(10.0 * np.log10(energy / err), -10.0, 35.0)))
    if not vals:
        raise ZeroReferenceError("all segments have zero reference energy")
    return float(np.mean(vals))
