"""Learned contextual video codec with rate-adaptive symbol mapping.

Per frame: a conv extractor produces a feature map, block matching against
the previous frame yields a motion field, and the previous features warped
by that motion (plus a residual conv refiner) form the temporal context.
Quantized features and motion get a per-frame symbol budget from a
discretized-Laplace entropy model (k = ceil(eta * NLL_bits)), then a learned
pointwise projection emits exactly that many power-normalized symbols; the
receiver inverts the projection, rebuilds context from its own previous
decode, and a deconv synthesizer renders the frame.

Rate uses symbol counts, not an actual arithmetic coder; the budget is what
the downstream accounting consumes.
"""

from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig, equalize, transmit
from .errors import FramingError, TrainingError
from .media import VideoClip
from .nn import (
    Conv2d,
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

DOWNSAMPLE = 4       # pixel -> feature resolution
FEATURE_CHANNELS = 8
MOTION_BLOCK = 8     # pixels per motion block
SEARCH_RADIUS = 2
Q_STEP = 16.0        # quantizer: round-half-even(Q_STEP * value)
MIN_PROB = 2.0 ** -16
DEFAULT_ETA_Y = 0.5
DEFAULT_ETA_X = 0.5
DEFAULT_LAMBDA = 32.0


# ---------------------------------------------------------------------------
# motion

def estimate_motion(cur: np.ndarray, prev: np.ndarray, block: int = MOTION_BLOCK,
                    search_radius: int = SEARCH_RADIUS) -> np.ndarray:
    """Per-block displacement d = (dy, dx) minimizing SAD of cur[p] vs
    prev[p - d]; reference samples clamp to the frame edge. Ties prefer the
    smallest |d|, then lexicographic (dy, dx). Returns (2, H/block, W/block)."""
    cur = np.asarray(cur, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if cur.shape != prev.shape:
        raise ValueError(f"frame shapes differ: {cur.shape} vs {prev.shape}")
    h, w = cur.shape
    if h % block or w % block:
        raise ValueError(f"block {block} does not divide frame {h}x{w}")
    nby, nbx = h // block, w // block
    field = np.zeros((2, nby, nbx), dtype=np.int64)
    if search_radius == 0:
        return field
    rows = np.arange(h)
    cols = np.arange(w)
    cands = []
    for dy in range(-search_radius, search_radius + 1):
        for dx in range(-search_radius, search_radius + 1):
            cands.append((dy * dy + dx * dx, dy, dx))
    cands.sort()  # smallest magnitude first, then (dy, dx)
    best = np.full((nby, nbx), np.inf)
    for _, dy, dx in cands:
        src = prev[np.clip(rows - dy, 0, h - 1)][:, np.clip(cols - dx, 0, w - 1)]
        diff = np.abs(cur - src)
        sad = diff.reshape(nby, block, nbx, block).sum(axis=(1, 3))
        win = sad < best - 1e-12  # strict: earlier (smaller) candidates keep ties
        best = np.where(win, sad, best)
        field[0][win] = dy
        field[1][win] = dx
    return field


def warp_features(y_prev: np.ndarray, motion: np.ndarray,
                  downsample: int = DOWNSAMPLE, block: int = MOTION_BLOCK):
    """Nearest-neighbor warp of a feature map by a pixel motion field.

    Returns (warped, (src_i, src_j)) where the indices implement the adjoint.
    """
    c, hf, wf = y_prev.shape
    cells = block // downsample
    ii, jj = np.mgrid[0:hf, 0:wf]
    sy = np.rint(motion[0][ii // cells, jj // cells] / downsample).astype(np.int64)
    sx = np.rint(motion[1][ii // cells, jj // cells] / downsample).astype(np.int64)
    src_i = np.clip(ii - sy, 0, hf - 1)
    src_j = np.clip(jj - sx, 0, wf - 1)
    return y_prev[:, src_i, src_j], (src_i, src_j)


def warp_features_grad(g: np.ndarray, src: tuple, shape: tuple) -> np.ndarray:
    """Adjoint of warp_features: scatter-add gradients to source cells."""
    src_i, src_j = src
    out = np.zeros(shape)
    np.add.at(out.transpose(1, 2, 0), (src_i, src_j), g.transpose(1, 2, 0))
    return out


# ---------------------------------------------------------------------------
# entropy model

def quantize(x: np.ndarray, step: float = Q_STEP) -> np.ndarray:
    """Round-half-to-even of step * x; returns integer-valued float array."""
    return np.rint(np.asarray(x, dtype=np.float64) * step)


def _flat_shift_one(q: np.ndarray) -> np.ndarray:
    """Previous element in flat C-order (the causal neighbor); first gets 0."""
    flat = q.reshape(-1)
    out = np.empty_like(flat)
    out[0] = 0.0
    out[1:] = flat[:-1]
    return out.reshape(q.shape)


def laplace_nll_bits(v: np.ndarray, mu: np.ndarray, b: np.ndarray):
    """NLL in bits of integer values under a discretized Laplace(mu, b).

    P(v) = F(v + 0.5) - F(v - 0.5), floored at 2^-16 so no symbol is ever
    infinitely surprising. Returns (nll_sum, dnll/dmu, dnll/db) — analytic
    gradients of the summed NLL.
    """
    b = np.maximum(b, 1e-12)
    zp = (v + 0.5 - mu) / b
    zm = (v - 0.5 - mu) / b

    def cdf(z):
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)),
                        1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))

    def pdf_z(z):  # density times b: exp(-|z|)/2
        return 0.5 * np.exp(-np.abs(z))

    p = cdf(zp) - cdf(zm)
    floored = p < MIN_PROB
    pf = np.maximum(p, MIN_PROB)
    nll = float(np.sum(-np.log2(pf)))
    dnll_dp = np.where(floored, 0.0, -1.0 / (pf * np.log(2.0)))
    fp, fm = pdf_z(zp) / b, pdf_z(zm) / b
    dp_dmu = fm - fp
    dp_db = (zm * fm - zp * fp)
    return nll, dnll_dp * dp_dmu, dnll_dp * dp_db


class LaplaceEntropyModel:
    """Conv-predicted (location, scale) per element, causal in flat order.

    The feature branch conditions on (context, broadcast hyperprior, previous
    element); the motion branch on (broadcast hyperprior, previous element).
    Pointwise convs never mix positions, so causality holds by construction.
    """

    def __init__(self, rng, q_step: float = Q_STEP, motion_scale: float = 2.0):
        self.q_step = q_step
        self.motion_scale = motion_scale
        f = FEATURE_CHANNELS
        self.net_y = Net([
            ("p1", PointwiseConv(3 * f, 2 * f, rng)),
            ("a1", Tanh()),
            ("p2", PointwiseConv(2 * f, 2 * f, rng)),
        ])
        self.net_m = Net([
            ("p1", PointwiseConv(4, 8, rng)),
            ("a1", Tanh()),
            ("p2", PointwiseConv(8, 4, rng)),
        ])

    @staticmethod
    def hyperprior(q: np.ndarray) -> np.ndarray:
        """Coarse summary: per-channel mean of the quantized tensor, rounded."""
        return np.rint(q.mean(axis=(1, 2)))

    def _inputs_y(self, y_q, context, z_y):
        f = FEATURE_CHANNELS
        zb = np.broadcast_to(z_y[:, None, None] / self.q_step, y_q.shape)
        prev = _flat_shift_one(y_q) / self.q_step
        return np.concatenate([context, zb, prev], axis=0)[None]

    def _inputs_m(self, m_q, z_m):
        s = self.motion_scale
        zb = np.broadcast_to(z_m[:, None, None] / s, m_q.shape)
        prev = _flat_shift_one(m_q) / s
        return np.concatenate([zb, prev], axis=0)[None]

    def _params_from(self, raw, scale):
        f = raw.shape[1] // 2
        mu = raw[0, :f] * scale
        s_raw = raw[0, f:]
        b = scale * np.log1p(np.exp(-np.abs(s_raw))) + scale * np.maximum(s_raw, 0.0) + 0.1
        return mu, b, s_raw

    def nll_bits_y(self, y_q, context, z_y):
        x = self._inputs_y(y_q, context, z_y)
        raw, _ = forward(self.net_y, x)
        mu, b, _ = self._params_from(raw, self.q_step)
        nll, _, _ = laplace_nll_bits(y_q, mu, b)
        return nll

    def nll_bits_m(self, m_q, z_m):
        x = self._inputs_m(m_q, z_m)
        raw, _ = forward(self.net_m, x)
        mu, b, _ = self._params_from(raw, self.motion_scale)
        nll, _, _ = laplace_nll_bits(m_q, mu, b)
        return nll

    def nll_with_grads(self, which: str, q, *cond):
        """(nll_bits, param grads dict) for one branch; used in training."""
        if which == "y":
            net, scale = self.net_y, self.q_step
            x = self._inputs_y(q, *cond)
        else:
            net, scale = self.net_m, self.motion_scale
            x = self._inputs_m(q, *cond)
        raw, tape = forward(net, x)
        mu, b, s_raw = self._params_from(raw, scale)
        nll, dmu, db = laplace_nll_bits(q, mu, b)
        f = raw.shape[1] // 2
        graw = np.empty_like(raw)
        graw[0, :f] = dmu * scale
        sig = 1.0 / (1.0 + np.exp(-s_raw))
        graw[0, f:] = db * scale * sig
        _, grads = backward(net, tape, graw)
        return nll, grads


class UniformEntropyModel:
    """Fixed uniform conditional over a given alphabet size (testing stub)."""

    def __init__(self, bins: int = 256):
        self.bits = float(np.log2(bins))

    def nll_bits_y(self, y_q, context, z_y):
        return self.bits * y_q.size

    def nll_bits_m(self, m_q, z_m):
        return self.bits * m_q.size


class DeterministicEntropyModel:
    """Assigns probability 1 to whatever was realized (testing stub)."""

    def nll_bits_y(self, y_q, context, z_y):
        return 0.0

    def nll_bits_m(self, m_q, z_m):
        return 0.0


@dataclass
class RateAllocation:
    nll_y_bits: float
    nll_m_bits: float
    eta_y: float
    eta_x: float
    k_y: int
    k_m: int

    @property
    def k_t(self) -> int:
        return self.k_y + self.k_m


def rate_allocate(y_q, m_q, context, z_y, z_m, entropy_model,
                  eta_y: float = DEFAULT_ETA_Y, eta_x: float = DEFAULT_ETA_X) -> RateAllocation:
    """Per-frame symbol budget: k = ceil(eta * NLL_bits) per stream."""
    if eta_y < 0 or eta_x < 0:
        raise ValueError("eta must be >= 0")
    nll_y = float(entropy_model.nll_bits_y(y_q, context, z_y))
    nll_m = float(entropy_model.nll_bits_m(m_q, z_m))
    return RateAllocation(nll_y, nll_m, eta_y, eta_x,
                          int(np.ceil(eta_y * nll_y)), int(np.ceil(eta_x * nll_m)))


# ---------------------------------------------------------------------------
# model

def _balance_deconv(w: np.ndarray, stride: int = 2) -> None:
    """Equalize per-parity tap sums of a stride-2 deconv kernel in place.

    With stride 2 an interior output pixel only ever sees one parity class
    of taps per axis, so unequal class sums render constant inputs as a
    2-periodic ripple. Starting balanced removes the checkerboard bias.
    """
    sums = {}
    for py in range(stride):
        for px in range(stride):
            sums[(py, px)] = w[:, :, py::stride, px::stride].sum(axis=(2, 3))
    target = sum(sums.values()) / len(sums)
    for (py, px), s in sums.items():
        block = w[:, :, py::stride, px::stride]
        n = block.shape[2] * block.shape[3]
        block += ((target - s) / n)[:, :, None, None]


class VideoCodecModel:
    """All nets plus the trainable/frozen partition for online adaptation."""

    def __init__(self, seed: int = 0, frame_hw=(64, 64), peak: float = 1.0,
                 eta_y: float = DEFAULT_ETA_Y, eta_x: float = DEFAULT_ETA_X):
        rng = make_rng(seed, TAG_INIT, 2)
        f = FEATURE_CHANNELS
        h, w = frame_hw
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ValueError(f"frame dims {frame_hw} not divisible by {DOWNSAMPLE}")
        self.frame_hw = (h, w)
        self.feat_hw = (h // DOWNSAMPLE, w // DOWNSAMPLE)
        self.motion_hw = (h // MOTION_BLOCK, w // MOTION_BLOCK)
        self.peak = peak
        self.eta_y = eta_y
        self.eta_x = eta_x
        self.y_capacity = f * self.feat_hw[0] * self.feat_hw[1]
        self.m_capacity = 4 * self.motion_hw[0] * self.motion_hw[1]

        self.extractor = Net([
            ("c1", Conv2d(1, 24, 5, rng, stride=2)),
            ("a1", Tanh()),
            ("c2", Conv2d(24, f, 5, rng, stride=2)),
        ])
        self.refiner = Net([
            ("c1", Conv2d(f, 16, 3, rng)),
            ("a1", Tanh()),
            ("c2", Conv2d(16, f, 3, rng)),
        ])
        self.refiner["c2"].w[...] = 0.0  # residual path starts as identity
        self.refiner["c2"].b[...] = 0.0
        self.synthesizer = Net([
            ("c1", Conv2d(2 * f, 32, 3, rng)),
            ("a1", Tanh()),
            ("d1", Deconv2d(32, 16, 5, rng, stride=2)),
            ("a2", Tanh()),
            ("d2", Deconv2d(16, 8, 5, rng, stride=2)),
            ("a3", Tanh()),
            ("c2", Conv2d(8, 1, 3, rng)),
        ])
        _balance_deconv(self.synthesizer["d1"].w)
        _balance_deconv(self.synthesizer["d2"].w)
        self.entropy = LaplaceEntropyModel(rng)
        self.proj_y = Net([
            ("p1", PointwiseConv(f + 1, 12, rng)),
            ("a1", Tanh()),
            ("p2", PointwiseConv(12, f, rng)),
        ])
        self.inv_y = Net([
            ("p1", PointwiseConv(f + 1, 12, rng)),
            ("a1", Tanh()),
            ("p2", PointwiseConv(12, f, rng)),
        ])
        self.proj_m = Net([
            ("p1", PointwiseConv(3, 6, rng)),
            ("a1", Tanh()),
            ("p2", PointwiseConv(6, 4, rng)),
        ])
        self.inv_m = Net([
            ("p1", PointwiseConv(5, 6, rng)),
            ("a1", Tanh()),
            ("p2", PointwiseConv(6, 2, rng)),
        ])
        self.params = ParameterSet(
            {
                "extractor": self.extractor,
                "refiner": self.refiner,
                "synthesizer": self.synthesizer,
                "entropy_y": self.entropy.net_y,
                "entropy_m": self.entropy.net_m,
                "proj_y": self.proj_y,
                "proj_m": self.proj_m,
                "inv_y": self.inv_y,
                "inv_m": self.inv_m,
            },
            trainable={"entropy_y", "entropy_m", "proj_y", "proj_m",
                       "inv_y", "inv_m"},
        )
        self.history: list = []

    def groups(self):
        return self.params.groups

    def named_params(self):
        return self.params.named()


def extract_features(model: VideoCodecModel, frame: np.ndarray) -> np.ndarray:
    """Frame (H, W) -> feature map (channels, H/4, W/4)."""
    fr = np.asarray(frame, dtype=np.float64)
    if fr.shape[0] % DOWNSAMPLE or fr.shape[1] % DOWNSAMPLE:
        raise ValueError(f"frame dims {fr.shape} not divisible by {DOWNSAMPLE}")
    y, _ = forward(model.extractor, fr[None, None])
    return y[0]


def build_context(y_prev: np.ndarray, motion: np.ndarray, refiner: Net) -> np.ndarray:
    """Warp previous features by the motion field, then residual-refine."""
    warped, _ = warp_features(y_prev, motion)
    res, _ = forward(refiner, warped[None])
    return warped + res[0]


# ---------------------------------------------------------------------------
# streams

@dataclass
class VideoStream:
    """Per-frame symbol blocks with their budgets; all blocks power-normalized."""

    blocks: list            # list of float64 arrays, len k_y + k_m each
    k_y: list
    k_m: list
    snr_est_db: float

    @property
    def k_t(self) -> list:
        return [a + b for a, b in zip(self.k_y, self.k_m)]

    @property
    def total_symbols(self) -> int:
        return int(sum(self.k_t))

    def symbols(self) -> np.ndarray:
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)

    def to_bytes(self) -> bytes:
        import struct
        parts = [struct.pack("<I", len(self.blocks))]
        for blk, ky, km in zip(self.blocks, self.k_y, self.k_m):
            if blk.size != ky + km:
                raise FramingError(f"block has {blk.size} symbols, declared {ky + km}")
            parts.append(struct.pack("<II", ky, km))
            parts.append(np.asarray(blk, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, snr_est_db: float = 10.0) -> "VideoStream":
        import struct
        if len(buf) < 4:
            raise FramingError("stream shorter than its frame-count header")
        (count,) = struct.unpack_from("<I", buf, 0)
        off = 4
        blocks, kys, kms = [], [], []
        for t in range(count):
            if off + 8 > len(buf):
                raise FramingError(f"frame {t}: missing budget header")
            ky, km = struct.unpack_from("<II", buf, off)
            off += 8
            n = ky + km
            if off + 4 * n > len(buf):
                raise FramingError(f"frame {t}: {n} symbols declared, stream truncated")
            blocks.append(np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64))
            kys.append(ky)
            kms.append(km)
            off += 4 * n
        if off != len(buf):
            raise FramingError(f"{len(buf) - off} trailing bytes after the last frame")
        return cls(blocks, kys, kms, snr_est_db)


@dataclass
class VideoSemantics:
    """Encoder-side intermediates kept for training, metrics, and tests."""

    y_q: list          # quantized feature maps, integer-valued
    m_q: list          # quantized motion fields
    contexts: list
    z_y: list
    z_m: list
    rates: list        # RateAllocation per frame


def _snr_plane(value_db: float, hw: tuple) -> np.ndarray:
    return np.full((1, hw[0], hw[1]), value_db / 20.0)


def _project(model: VideoCodecModel, y_q, m_q, snr_db: float):
    """(quantized tensors, snr) -> full-capacity symbol planes, pre-masking."""
    xin = np.concatenate([y_q / Q_STEP, _snr_plane(snr_db, model.feat_hw)], axis=0)
    wy, tape_y = forward(model.proj_y, xin[None])
    xm = np.concatenate([m_q / 2.0, _snr_plane(snr_db, model.motion_hw)], axis=0)
    wm, tape_m = forward(model.proj_m, xm[None])
    return wy[0].reshape(-1), wm[0].reshape(-1), (tape_y, tape_m)


def _unproject(model: VideoCodecModel, sy, sm, k_y: int, k_m: int, snr_db: float):
    """Masked symbols back to (y_hat, m_hat_int); zero-fills the dropped tail."""
    f = FEATURE_CHANNELS
    buf_y = np.zeros(model.y_capacity)
    buf_y[:k_y] = sy
    plane_y = buf_y.reshape(f, *model.feat_hw)
    xin = np.concatenate([plane_y, _snr_plane(snr_db, model.feat_hw)], axis=0)
    yhat, tape_y = forward(model.inv_y, xin[None])
    buf_m = np.zeros(model.m_capacity)
    buf_m[:k_m] = sm
    plane_m = buf_m.reshape(4, *model.motion_hw)
    xm = np.concatenate([plane_m, _snr_plane(snr_db, model.motion_hw)], axis=0)
    mhat, tape_m = forward(model.inv_m, xm[None])
    return yhat[0], mhat[0], (tape_y, tape_m)


def video_encode(model: VideoCodecModel, video: VideoClip, snr_est_db: float = 10.0):
    """Clip -> (VideoStream, VideoSemantics). Sequential: context is causal."""
    frames = video.frames.astype(np.float64)
    if frames.shape[1:] != model.frame_hw:
        raise ValueError(f"clip {frames.shape[1:]} does not match model {model.frame_hw}")
    f = FEATURE_CHANNELS
    blocks, kys, kms = [], [], []
    sem = VideoSemantics([], [], [], [], [], [])
    y_prev_q = None
    for t in range(frames.shape[0]):
        y_t = extract_features(model, frames[t])
        y_q = quantize(y_t)
        if t == 0:
            m_q = np.zeros((2, *model.motion_hw))
            context = np.zeros((f, *model.feat_hw))
        else:
            m_q = estimate_motion(frames[t], frames[t - 1]).astype(np.float64)
            context = build_context(y_prev_q / Q_STEP, m_q, model.refiner)
        z_y = LaplaceEntropyModel.hyperprior(y_q)
        z_m = LaplaceEntropyModel.hyperprior(m_q)
        rate = rate_allocate(y_q, m_q, context, z_y, z_m, model.entropy,
                             model.eta_y, model.eta_x)
        k_y = min(rate.k_y, model.y_capacity)
        k_m = min(rate.k_m, model.m_capacity)
        wy, wm, _ = _project(model, y_q, m_q, snr_est_db)
        raw = np.concatenate([wy[:k_y], wm[:k_m]])
        blk, _ = power_normalize(raw)
        blocks.append(blk)
        kys.append(k_y)
        kms.append(k_m)
        sem.y_q.append(y_q)
        sem.m_q.append(m_q)
        sem.contexts.append(context)
        sem.z_y.append(z_y)
        sem.z_m.append(z_m)
        sem.rates.append(rate)
        y_prev_q = y_q
    return VideoStream(blocks, kys, kms, snr_est_db), sem


def video_decode(model: VideoCodecModel, stream: VideoStream, fps: float = 25.0) -> VideoClip:
    """Received stream -> reconstructed clip; context comes from the
    receiver's own previous decode (zero for the first frame)."""
    f = FEATURE_CHANNELS
    frames = []
    y_prev_hat = None
    for t, blk in enumerate(stream.blocks):
        k_y, k_m = stream.k_y[t], stream.k_m[t]
        if blk.size != k_y + k_m:
            raise FramingError(f"frame {t}: {blk.size} symbols, declared {k_y + k_m}")
        yhat, mhat, _ = _unproject(model, blk[:k_y], blk[k_y:], k_y, k_m,
                                   stream.snr_est_db)
        m_int = np.clip(np.rint(mhat), -MOTION_BLOCK, MOTION_BLOCK)
        if t == 0 or y_prev_hat is None:
            context = np.zeros((f, *model.feat_hw))
        else:
            context = build_context(y_prev_hat, m_int, model.refiner)
        z = np.concatenate([yhat, context], axis=0)
        out, _ = forward(model.synthesizer, z[None])
        frames.append(np.clip(out[0, 0], 0.0, model.peak))
        y_prev_hat = yhat
    return VideoClip(np.stack(frames).astype(np.float32), fps, model.peak)


def rd_loss(video: VideoClip, decoded: VideoClip, stream: VideoStream,
            lam: float = DEFAULT_LAMBDA) -> float:
    """Rate-distortion objective: total symbols minus |lambda| * PSNR.

    The distortion term enters negatively so minimizing the loss raises
    reconstruction quality; PSNR is capped at 100 dB when MSE is zero.
    """
    from .metrics import psnr
    return float(stream.total_symbols) - abs(lam) * psnr(video, decoded)


# ---------------------------------------------------------------------------
# training

def _mse_and_grad(target: np.ndarray, out: np.ndarray):
    diff = out - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


class AdamState:
    """Adam moment accumulators; produces preconditioned step directions so
    the parameter update itself stays a plain scaled subtraction."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def direction(self, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            out[k] = mh / (np.sqrt(vh) + self.eps)
        return out


def pretrain_video(model: VideoCodecModel, clips, lr: float = 2e-3,
                   epochs: int = 60, seed: int = 0, max_frames: int = 8) -> VideoCodecModel:
    """Offline stage A: reconstruction path (extractor, refiner, synthesizer).

    Clean features, no quantization or channel: the synthesizer learns to
    render from (current features, temporal context); gradients do not cross
    frame boundaries through the context (truncated to one step). One Adam
    step per frame; moments live here in the trainer.
    """
    if not clips:
        raise ValueError("empty training set")
    from .audio_codec import clip_grad_norm
    rng = make_rng(seed, TAG_TRAIN, 3)
    groups = {"extractor": model.extractor, "refiner": model.refiner,
              "synthesizer": model.synthesizer}
    pset = ParameterSet(groups, trainable=set(groups))
    adam = AdamState()
    f = FEATURE_CHANNELS
    for ep in range(epochs):
        lr_t = lr * 0.5 * (1 + np.cos(np.pi * ep / epochs)) + 1e-5
        losses = []
        for ci in rng.permutation(len(clips)):
            frames = clips[ci].video.frames.astype(np.float64)
            if frames.shape[0] > max_frames:
                start = int(rng.integers(0, frames.shape[0] - max_frames + 1))
                frames = frames[start : start + max_frames]
            loss_clip = 0.0
            y_prev = None
            prev_frame = None
            for t in range(frames.shape[0]):
                y_t, tape_ext = forward(model.extractor, frames[t][None, None])
                if t == 0:
                    context = np.zeros((f, *model.feat_hw))
                    tape_ref = None
                else:
                    motion = estimate_motion(frames[t], prev_frame).astype(np.float64)
                    warped, _ = warp_features(y_prev, motion)
                    res, tape_ref = forward(model.refiner, warped[None])
                    context = warped + res[0]
                z = np.concatenate([y_t[0], context], axis=0)
                out, tape_syn = forward(model.synthesizer, z[None])
                loss, gout = _mse_and_grad(frames[t][None, None], out)
                loss_clip += loss
                gz, g_syn = backward(model.synthesizer, tape_syn, gout)
                gy = gz[:, :f]
                gc = gz[0, f:]
                grads = {f"synthesizer/{k}": v for k, v in g_syn.items()}
                if t > 0:
                    _, g_ref = backward(model.refiner, tape_ref, gc[None])
                    grads.update({f"refiner/{k}": v for k, v in g_ref.items()})
                _, g_ext = backward(model.extractor, tape_ext, gy)
                grads.update({f"extractor/{k}": v for k, v in g_ext.items()})
                sgd_step(pset, adam.direction(clip_grad_norm(grads)), lr_t)
                y_prev = y_t[0]
                prev_frame = frames[t]
            losses.append(loss_clip / frames.shape[0])
        model.history.append(("pretrain", float(np.mean(losses))))
    return model


def _finetune_frame(model: VideoCodecModel, frame: np.ndarray, state: dict,
                    cfg: ChannelConfig | None, snr_db: float, lam: float):
    """One frame through quantize -> rate -> project -> channel -> decode.

    Distortion gradients reach the projection/inverse nets (through the
    frozen synthesizer); rate gradients reach the entropy nets analytically.
    Context uses the previous *decoded* features, detached across frames.
    Returns (psnr_term + rate, grads); carried state is updated in place.
    """
    f = FEATURE_CHANNELS
    grads: dict = {}

    def add(name, gd):
        for k, v in gd.items():
            grads[f"{name}/{k}"] = v

    first = state.get("prev_frame") is None
    y_t = extract_features(model, frame)
    y_q = quantize(y_t)
    if first:
        m_q = np.zeros((2, *model.motion_hw))
        ctx_enc = np.zeros((f, *model.feat_hw))
    else:
        m_q = estimate_motion(frame, state["prev_frame"]).astype(np.float64)
        ctx_enc = build_context(state["y_prev_q"] / Q_STEP, m_q, model.refiner)
    z_y = LaplaceEntropyModel.hyperprior(y_q)
    z_m = LaplaceEntropyModel.hyperprior(m_q)

    nll_y, g_ey = model.entropy.nll_with_grads("y", y_q, ctx_enc, z_y)
    nll_m, g_em = model.entropy.nll_with_grads("m", m_q, z_m)
    add("entropy_y", {k: v * model.eta_y for k, v in g_ey.items()})
    add("entropy_m", {k: v * model.eta_x for k, v in g_em.items()})
    k_y = min(int(np.ceil(model.eta_y * nll_y)), model.y_capacity)
    k_m = min(int(np.ceil(model.eta_x * nll_m)), model.m_capacity)

    xin = np.concatenate([y_q / Q_STEP, _snr_plane(snr_db, model.feat_hw)], axis=0)
    wy, tape_py = forward(model.proj_y, xin[None])
    xm = np.concatenate([m_q / 2.0, _snr_plane(snr_db, model.motion_hw)], axis=0)
    wm, tape_pm = forward(model.proj_m, xm[None])
    raw = np.concatenate([wy[0].reshape(-1)[:k_y], wm[0].reshape(-1)[:k_m]])
    sent, scale = power_normalize(raw)
    rx = equalize(transmit(sent, cfg)) if cfg is not None else sent

    yhat, mhat, (tape_iy, tape_im) = _unproject(
        model, rx[:k_y], rx[k_y:], k_y, k_m, snr_db)
    m_int = np.clip(np.rint(mhat), -MOTION_BLOCK, MOTION_BLOCK)
    if first or state.get("y_prev_hat") is None:
        ctx_dec = np.zeros((f, *model.feat_hw))
    else:
        ctx_dec = build_context(state["y_prev_hat"], m_int, model.refiner)
    zcat = np.concatenate([yhat, ctx_dec], axis=0)
    out, tape_syn = forward(model.synthesizer, zcat[None])
    mse, gout = _mse_and_grad(frame[None, None], out)
    mse = max(mse, 1e-12)
    # d(-|lam| * psnr)/d(out): |lam| * 10/ln10 * dMSE/dout / MSE
    gout = gout * (abs(lam) * (10.0 / np.log(10.0)) / mse)
    loss = -abs(lam) * 10.0 * np.log10(model.peak ** 2 / mse) + k_y + k_m

    gz, _ = backward(model.synthesizer, tape_syn, gout)
    gy_hat = gz[:, :f]
    gx_iy, g_iy = backward(model.inv_y, tape_iy, gy_hat)
    add("inv_y", g_iy)
    # context branch gradient ends at the (detached) previous decode;
    # the snr plane (last input channel) takes no gradient
    grx = np.zeros(rx.size)
    grx[:k_y] = gx_iy[0, :f].reshape(-1)[:k_y]
    gsent = power_normalize_grad(sent, scale, grx)
    gwy = np.zeros(model.y_capacity)
    gwy[:k_y] = gsent[:k_y]
    _, g_py = backward(model.proj_y, tape_py, gwy.reshape(1, f, *model.feat_hw))
    add("proj_y", g_py)
    gwm = np.zeros(model.m_capacity)
    gwm[:k_m] = gsent[k_y:]
    _, g_pm = backward(model.proj_m, tape_pm, gwm.reshape(1, 4, *model.motion_hw))
    add("proj_m", g_pm)

    state["y_prev_q"] = y_q
    state["y_prev_hat"] = yhat
    state["prev_frame"] = frame
    return loss, grads


def fine_tune_video(model: VideoCodecModel, clips, cfg: ChannelConfig,
                    lam: float = DEFAULT_LAMBDA, lr: float = 1e-3,
                    epochs: int = 30, snr_range: tuple = (0.0, 20.0),
                    seed: int = 0, max_frames: int = 6,
                    stop_tol: float | None = None,
                    stop_window: int = 10) -> VideoCodecModel:
    """Online stage: adapts the symbol mapping and entropy predictor only.

    cfg None trains through an identity channel (offline warm start); with a
    config, every step draws a fresh SNR from snr_range and a fresh fading
    realization so the mapping sees the channel it will face. With stop_tol
    set, the loop ends early once the smoothed loss stops improving by that
    much per stop_window epochs and raises TrainingError if it blows up.
    """
    if not clips:
        raise ValueError("empty training set")
    from .audio_codec import clip_grad_norm
    rng = make_rng(seed, TAG_TRAIN, 4)
    adam = AdamState()
    monitor = LossMonitor(stop_tol, stop_window)
    groups = ("entropy_y", "entropy_m", "proj_y", "proj_m", "inv_y", "inv_m")
    for ep in range(epochs):
        losses = []
        for ci in rng.permutation(len(clips)):
            frames = clips[ci].video.frames.astype(np.float64)
            if frames.shape[0] > max_frames:
                start = int(rng.integers(0, frames.shape[0] - max_frames + 1))
                frames = frames[start : start + max_frames]
            snr = float(rng.uniform(*snr_range))
            step_cfg = None
            if cfg is not None:
                step_cfg = ChannelConfig(snr, cfg.fading, cfg.block_size,
                                         int(rng.integers(0, 2**31 - 1)))
            state: dict = {}
            loss_clip = 0.0
            for t in range(frames.shape[0]):
                loss, grads = _finetune_frame(model, frames[t], state,
                                              step_cfg, snr, lam)
                loss_clip += loss
                grads = {k: v for k, v in grads.items()
                         if k.split("/")[0] in model.params.trainable}
                # clip per group: rate and distortion gradients live on very
                # different scales and one must not drown the other
                clipped: dict = {}
                for g in groups:
                    sub = {k: v for k, v in grads.items() if k.startswith(g + "/")}
                    clipped.update(clip_grad_norm(sub, 10.0))
                sgd_step(model.params, adam.direction(clipped), lr)
            losses.append(loss_clip / frames.shape[0])
        ep_loss = float(np.mean(losses))
        model.history.append(("fine_tune", ep_loss))
        if stop_tol is not None:
            verdict = monitor.update(ep_loss)
            if verdict == "diverged":
                raise TrainingError(
                    f"video fine-tune diverged at epoch {ep}: loss {ep_loss:.4g} "
                    f"vs initial {monitor.losses[0]:.4g}")
            if verdict == "converged":
                break
    return model
