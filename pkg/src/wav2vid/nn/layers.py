"""Small differentiable layer kernel with hand-written backward rules.

All math runs in float64. Layer vocabulary is fixed: dense, conv1d, conv2d,
deconv2d, pointwise_conv, relu, tanh, sigmoid. deconv2d is implemented as the
exact adjoint of the same-padded strided conv2d, so <conv(x), y> == <x, deconv(y)>
holds by construction and conv/deconv reuse each other as backward passes.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _same_pads(size: int, k: int, s: int):
    """Pad amounts and output size for 'same' padding: out = ceil(size / s)."""
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    lo = total // 2
    return lo, total - lo, out


def _valid_out(size: int, k: int, s: int) -> int:
    if size < k:
        raise ValueError(f"input size {size} smaller than kernel {k}")
    return (size - k) // s + 1


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(np.float64)


# ---------------------------------------------------------------------------
# conv2d primitives (strides/kernels may differ per axis)

def _conv2d_fwd(x, w, stride, padding):
    B, Ci, H, W = x.shape
    Co, Ci2, kh, kw = w.shape
    sh, sw = stride
    if padding == "same":
        pt, pb, Ho = _same_pads(H, kh, sh)
        pl, pr, Wo = _same_pads(W, kw, sw)
    else:
        pt = pb = pl = pr = 0
        Ho = _valid_out(H, kh, sh)
        Wo = _valid_out(W, kw, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    y = np.einsum("bchwuv,ocuv->bohw", win, w, optimize=True)
    return np.ascontiguousarray(y)


def _conv2d_adj(g, w, stride, padding, in_hw):
    """Adjoint of _conv2d_fwd with respect to its input."""
    B, Co, Ho, Wo = g.shape
    Co2, Ci, kh, kw = w.shape
    sh, sw = stride
    H, W = in_hw
    if padding == "same":
        pt, pb, _ = _same_pads(H, kh, sh)
        pl, pr, _ = _same_pads(W, kw, sw)
    else:
        pt = pb = pl = pr = 0
    xg = np.zeros((B, Ci, H + pt + pb, W + pl + pr))
    for u in range(kh):
        for v in range(kw):
            xg[:, :, u : u + sh * Ho : sh, v : v + sw * Wo : sw] += np.einsum(
                "bohw,oc->bchw", g, w[:, :, u, v], optimize=True
            )
    return np.ascontiguousarray(xg[:, :, pt : pt + H, pl : pl + W])


def _conv2d_wgrad(x, g, stride, padding, kshape):
    B, Ci, H, W = x.shape
    kh, kw = kshape
    sh, sw = stride
    if padding == "same":
        pt, pb, _ = _same_pads(H, kh, sh)
        pl, pr, _ = _same_pads(W, kw, sw)
    else:
        pt = pb = pl = pr = 0
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return np.einsum("bchwuv,bohw->ocuv", win, g, optimize=True)


# 1-D variants

def _conv1d_fwd(x, w, stride, padding):
    B, Ci, L = x.shape
    Co, Ci2, k = w.shape
    if padding == "same":
        pl, pr, Lo = _same_pads(L, k, stride)
    else:
        pl = pr = 0
        Lo = _valid_out(L, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    return np.ascontiguousarray(np.einsum("bclu,ocu->bol", win, w, optimize=True))


def _conv1d_adj(g, w, stride, padding, in_len):
    B, Co, Lo = g.shape
    Co2, Ci, k = w.shape
    if padding == "same":
        pl, pr, _ = _same_pads(in_len, k, stride)
    else:
        pl = pr = 0
    xg = np.zeros((B, Ci, in_len + pl + pr))
    for u in range(k):
        xg[:, :, u : u + stride * Lo : stride] += np.einsum(
            "bol,oc->bcl", g, w[:, :, u], optimize=True
        )
    return np.ascontiguousarray(xg[:, :, pl : pl + in_len])


def _conv1d_wgrad(x, g, stride, padding, k):
    B, Ci, L = x.shape
    if padding == "same":
        pl, pr, _ = _same_pads(L, k, stride)
    else:
        pl = pr = 0
    xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    return np.einsum("bclu,bol->ocu", win, g, optimize=True)


# ---------------------------------------------------------------------------
# layers

class Layer:
    """Base layer: forward returns (y, cache); backward returns (gx, param grads)."""

    kind = "base"

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, gy):
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.w = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.b = np.zeros(n_out)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"dense expects (B, {self.n_in}), got {x.shape}")
        return x @ self.w + self.b, x

    def backward(self, cache, gy):
        x = cache
        return gy @ self.w.T, {"w": x.T @ gy, "b": gy.sum(axis=0)}

    @property
    def params(self):
        return {"w": self.w, "b": self.b}


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, c_in, c_out, k, rng, *, stride=1, padding="same"):
        self.c_in, self.c_out, self.k = c_in, c_out, int(k)
        self.stride, self.padding = int(stride), padding
        fan = c_in * self.k
        self.w = glorot_uniform(rng, (c_out, c_in, self.k), fan, c_out * self.k)
        self.b = np.zeros(c_out)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ValueError(f"conv1d expects (B, {self.c_in}, L), got {x.shape}")
        y = _conv1d_fwd(x, self.w, self.stride, self.padding)
        return y + self.b[None, :, None], (x, x.shape[2])

    def backward(self, cache, gy):
        x, in_len = cache
        gx = _conv1d_adj(gy, self.w, self.stride, self.padding, in_len)
        gw = _conv1d_wgrad(x, gy, self.stride, self.padding, self.k)
        return gx, {"w": gw, "b": gy.sum(axis=(0, 2))}

    @property
    def params(self):
        return {"w": self.w, "b": self.b}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in, c_out, k, rng, *, stride=1, padding="same"):
        self.c_in, self.c_out = c_in, c_out
        self.k = _pair(k)
        self.stride = _pair(stride)
        self.padding = padding
        fan = c_in * self.k[0] * self.k[1]
        self.w = glorot_uniform(
            rng, (c_out, c_in, *self.k), fan, c_out * self.k[0] * self.k[1]
        )
        self.b = np.zeros(c_out)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"conv2d expects (B, {self.c_in}, H, W), got {x.shape}")
        y = _conv2d_fwd(x, self.w, self.stride, self.padding)
        return y + self.b[None, :, None, None], (x, x.shape[2:])

    def backward(self, cache, gy):
        x, in_hw = cache
        gx = _conv2d_adj(gy, self.w, self.stride, self.padding, in_hw)
        gw = _conv2d_wgrad(x, gy, self.stride, self.padding, self.k)
        return gx, {"w": gw, "b": gy.sum(axis=(0, 2, 3))}

    @property
    def params(self):
        return {"w": self.w, "b": self.b}


class Deconv2d(Layer):
    """Transposed conv: output spatial size = input size * stride.

    Weight layout (c_in, c_out, kh, kw) matches the conv2d it transposes, so
    forward is the conv adjoint and backward-dx is a plain conv.
    """

    kind = "deconv2d"

    def __init__(self, c_in, c_out, k, rng, *, stride=2):
        self.c_in, self.c_out = c_in, c_out
        self.k = _pair(k)
        self.stride = _pair(stride)
        fan = c_in * self.k[0] * self.k[1]
        self.w = glorot_uniform(
            rng, (c_in, c_out, *self.k), fan, c_out * self.k[0] * self.k[1]
        )
        self.b = np.zeros(c_out)

    def _out_hw(self, in_hw):
        return in_hw[0] * self.stride[0], in_hw[1] * self.stride[1]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"deconv2d expects (B, {self.c_in}, h, w), got {x.shape}")
        out_hw = self._out_hw(x.shape[2:])
        y = _conv2d_adj(x, self.w, self.stride, "same", out_hw)
        return y + self.b[None, :, None, None], (x, out_hw)

    def backward(self, cache, gy):
        x, out_hw = cache
        gx = _conv2d_fwd(gy, self.w, self.stride, "same")
        gw = _conv2d_wgrad(gy, x, self.stride, "same", self.k)
        return gx, {"w": gw, "b": gy.sum(axis=(0, 2, 3))}

    @property
    def params(self):
        return {"w": self.w, "b": self.b}


class PointwiseConv(Layer):
    """1x1 convolution over the channel axis; works on any trailing layout."""

    kind = "pointwise_conv"

    def __init__(self, c_in, c_out, rng):
        self.c_in, self.c_out = c_in, c_out
        self.w = glorot_uniform(rng, (c_out, c_in), c_in, c_out)
        self.b = np.zeros(c_out)

    def forward(self, x):
        if x.ndim < 2 or x.shape[1] != self.c_in:
            raise ValueError(f"pointwise expects (B, {self.c_in}, ...), got {x.shape}")
        y = np.einsum("oc,bc...->bo...", self.w, x, optimize=True)
        b = self.b.reshape((1, self.c_out) + (1,) * (x.ndim - 2))
        return y + b, x

    def backward(self, cache, gy):
        x = cache
        gx = np.einsum("oc,bo...->bc...", self.w, gy, optimize=True)
        gw = np.einsum("bo...,bc...->oc", gy, x, optimize=True)
        axes = (0,) + tuple(range(2, gy.ndim))
        return gx, {"w": gw, "b": gy.sum(axis=axes)}

    @property
    def params(self):
        return {"w": self.w, "b": self.b}


class Relu(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, gy):
        return gy * cache, {}


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, gy):
        return gy * (1.0 - cache * cache), {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = 1.0 / (1.0 + np.exp(-x))
        return y, y

    def backward(self, cache, gy):
        return gy * cache * (1.0 - cache), {}


# ---------------------------------------------------------------------------
# network

class Tape:
    """Cached intermediates from one forward pass; consumed by backward."""

    def __init__(self, net, version, caches):
        self.net = net
        self.version = version
        self.caches = caches


class Net:
    """Ordered, named layer sequence. Layer names in `frozen` get no gradients."""

    def __init__(self, layers: list[tuple[str, Layer]], frozen=()):
        self.names = [n for n, _ in layers]
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate layer names")
        self.layers = [l for _, l in layers]
        self.frozen = set(frozen)
        self.version = 0

    def __getitem__(self, name: str) -> Layer:
        return self.layers[self.names.index(name)]

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in zip(self.names, self.layers):
            for pname, arr in layer.params.items():
                out[f"{name}.{pname}"] = arr
        return out

    def trainable_params(self) -> dict[str, np.ndarray]:
        return {
            k: v for k, v in self.named_params().items()
            if k.split(".")[0] not in self.frozen
        }


def forward(net: Net, x: np.ndarray):
    """Run the layer sequence; returns (y, tape)."""
    caches = []
    for i, layer in enumerate(net.layers):
        try:
            x, cache = layer.forward(x)
        except ValueError as e:
            raise ValueError(f"layer {i} ({net.names[i]}): {e}") from None
        caches.append(cache)
    return x, Tape(net, net.version, caches)


def backward(net: Net, tape: Tape, gy: np.ndarray):
    """Backprop; returns (gx, grads dict 'layer.param' -> array).

    Frozen layers still pass gradient through but emit no parameter entries.
    """
    if tape.net is not net or tape.version != net.version:
        raise ValueError("stale or mismatched tape")
    grads = {}
    for name, layer, cache in zip(
        reversed(net.names), reversed(net.layers), reversed(tape.caches)
    ):
        gy, pgrads = layer.backward(cache, gy)
        if name not in net.frozen:
            for pname, g in pgrads.items():
                grads[f"{name}.{pname}"] = g
    return gy, grads


# ---------------------------------------------------------------------------
# stream power normalization (shared by the codecs; not a Layer)

def power_normalize(x: np.ndarray):
    """Scale to unit average power; returns (y, scale). Zero input passes through."""
    p = float(np.mean(x * x))
    if p < 1e-24:
        return x.copy(), 1.0
    scale = 1.0 / np.sqrt(p)
    return x * scale, scale


def power_normalize_grad(y: np.ndarray, scale: float, gy: np.ndarray):
    """Backward of power_normalize given its output y and scale."""
    if scale == 1.0 and np.all(y == 0):
        return gy.copy()
    return scale * (gy - y * np.mean(gy * y))
