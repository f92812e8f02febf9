"""Parameter bookkeeping, SGD, and finite-difference gradient checking."""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .layers import Net, forward, backward


class ParameterSet:
    """Named nets partitioned into trainable and frozen groups.

    Parameters are addressed as "group/layer.param". Frozen groups must stay
    bitwise untouched by any update step.
    """

    def __init__(self, groups: dict[str, Net], trainable):
        unknown = set(trainable) - set(groups)
        if unknown:
            raise ValueError(f"trainable names not in groups: {sorted(unknown)}")
        self.groups = dict(groups)
        self.trainable = frozenset(trainable)

    @property
    def frozen(self) -> frozenset:
        return frozenset(self.groups) - self.trainable

    def named(self, only_trainable=False) -> dict[str, np.ndarray]:
        out = {}
        for gname, net in self.groups.items():
            if only_trainable and gname not in self.trainable:
                continue
            for pname, arr in net.named_params().items():
                out[f"{gname}/{pname}"] = arr
        return out

    def snapshot(self, names=None) -> dict[str, np.ndarray]:
        """Copies of the selected groups' parameters (all groups by default)."""
        sel = set(names) if names is not None else set(self.groups)
        return {
            k: v.copy() for k, v in self.named().items() if k.split("/")[0] in sel
        }


def sgd_step(params: ParameterSet, grads: dict[str, np.ndarray], lr: float) -> ParameterSet:
    """In-place x -= lr * g for trainable parameters. Rejects frozen gradients."""
    if lr < 0:
        raise ValueError(f"negative learning rate {lr}")
    named = params.named()
    for key, g in grads.items():
        group = key.split("/")[0]
        if group not in params.trainable:
            raise ContractViolation(f"gradient supplied for frozen parameter {key}")
        arr = named.get(key)
        if arr is None:
            raise ValueError(f"unknown parameter {key}")
        if arr.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {arr.shape} for {key}")
        arr -= lr * g
    for net in params.groups.values():
        net.version += 1
    return params


class LossMonitor:
    """Watches per-epoch losses for convergence or divergence.

    Works on window-smoothed values: "converged" once the smoothed loss
    improved by less than tol over the last window epochs, "diverged" once it
    exceeds 10x the initial smoothed loss (or goes non-finite). tol None
    disables the convergence side.
    """

    def __init__(self, tol: float | None = 1e-4, window: int = 10):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.tol = tol
        self.window = window
        self.losses: list[float] = []
        self._smoothed: list[float] = []

    def update(self, loss: float) -> str | None:
        self.losses.append(float(loss))
        w = self.window
        self._smoothed.append(float(np.mean(self.losses[-w:])))
        s = self._smoothed
        if not np.isfinite(loss):
            return "diverged"
        if len(s) >= w and abs(s[-1]) > 10.0 * abs(s[w - 1]) and s[-1] > s[w - 1]:
            return "diverged"
        if self.tol is not None and len(s) >= 2 * w:
            if s[-1 - w] - s[-1] < self.tol:
                return "converged"
        return None


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    passed: bool
    worst_param: str = ""


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(net: Net, x: np.ndarray, loss_fn, tol: float = 1e-4,
               h: float = 1e-4, max_entries: int = 40,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Central-difference check of analytic parameter and input gradients.

    loss_fn maps the net output y to (scalar loss, dL/dy). A subsample of
    entries per tensor is checked (all entries when the tensor is small).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    y, tape = forward(net, x)
    _, gy = loss_fn(y)
    gx, grads = backward(net, tape, gy)

    def loss_at(xv):
        yv, _ = forward(net, xv)
        return loss_fn(yv)[0]

    worst, worst_name, checked = 0.0, "", 0
    tensors = [("input", x, gx)]
    named = net.named_params()
    for key, g in grads.items():
        tensors.append((key, named[key], g))

    for name, arr, analytic in tensors:
        n = arr.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        for i in idx:
            keep = arr.flat[i]
            arr.flat[i] = keep + h
            lp = loss_at(x)
            arr.flat[i] = keep - h
            lm = loss_at(x)
            arr.flat[i] = keep
            num = (lp - lm) / (2 * h)
            err = _rel_err(float(analytic.flat[i]), num)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckReport(worst, checked, worst <= tol, worst_name)
