"""Hand-rolled layers: forward/backward, bookkeeping, SGD, grad checking."""

import numpy as np
import pytest

from wav2vid.errors import ContractViolation
from wav2vid.nn.layers import (Conv1d, Conv2d, Deconv2d, Dense, Net,
                               PointwiseConv, Relu, Sigmoid, Tanh, backward,
                               forward, power_normalize, power_normalize_grad)
from wav2vid.nn.train import (GradCheckReport, LossMonitor, ParameterSet,
                              grad_check, sgd_step)


def quad(y):
    return 0.5 * float(np.sum(y * y)), y


def test_dense_identity():
    rng = np.random.default_rng(0)
    d = Dense(3, 3, rng)
    d.w[:] = np.eye(3)
    d.b[:] = 0.0
    net = Net([("d", d)])
    x = rng.standard_normal((4, 3))
    y, _ = forward(net, x)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_chain_rule_hand_case():
    # y = 2 * (3 * x); with dL/dy = 1 the input grad is 6
    rng = np.random.default_rng(0)
    d1, d2 = Dense(1, 1, rng), Dense(1, 1, rng)
    d1.w[:] = 3.0
    d1.b[:] = 0.0
    d2.w[:] = 2.0
    d2.b[:] = 0.0
    net = Net([("a", d1), ("b", d2)])
    y, tape = forward(net, np.array([[1.0]]))
    assert y[0, 0] == pytest.approx(6.0)
    gx, grads = backward(net, tape, np.array([[1.0]]))
    assert gx[0, 0] == pytest.approx(6.0)
    assert set(grads) == {"a.w", "a.b", "b.w", "b.b"}


def test_frozen_layer_emits_no_grads_but_passes_gradient():
    rng = np.random.default_rng(1)
    net = Net([("enc", Dense(4, 4, rng)), ("head", Dense(4, 2, rng))],
              frozen=("enc",))
    x = rng.standard_normal((3, 4))
    y, tape = forward(net, x)
    gx, grads = backward(net, tape, np.ones_like(y))
    assert all(k.startswith("head.") for k in grads)
    assert np.any(gx != 0)  # gradient still reaches the input


def test_duplicate_layer_names_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        Net([("d", Dense(2, 2, rng)), ("d", Dense(2, 2, rng))])


def test_stale_tape_rejected():
    rng = np.random.default_rng(2)
    net = Net([("d", Dense(2, 2, rng))])
    x = rng.standard_normal((1, 2))
    y, tape = forward(net, x)
    params = ParameterSet({"g": net}, trainable=("g",))
    _, grads = backward(net, tape, np.ones_like(y))
    sgd_step(params, {f"g/{k}": v for k, v in grads.items()}, 0.1)
    with pytest.raises(ValueError):
        backward(net, tape, np.ones_like(y))


def test_mismatched_tape_rejected():
    rng = np.random.default_rng(3)
    a = Net([("d", Dense(2, 2, rng))])
    b = Net([("d", Dense(2, 2, rng))])
    y, tape = forward(a, rng.standard_normal((1, 2)))
    with pytest.raises(ValueError):
        backward(b, tape, np.ones_like(y))


def test_conv_shapes():
    rng = np.random.default_rng(4)
    y, _ = forward(Net([("c", Conv1d(2, 3, 5, rng))]),
                   rng.standard_normal((1, 2, 16)))
    assert y.shape == (1, 3, 16)  # same padding keeps length
    y, _ = forward(Net([("c", Conv2d(1, 4, 3, rng))]),
                   rng.standard_normal((1, 1, 8, 8)))
    assert y.shape == (1, 4, 8, 8)
    y, _ = forward(Net([("c", Deconv2d(4, 2, 4, rng))]),
                   rng.standard_normal((1, 4, 4, 4)))
    assert y.shape == (1, 2, 8, 8)  # stride-2 upsampling
    y, _ = forward(Net([("c", PointwiseConv(4, 2, rng))]),
                   rng.standard_normal((1, 4, 5, 5)))
    assert y.shape == (1, 2, 5, 5)


def test_sgd_step_updates_and_rejects():
    rng = np.random.default_rng(5)
    net = Net([("d", Dense(1, 1, rng))])
    net["d"].w[:] = 1.0
    frozen_net = Net([("d", Dense(1, 1, rng))])
    params = ParameterSet({"head": net, "base": frozen_net}, trainable=("head",))

    sgd_step(params, {"head/d.w": np.array([[1.0]])}, 0.05)
    assert net["d"].w[0, 0] == pytest.approx(0.95)

    with pytest.raises(ContractViolation):
        sgd_step(params, {"base/d.w": np.array([[1.0]])}, 0.05)
    with pytest.raises(ValueError):
        sgd_step(params, {"head/d.w": np.array([[1.0]])}, -0.1)
    with pytest.raises(ValueError):
        sgd_step(params, {"head/nope.w": np.array([[1.0]])}, 0.1)
    with pytest.raises(ValueError):
        sgd_step(params, {"head/d.w": np.ones(3)}, 0.1)


def test_sgd_step_zero_lr_is_identity():
    rng = np.random.default_rng(6)
    net = Net([("d", Dense(3, 3, rng))])
    params = ParameterSet({"g": net}, trainable=("g",))
    before = params.snapshot()
    sgd_step(params, {"g/d.w": np.ones((3, 3))}, 0.0)
    after = params.named()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_parameter_set_bookkeeping():
    rng = np.random.default_rng(7)
    a, b = Net([("d", Dense(2, 2, rng))]), Net([("d", Dense(2, 2, rng))])
    params = ParameterSet({"a": a, "b": b}, trainable=("a",))
    assert params.frozen == {"b"}
    assert set(params.named(only_trainable=True)) == {"a/d.w", "a/d.b"}
    snap = params.snapshot(["b"])
    b["d"].w += 1.0
    assert not np.array_equal(snap["b/d.w"], b["d"].w)  # snapshot is a copy
    with pytest.raises(ValueError):
        ParameterSet({"a": a}, trainable=("a", "ghost"))


def test_power_normalize_unit_power_and_grad():
    rng = np.random.default_rng(8)
    x = rng.standard_normal(64) * 3.0
    y, scale = power_normalize(x)
    assert float(np.mean(y * y)) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(y, x * scale)

    # finite differences against the analytic backward
    c = rng.standard_normal(64)
    gx = power_normalize_grad(y, scale, c)
    h = 1e-6
    for i in rng.choice(64, 8, replace=False):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (np.dot(c, power_normalize(xp)[0]) -
              np.dot(c, power_normalize(xm)[0])) / (2 * h)
        assert fd == pytest.approx(gx[i], rel=1e-5, abs=1e-8)


def test_power_normalize_zero_input_passthrough():
    y, scale = power_normalize(np.zeros(10))
    assert scale == 1.0
    assert np.all(y == 0)
    np.testing.assert_array_equal(power_normalize_grad(y, scale, np.ones(10)),
                                  np.ones(10))


def test_loss_monitor_converges_on_flat_loss():
    mon = LossMonitor(tol=1e-4, window=3)
    verdicts = [mon.update(1.0) for _ in range(6)]
    assert verdicts[:5] == [None] * 5
    assert verdicts[5] == "converged"


def test_loss_monitor_divergence_on_blowup():
    mon = LossMonitor(tol=None, window=3)
    assert mon.update(1.0) is None
    assert mon.update(1.0) is None
    assert mon.update(1.0) is None
    assert mon.update(100.0) == "diverged"


def test_loss_monitor_divergence_on_non_finite():
    mon = LossMonitor(window=5)
    assert mon.update(float("nan")) == "diverged"
    mon2 = LossMonitor(window=5)
    assert mon2.update(float("inf")) == "diverged"


def test_loss_monitor_tol_none_never_converges():
    mon = LossMonitor(tol=None, window=2)
    assert all(mon.update(0.5) is None for _ in range(20))


def test_loss_monitor_rejects_bad_window():
    with pytest.raises(ValueError):
        LossMonitor(window=0)


def test_grad_check_passes_on_correct_net():
    rng = np.random.default_rng(9)
    net = Net([("a", Dense(5, 7, rng)), ("t", Tanh()), ("b", Dense(7, 3, rng))])
    rep = grad_check(net, rng.standard_normal((2, 5)), quad)
    assert isinstance(rep, GradCheckReport)
    assert rep.passed
    assert rep.max_rel_err < 1e-4
    assert rep.n_checked > 0


def test_grad_check_catches_wrong_backward():
    class BrokenDense(Dense):
        def backward(self, cache, gy):
            gx, grads = super().backward(cache, gy)
            grads["w"] = grads["w"] * 1.5  # deliberately wrong
            return gx, grads

    rng = np.random.default_rng(10)
    broken = BrokenDense(4, 4, rng)
    rep = grad_check(Net([("d", broken)]), rng.standard_normal((2, 4)), quad)
    assert not rep.passed
    assert rep.worst_param.startswith("d.w")


def test_grad_check_covers_input_gradient():
    rng = np.random.default_rng(11)
    net = Net([("t", Tanh())])  # no parameters at all
    rep = grad_check(net, rng.standard_normal((2, 6)), quad)
    assert rep.passed
    assert rep.n_checked > 0  # the input entries were still checked


@pytest.mark.parametrize("kind", ["dense", "conv1d", "conv2d", "deconv2d",
                                  "pointwise", "relu", "tanh", "sigmoid"])
def test_every_layer_kind_grad_checks(kind):
    makers = {
        "dense": lambda rng: (Net([("d", Dense(6, 5, rng))]),
                              rng.standard_normal((2, 6))),
        "conv1d": lambda rng: (Net([("c", Conv1d(2, 3, 3, rng))]),
                               rng.standard_normal((1, 2, 12))),
        "conv2d": lambda rng: (Net([("c", Conv2d(2, 3, 3, rng))]),
                               rng.standard_normal((1, 2, 8, 8))),
        "deconv2d": lambda rng: (Net([("c", Deconv2d(3, 2, 4, rng))]),
                                 rng.standard_normal((1, 3, 4, 4))),
        "pointwise": lambda rng: (Net([("c", PointwiseConv(3, 2, rng))]),
                                  rng.standard_normal((1, 3, 5, 5))),
        "relu": lambda rng: (Net([("d", Dense(5, 5, rng)), ("a", Relu())]),
                             rng.standard_normal((2, 5))),
        "tanh": lambda rng: (Net([("d", Dense(5, 5, rng)), ("a", Tanh())]),
                             rng.standard_normal((2, 5))),
        "sigmoid": lambda rng: (Net([("d", Dense(5, 5, rng)), ("a", Sigmoid())]),
                                rng.standard_normal((2, 5))),
    }
    for seed in (0, 1):
        rng = np.random.default_rng(seed)
        net, x = makers[kind](rng)
        rep = grad_check(net, x, quad, rng=np.random.default_rng(seed + 100))
        assert rep.passed, (kind, seed, rep.max_rel_err, rep.worst_param)
