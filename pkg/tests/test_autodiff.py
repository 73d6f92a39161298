"""Tape engine: value checks, finite-difference gradients, causality of the
conv primitive, and bookkeeping behavior."""

import numpy as np
import pytest

import pdistill.autodiff as ad
from pdistill.autodiff import NonFiniteError, Parameter, Tape, Tensor

from util import check_param_grads, numeric_grad, rel_err


def _scalar_loss(t):
    return ad.tensor_sum(t)


def _grad_of(build, param):
    with Tape() as tape:
        loss = build()
    return tape.backward(loss)[param.name]


# ---------------------------------------------------------------------------
# frozen value checks

def test_sigmoid_at_zero():
    p = Parameter(np.zeros((1,)), "p")
    with Tape() as tape:
        out = ad.sigmoid(p)
        assert out.data[0] == 0.5
        loss = ad.tensor_sum(out)
    g = tape.backward(loss)["p"]
    assert g[0] == 0.25


def test_mean_gradient_is_uniform():
    p = Parameter(np.arange(7.0), "p")
    g = _grad_of(lambda: ad.mean(p), p)
    assert np.allclose(g, 1.0 / 7.0, rtol=0, atol=1e-15)


def test_logsumexp_shift_invariance():
    x = np.array([[0.3, -1.2, 2.0, 0.0]])
    a = ad.logsumexp(Tensor(x), axis=1).data
    b = ad.logsumexp(Tensor(x + 100.0), axis=1).data
    assert np.allclose(b, a + 100.0, atol=1e-12)
    c = ad.logsumexp(Tensor(x + 1e4), axis=1).data
    assert np.all(np.isfinite(c))


def test_conv_identity_kernel():
    """A kernel that only reads the current timestep reproduces the input."""
    x = np.random.default_rng(0).normal(size=(2, 3, 16))
    w = np.zeros((3, 3, 2))
    for i in range(3):
        w[i, i, -1] = 1.0
    out = ad.causal_dilated_conv1d(Tensor(x), Tensor(w), dilation=4)
    assert np.allclose(out.data, x, atol=0)


def test_softplus_extremes():
    t = Tensor(np.array([-800.0, 0.0, 800.0]))
    out = ad.softplus(t).data
    assert out[0] == 0.0
    assert abs(out[1] - np.log(2.0)) < 1e-15
    assert out[2] == 800.0


def test_log1mexp_small_and_large():
    # ln(1 - e^{-x}): compare against mpmath-free high-precision formula
    for v in (1e-8, 0.5, 5.0, 40.0):
        got = ad.log1mexp(Tensor(np.array([v]))).data[0]
        want = np.log(-np.expm1(-v)) if v < 1 else np.log1p(-np.exp(-v))
        assert abs(got - want) < 1e-12


def test_log1mexp_rejects_nonpositive():
    with pytest.raises(ValueError):
        ad.log1mexp(Tensor(np.array([0.0])))


# ---------------------------------------------------------------------------
# finite-difference checks, elementwise and shape ops

UNARY_CASES = [
    (ad.sigmoid, (-2.0, 2.0)),
    (ad.tanh, (-2.0, 2.0)),
    (ad.exp, (-2.0, 1.0)),
    (ad.log, (0.3, 3.0)),
    (ad.softplus, (-3.0, 3.0)),
    (lambda t: ad.log1mexp(t), (0.2, 4.0)),
    (lambda t: ad.relu(t), (0.25, 3.0)),   # kink avoided by the range
    (lambda t: ad.clamp(t, -0.9, 0.9), (-0.8, 0.8)),
    (lambda t: ad.scale(t, -1.7), (-2.0, 2.0)),
    (lambda t: t * t, (-2.0, 2.0)),
    (lambda t: ad.neg(t), (-2.0, 2.0)),
]


@pytest.mark.parametrize("op,rng_box", UNARY_CASES, ids=[
    "sigmoid", "tanh", "exp", "log", "softplus", "log1mexp", "relu",
    "clamp", "scale", "square", "neg"])
def test_unary_fd(op, rng_box, rng):
    lo, hi = rng_box
    x = rng.uniform(lo, hi, size=(3, 5))
    p = Parameter(x.copy(), "p")
    g = _grad_of(lambda: _scalar_loss(op(p)), p)

    def f(arr):
        p.data = arr
        return _scalar_loss(op(p)).item()

    fd = numeric_grad(f, x.copy())
    assert rel_err(g, fd) < 1e-6


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), (-1, False)])
def test_sum_mean_fd(axis, keepdims, rng):
    x = rng.normal(size=(4, 6))
    for op in (ad.tensor_sum, ad.mean):
        p = Parameter(x.copy(), "p")
        g = _grad_of(lambda: _scalar_loss(op(p, axis=axis, keepdims=keepdims)), p)

        def f(arr):
            p.data = arr
            return _scalar_loss(op(p, axis=axis, keepdims=keepdims)).item()

        assert rel_err(g, numeric_grad(f, x.copy())) < 1e-6


def test_logsumexp_fd(rng):
    x = rng.normal(size=(3, 7)) * 2
    p = Parameter(x.copy(), "p")
    weights = rng.normal(size=(3, 1))

    def build():
        return _scalar_loss(ad.logsumexp(p, axis=1, keepdims=True) * Tensor(weights))

    g = _grad_of(build, p)

    def f(arr):
        p.data = arr
        return build().item()

    assert rel_err(g, numeric_grad(f, x.copy())) < 1e-6


@pytest.mark.parametrize("shape_op", ["reshape", "narrow", "shift_right", "swap", "frame"])
def test_shape_ops_fd(shape_op, rng):
    if shape_op == "frame":
        x = rng.normal(size=(20,))
        build_out = lambda p: ad.frame(p, 8, 4)
    else:
        x = rng.normal(size=(3, 8))
        build_out = {
            "reshape": lambda p: ad.reshape(p, (6, 4)),
            "narrow": lambda p: ad.narrow(p, 1, 2, 5),
            "shift_right": ad.shift_right,
            "swap": ad.swap_last2,
        }[shape_op]
    p = Parameter(x.copy(), "p")
    mixer = Tensor(np.arange(1.0, 1.0 + build_out(Tensor(x)).data.size)
                   .reshape(build_out(Tensor(x)).data.shape))
    g = _grad_of(lambda: _scalar_loss(build_out(p) * mixer), p)

    def f(arr):
        p.data = arr
        return _scalar_loss(build_out(p) * mixer).item()

    assert rel_err(g, numeric_grad(f, x.copy())) < 1e-6


def test_matmul_fd(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    pa, pb = Parameter(a.copy(), "a"), Parameter(b.copy(), "b")
    with Tape() as tape:
        loss = _scalar_loss(ad.matmul(pa, pb))
    grads = tape.backward(loss)

    def fa(arr):
        pa.data = arr
        return _scalar_loss(ad.matmul(pa, pb)).item()

    def fb(arr):
        pb.data = arr
        return _scalar_loss(ad.matmul(pa, pb)).item()

    assert rel_err(grads["a"], numeric_grad(fa, a.copy())) < 1e-6
    assert rel_err(grads["b"], numeric_grad(fb, b.copy())) < 1e-6


def test_batched_matmul_fd(rng):
    a = rng.normal(size=(2, 4, 3))
    b = rng.normal(size=(2, 3, 5))
    pa, pb = Parameter(a.copy(), "a"), Parameter(b.copy(), "b")
    with Tape() as tape:
        loss = _scalar_loss(ad.matmul(pa, pb))
    grads = tape.backward(loss)

    def fa(arr):
        pa.data = arr
        return _scalar_loss(ad.matmul(pa, pb)).item()

    assert rel_err(grads["a"], numeric_grad(fa, a.copy())) < 1e-6


@pytest.mark.parametrize("dilation", [1, 2, 4])
@pytest.mark.parametrize("filter_size", [1, 2, 3])
def test_conv_fd(dilation, filter_size, rng):
    x = rng.normal(size=(2, 3, 12))
    w = rng.normal(size=(4, 3, filter_size)) * 0.5
    px, pw = Parameter(x.copy(), "x"), Parameter(w.copy(), "w")
    mixer = Tensor(rng.normal(size=(2, 4, 12)))

    def build():
        return _scalar_loss(ad.causal_dilated_conv1d(px, pw, dilation) * mixer)

    with Tape() as tape:
        loss = build()
    grads = tape.backward(loss)

    def fx(arr):
        px.data = arr
        return build().item()

    def fw(arr):
        pw.data = arr
        return build().item()

    assert rel_err(grads["x"], numeric_grad(fx, x.copy())) < 1e-6
    assert rel_err(grads["w"], numeric_grad(fw, w.copy())) < 1e-6


def test_broadcast_add_mul_fd(rng):
    a = rng.normal(size=(3, 1, 5))
    b = rng.normal(size=(4, 1))
    pa, pb = Parameter(a.copy(), "a"), Parameter(b.copy(), "b")

    def build():
        return _scalar_loss((pa + pb) * pb)

    with Tape() as tape:
        loss = build()
    grads = tape.backward(loss)
    assert grads["a"].shape == a.shape
    assert grads["b"].shape == b.shape

    def fb(arr):
        pb.data = arr
        return build().item()

    assert rel_err(grads["b"], numeric_grad(fb, b.copy())) < 1e-6


# ---------------------------------------------------------------------------
# a small gated network end to end

def test_gated_block_param_grads(rng):
    """Dilated conv -> gated tanh/sigmoid -> projection, fd on random coords."""
    x = Tensor(rng.normal(size=(2, 4, 16)))
    params = {
        "wf": Parameter(rng.normal(size=(6, 4, 3)) * 0.4, "wf"),
        "bf": Parameter(rng.normal(size=(6, 1)) * 0.1, "bf"),
        "wo": Parameter(rng.normal(size=(2, 3, 1)) * 0.4, "wo"),
    }

    def build():
        pre = ad.causal_dilated_conv1d(x, params["wf"], 2) + params["bf"]
        filt = ad.narrow(pre, 1, 0, 3)
        gate = ad.narrow(pre, 1, 3, 3)
        h = ad.tanh(filt) * ad.sigmoid(gate)
        return ad.mean(ad.causal_dilated_conv1d(h, params["wo"], 1))

    worst = check_param_grads(build, params, tol=1e-4, subset=8, rng=rng)
    assert worst < 1e-4


def test_conv_primitive_is_causal(rng):
    """Perturbing x at t only changes outputs at t' >= t."""
    x = rng.normal(size=(1, 2, 24))
    w = rng.normal(size=(3, 2, 3))
    base = ad.causal_dilated_conv1d(Tensor(x), Tensor(w), 4).data
    t0 = 13
    x2 = x.copy()
    x2[:, :, t0] += 1.0
    out = ad.causal_dilated_conv1d(Tensor(x2), Tensor(w), 4).data
    diff = np.abs(out - base).sum(axis=(0, 1))
    assert np.all(diff[:t0] == 0.0)
    assert diff[t0] > 0.0


# ---------------------------------------------------------------------------
# bookkeeping

def test_backward_requires_scalar():
    p = Parameter(np.ones((3,)), "p")
    with Tape() as tape:
        out = p * p
    with pytest.raises(ValueError):
        tape.backward(out)


def test_frozen_params_get_no_grads(rng):
    a = Parameter(rng.normal(size=(3,)), "a")
    b = Parameter(rng.normal(size=(3,)), "b")
    b.requires_grad = False
    with Tape() as tape:
        loss = ad.tensor_sum(a * b)
    grads = tape.backward(loss)
    assert "a" in grads and "b" not in grads


def test_grad_accumulates_over_reuse(rng):
    p = Parameter(np.array([2.0]), "p")
    with Tape() as tape:
        loss = ad.tensor_sum(p * p + p)
    g = tape.backward(loss)["p"]
    assert abs(g[0] - 5.0) < 1e-12   # d(x^2 + x)/dx at 2


def test_backward_deterministic(rng):
    x = rng.normal(size=(2, 3, 10))
    w = rng.normal(size=(4, 3, 3))
    p = Parameter(w, "w")

    def run():
        p.grad = None
        with Tape() as tape:
            out = ad.causal_dilated_conv1d(Tensor(x), p, 2)
            loss = ad.mean(ad.tanh(out) * ad.sigmoid(out))
        return tape.backward(loss)["w"]

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_nonfinite_detection_names_node():
    p = Parameter(np.array([-1.0]), "p")
    with Tape() as tape:
        with np.errstate(invalid="ignore"):
            out = ad.log(p)
        loss = ad.tensor_sum(out)
    with pytest.raises(NonFiniteError) as exc_info:
        tape.backward(loss)
    assert "log" in str(exc_info.value)


def test_narrow_validates_range():
    t = Tensor(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        ad.narrow(t, 1, 3, 4)


def test_clamp_requires_ordered_bounds():
    with pytest.raises(ValueError):
        ad.clamp(Tensor(np.zeros(2)), 1.0, -1.0)
