import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unit_ddpm.errors import ConfigurationError, ContractViolation
from unit_ddpm.numeric import (
    AdamState,
    Tensor,
    adam_step,
    backward,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    grad,
    l1_norm,
    linear,
    matmul,
    mean,
    relu,
    square,
    squared_l2,
    tabs,
    tanh,
    transpose,
    tsum,
)
from unit_ddpm.numeric import _fallback, kernels
from unit_ddpm.numeric.functional import conv_output_size
from unit_ddpm.numeric.rng import make_rng, restore_rng, rng_state

from oracles import central_difference, naive_conv2d, naive_conv_transpose2d


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-12, np.max(np.abs(a)), np.max(np.abs(b)))


# --- autodiff --------------------------------------------------------------------


def test_product_rule_by_hand():
    a, b = Tensor(3.0, requires_grad=True), Tensor(4.0, requires_grad=True)
    backward(a * b + a)
    assert a.grad == pytest.approx(5.0)
    assert b.grad == pytest.approx(3.0)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractViolation):
        backward(x * 2.0)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    y = x * x
    (g,) = grad(tsum(y + y), [x])
    np.testing.assert_allclose(g, 4 * x.data)


def test_grad_of_unreached_input_is_zero():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = Tensor(np.ones(3), requires_grad=True)
    gx, gy = grad(tsum(x), [x, y])
    np.testing.assert_array_equal(gx, np.ones((2, 2)))
    np.testing.assert_array_equal(gy, np.zeros(3))


def test_backward_overwrites_unless_accumulating():
    x = Tensor(np.array(2.0), requires_grad=True)
    backward(x * 3.0)
    backward(x * 3.0)
    assert x.grad == pytest.approx(3.0)
    backward(x * 3.0, accumulate=True)
    assert x.grad == pytest.approx(6.0)


def test_broadcast_gradients_reduce_to_operand_shape():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    ga, gb = grad(tsum(a * b), [a, b])
    np.testing.assert_allclose(ga, np.broadcast_to(b.data, (2, 3)))
    np.testing.assert_allclose(gb, a.data.sum(axis=0))


def test_numpy_on_the_left_builds_a_node():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = np.array([3.0, 3.0]) - x
    assert isinstance(y, Tensor)
    (g,) = grad(tsum(y), [x])
    np.testing.assert_array_equal(g, [-1.0, -1.0])


ELEMENTWISE = [
    ("square", lambda x: tsum(square(x))),
    ("tanh", lambda x: tsum(tanh(x))),
    ("abs", lambda x: tsum(tabs(x))),
    ("relu", lambda x: tsum(relu(x) * x)),
    ("div", lambda x: tsum(x / (square(x) + 1.0))),
    ("mean_axis", lambda x: tsum(square(mean(x, axis=1)))),
    ("transpose_matmul", lambda x: tsum(square(matmul(transpose(x), x)))),
    ("concat", lambda x: tsum(square(concat([x, x * 2.0], axis=1)))),
    ("l1", lambda x: l1_norm(x - 0.1)),
    ("l2", lambda x: squared_l2(x * 3.0)),
]


@pytest.mark.parametrize("name,f", ELEMENTWISE, ids=[n for n, _ in ELEMENTWISE])
def test_elementwise_ops_match_finite_differences(name, f):
    rng = np.random.default_rng(1)
    # keep clear of the kinks of abs / relu
    data = rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    x = Tensor(data, requires_grad=True)
    (g,) = grad(f(x), [x])
    fd = central_difference(lambda: f(Tensor(data)).item(), data)
    assert rel_err(g, fd) < 1e-7


# --- convolution -------------------------------------------------------------------


@pytest.mark.parametrize(
    "B,C,O,H,k,stride,pad",
    [(2, 3, 4, 6, 3, 1, (1, 1)), (1, 2, 3, 8, 3, 2, (1, 0)), (2, 1, 2, 5, 5, 1, (2, 2)), (1, 3, 2, 4, 1, 1, (0, 0))],
)
def test_conv2d_matches_nested_loops(B, C, O, H, k, stride, pad):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((B, C, H, H))
    w = rng.standard_normal((O, C, k, k))
    b = rng.standard_normal(O)
    out = conv2d(x, w, b, stride=stride, padding=pad).data
    np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,pad,k", [(2, 1, 4), (1, 1, 3), (2, 0, 3)])
def test_conv_transpose_matches_scatter_loops(stride, pad, k):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(2)
    out = conv_transpose2d(x, w, b, stride=stride, padding=pad).data
    np.testing.assert_allclose(out, naive_conv_transpose2d(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_transpose_is_adjoint_of_conv():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    y = rng.standard_normal((2, 4, 8, 8))
    lhs = np.sum(conv2d(x, w, padding=1).data * y)
    rhs = np.sum(x * conv_transpose2d(y, w, padding=1).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, (1, 1)), (2, (1, 0))])
def test_conv2d_gradients(stride, pad):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    r = rng.standard_normal(conv2d(x, w, b, stride, pad).shape)

    def loss(xx, ww, bb):
        return tsum(conv2d(xx, ww, bb, stride, pad) * r)

    tx, tw, tb = (Tensor(a, requires_grad=True) for a in (x, w, b))
    gx, gw, gb = grad(loss(tx, tw, tb), [tx, tw, tb])
    for g, arr in ((gx, x), (gw, w), (gb, b)):
        fd = central_difference(lambda: loss(x, w, b).item(), arr)
        assert rel_err(g, fd) < 1e-7


def test_conv_transpose2d_gradients():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 2, 3, 3))
    w = rng.standard_normal((2, 3, 4, 4))
    b = rng.standard_normal(3)
    r = rng.standard_normal((2, 3, 6, 6))

    def loss(xx, ww, bb):
        return tsum(conv_transpose2d(xx, ww, bb, stride=2, padding=1) * r)

    tx, tw, tb = (Tensor(a, requires_grad=True) for a in (x, w, b))
    gx, gw, gb = grad(loss(tx, tw, tb), [tx, tw, tb])
    for g, arr in ((gx, x), (gw, w), (gb, b)):
        fd = central_difference(lambda: loss(x, w, b).item(), arr)
        assert rel_err(g, fd) < 1e-7


def test_conv_rejects_inexact_geometry_and_even_kernels():
    x = np.zeros((1, 1, 8, 8))
    with pytest.raises(ConfigurationError):
        conv2d(x, np.zeros((1, 1, 3, 3)), stride=2, padding=1)  # (8 + 2 - 3) odd
    with pytest.raises(ConfigurationError):
        conv2d(x, np.zeros((1, 1, 2, 2)))
    with pytest.raises(ContractViolation):
        conv2d(x, np.zeros((1, 2, 3, 3)))
    assert conv_output_size(8, 3, 2, (1, 0)) == 4


@settings(max_examples=30, deadline=None)
@given(
    B=st.integers(1, 3), C=st.integers(1, 4), H=st.integers(3, 9), k=st.sampled_from([1, 3, 5]),
    stride=st.integers(1, 2), lo=st.integers(0, 2), hi=st.integers(0, 2), seed=st.integers(0, 2**16),
)
def test_backends_bit_identical(B, C, H, k, stride, lo, hi, seed):
    if H + lo + hi < k:
        return
    if not kernels.native_available():
        pytest.skip("compiled kernels not built")
    n_im2col, n_col2im = kernels.get_backend("native")
    x = np.random.default_rng(seed).standard_normal((B, C, H, H))
    a = n_im2col(x, k, stride, lo, hi)
    assert np.array_equal(a, _fallback.im2col(x, k, stride, lo, hi))
    g = np.random.default_rng(seed + 1).standard_normal(a.shape)
    assert np.array_equal(n_col2im(g, x.shape, k, stride, lo, hi), _fallback.col2im(g, x.shape, k, stride, lo, hi))


def test_python_backend_gives_same_conv(monkeypatch):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    ref = conv2d(x, w, padding=1).data
    monkeypatch.setattr(kernels, "im2col", _fallback.im2col)
    monkeypatch.setattr(kernels, "col2im", _fallback.col2im)
    assert np.array_equal(conv2d(x, w, padding=1).data, ref)


# --- batch norm, linear -----------------------------------------------------------------


@pytest.mark.parametrize("mode", ["train", "frozen", "eval"])
def test_batch_norm_gradients(mode):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((3, 2, 3, 3))
    gamma, beta = rng.uniform(0.5, 1.5, 2), rng.standard_normal(2)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)
    r = rng.standard_normal(x.shape)

    def loss(xx, gg, bb):
        # frozen buffers so repeated evaluation is side-effect free
        m = "frozen" if mode == "train" else mode
        return tsum(batch_norm(xx, gg, bb, rm.copy(), rv.copy(), m) * r)

    tx, tg, tb = (Tensor(a, requires_grad=True) for a in (x, gamma, beta))
    gx, gg, gb = grad(loss(tx, tg, tb), [tx, tg, tb])
    for g, arr in ((gx, x), (gg, gamma), (gb, beta)):
        fd = central_difference(lambda: loss(x, gamma, beta).item(), arr)
        assert rel_err(g, fd) < 1e-6


def test_batch_norm_modes():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
    rm, rv = np.zeros(2), np.ones(2)
    out = batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "train").data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    n = x.size // 2
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))
    before = (rm.copy(), rv.copy())
    batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "frozen")
    assert np.array_equal(rm, before[0]) and np.array_equal(rv, before[1])
    ev = batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "eval").data
    np.testing.assert_allclose(ev, (x - rm.reshape(1, -1, 1, 1)) / np.sqrt(rv.reshape(1, -1, 1, 1) + 1e-5))
    with pytest.raises(ConfigurationError):
        batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "nope")


def test_linear_and_gradients():
    rng = np.random.default_rng(10)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
    np.testing.assert_allclose(linear(x, w, b).data, x @ w.T + b)
    tx, tw, tb = (Tensor(a, requires_grad=True) for a in (x, w, b))
    gx, gw, gb = grad(tsum(square(linear(tx, tw, tb))), [tx, tw, tb])
    for g, arr in ((gx, x), (gw, w), (gb, b)):
        fd = central_difference(lambda: float(np.sum((x @ w.T + b) ** 2)), arr)
        assert rel_err(g, fd) < 1e-7


# --- Adam -------------------------------------------------------------------------------


def test_adam_first_steps_by_hand():
    p = {"w": np.array([1.0, -2.0])}
    s = AdamState.zeros_like(p)
    g1 = {"w": np.array([0.5, -1.0])}
    p1, s1 = adam_step(p, g1, s, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    # bias-corrected moments equal g and g^2 after one step -> update = lr * sign(g)
    np.testing.assert_allclose(p1["w"], [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 1.0 / (1.0 + 1e-8)])
    g2 = {"w": np.array([0.25, 0.0])}
    p2, s2 = adam_step(p1, g2, s1, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    m = 0.9 * 0.1 * 0.5 + 0.1 * 0.25
    v = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625
    mhat, vhat = m / (1 - 0.81), v / (1 - 0.999**2)
    assert p2["w"][0] == pytest.approx(p1["w"][0] - 0.1 * mhat / (np.sqrt(vhat) + 1e-8), rel=1e-14)
    assert s2.step_count == 2
    assert np.array_equal(p["w"], [1.0, -2.0])  # inputs untouched


def test_adam_rejects_bad_arguments():
    p = {"w": np.zeros(2)}
    s = AdamState.zeros_like(p)
    with pytest.raises(ContractViolation):
        adam_step(p, {"w": np.zeros(3)}, s, lr=0.1)
    with pytest.raises(ContractViolation):
        adam_step(p, {"v": np.zeros(2)}, s, lr=0.1)
    with pytest.raises((ConfigurationError, ContractViolation)):
        adam_step(p, {"w": np.zeros(2)}, s, lr=0.1, beta1=1.0)


def test_adam_minimises_quadratic():
    p = {"w": np.array([3.0, -4.0])}
    s = AdamState.zeros_like(p)
    for _ in range(2000):
        p, s = adam_step(p, {"w": 2 * p["w"]}, s, lr=0.01)
    assert np.max(np.abs(p["w"])) < 1e-2


# --- RNG --------------------------------------------------------------------------------


def test_rng_streams_independent_and_restorable():
    a = make_rng(5, 2, 0).standard_normal(4)
    assert np.array_equal(a, make_rng(5, 2, 0).standard_normal(4))
    assert not np.array_equal(a, make_rng(5, 2, 1).standard_normal(4))
    r = make_rng(5, 3)
    r.standard_normal(7)
    snap = rng_state(r)
    nxt = r.standard_normal(3)
    assert np.array_equal(restore_rng(snap).standard_normal(3), nxt)
