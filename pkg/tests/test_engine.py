import numpy as np
import pytest

from helpers import central_difference, max_rel_error
from mmwinr.engine import (
    AdamState,
    Layout,
    NonFiniteLossError,
    ParamVector,
    adam_step,
    attention,
    attention_backward,
    check_finite,
    conv2d,
    conv2d_backward,
    conv_out_size,
    dense,
    dense_backward,
)


def test_layout_offsets():
    lay = Layout.of(("a", (2, 3)), ("b", (4,)))
    assert lay.size == 10
    assert lay.offsets["b"] == (6, 4, (4,))
    pv = ParamVector(lay, np.arange(10.0))
    assert np.array_equal(pv["a"], [[0, 1, 2], [3, 4, 5]])
    pv["b"] = 7.0
    assert np.all(pv.values[6:] == 7.0)
    with pytest.raises(ValueError):
        Layout.of(("a", (1,)), ("a", (2,)))
    with pytest.raises(ValueError):
        ParamVector(lay, np.zeros(9))


def test_dense_rows_independent(rng):
    h = rng.standard_normal((257, 40))
    w = rng.standard_normal((33, 40))
    b = rng.standard_normal(33)
    full = dense(h, w, b)
    for i in (0, 100, 256):
        assert np.array_equal(dense(h[i:i + 1], w, b)[0], full[i])
    np.testing.assert_allclose(full, h @ w.T + b, rtol=1e-12)


def _check_grad(loss, params, analytic, h=1e-6, tol=1e-6):
    idx = np.arange(params.size)
    fd = central_difference(loss, params.reshape(-1), idx, h)
    assert max_rel_error(analytic.reshape(-1), fd, 1e-8) < tol


def test_dense_backward_fd(rng):
    h = rng.standard_normal((5, 4))
    w = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)
    c = rng.standard_normal((5, 3))
    loss = lambda: float(np.sum(c * dense(h, w, b)))  # noqa: E731
    dh, dw, db = dense_backward(c, h, w)
    _check_grad(loss, h, dh)
    _check_grad(loss, w, dw)
    _check_grad(loss, b, db)


def test_conv_against_direct_loop(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    y, _ = conv2d(x, w, b)
    ho, wo = conv_out_size(7), conv_out_size(6)
    assert y.shape == (2, 4, ho, wo) == (2, 4, 4, 3)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(y)
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv_backward_fd(rng):
    x = rng.standard_normal((2, 2, 6, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    y, cache = conv2d(x, w, b)
    c = rng.standard_normal(y.shape)
    loss = lambda: float(np.sum(c * conv2d(x, w, b)[0]))  # noqa: E731
    dx, dw, db = conv2d_backward(c, cache)
    _check_grad(loss, x, dx)
    _check_grad(loss, w, dw)
    _check_grad(loss, b, db)
    assert conv2d_backward(c, cache, need_input_grad=False)[0] is None


def test_attention_backward_fd(rng):
    h = rng.standard_normal((5, 4))
    wq, wk, wv = (rng.standard_normal((4, 4)) * 0.5 for _ in range(3))
    c = rng.standard_normal((5, 4))
    loss = lambda: float(np.sum(c * attention(h, wq, wk, wv)[0]))  # noqa: E731
    _, cache = attention(h, wq, wk, wv)
    dh, dq, dk, dv = attention_backward(c, cache)
    _check_grad(loss, h, dh)
    _check_grad(loss, wq, dq)
    _check_grad(loss, wk, dk)
    _check_grad(loss, wv, dv)


def test_attention_constant_rows_stay_equal(rng):
    h = np.tile(rng.standard_normal(4), (6, 1))
    u, _ = attention(h, *(rng.standard_normal((4, 4)) for _ in range(3)))
    assert np.allclose(u, u[0])


def test_single_parameter_closed_form():
    # f(w) = w x, loss = (w x - t)^2, d/dw = 2 x (w x - t)
    x, t, w = 1.7, 0.4, -0.3
    _, dw, _ = dense_backward(np.array([[2.0 * (w * x - t)]]), np.array([[x]]), np.array([[w]]))
    assert abs(dw[0, 0] - 2 * x * (w * x - t)) < 1e-12


def test_adam_zero_gradient():
    lay = Layout.of(("p", (3,)))
    p = ParamVector(lay, np.array([1.0, -2.0, 3.0]))
    new, st = adam_step(p, p.zeros_like(), AdamState.fresh(lay))
    assert np.array_equal(new.values, p.values)
    assert st.step == 1


def test_adam_first_step_is_lr_sign():
    lay = Layout.of(("p", (4,)))
    p = ParamVector(lay, np.zeros(4))
    g = ParamVector(lay, np.array([3.0, -0.01, 200.0, -5.0]))
    new, _ = adam_step(p, g, AdamState.fresh(lay, lr=1e-3))
    np.testing.assert_allclose(new.values, -1e-3 * np.sign(g.values), rtol=1e-6)


def test_adam_against_reference_recurrence(rng):
    """Three steps against the textbook update written out longhand."""
    lay = Layout.of(("p", (5,)))
    p = ParamVector(lay, rng.standard_normal(5))
    st = AdamState.fresh(lay, lr=0.01)
    ref = p.values.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    for k in range(1, 4):
        g = rng.standard_normal(5)
        p, st = adam_step(p, ParamVector(lay, g), st)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    np.testing.assert_allclose(p.values, ref, rtol=1e-13)


def test_adam_layout_mismatch():
    a = ParamVector(Layout.of(("p", (3,))))
    b = ParamVector(Layout.of(("q", (3,))))
    with pytest.raises(ValueError):
        adam_step(a, b, AdamState.fresh(3))


def test_check_finite_carries_term():
    with pytest.raises(NonFiniteLossError) as info:
        check_finite("ssim", float("nan"))
    assert info.value.term == "ssim"
    assert check_finite("mse", 1.5) == 1.5
