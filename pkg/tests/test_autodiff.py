import math

import numpy as np
import pytest

from pinchcomp.autodiff import (Tape, Var, backward, grad_vars, sin, cos, sqrt,
                                log, exp, relu, absval, log2, finite_diff_check)
from pinchcomp import tapegraph as tg
from pinchcomp.geometry import build_geometry, PinchingState
from pinchcomp.rate import BeamformingState
from conftest import random_instance


def test_record_and_identity_gradient():
    t = Tape()
    x = t.record(0.0)
    g = backward(x)
    assert g[x] == 1.0


def test_add_two_leaves():
    t = Tape()
    x, y = t.record(1.5), t.record(2.5)
    g = backward(x + y)
    assert g[x] == 1.0 and g[y] == 1.0


def test_square_gradient():
    t = Tape()
    x = t.record(3.0)
    g = backward(x * x)
    assert g[x] == 6.0


def test_product_gradient():
    t = Tape()
    x, y = t.record(2.0), t.record(5.0)
    g = backward(x * y)
    assert g[x] == 5.0 and g[y] == 2.0


def test_modulus_squared_gradient():
    t = Tape()
    re, im = t.record(1.25), t.record(-0.75)
    g = backward(re * re + im * im)
    assert g[re] == pytest.approx(2 * 1.25)
    assert g[im] == pytest.approx(2 * -0.75)


def test_gradient_linearity():
    rng = np.random.default_rng(0)
    for _ in range(5):
        vals = rng.standard_normal(4)

        def f(xs):
            return sin(xs[0]) * xs[1] + exp(xs[2] * 0.3) / (xs[3] * xs[3] + 2.0)

        def h(xs):
            return xs[0] * xs[3] + log(xs[1] * xs[1] + 1.5)

        t = Tape()
        xs = [t.record(v) for v in vals]
        g_sum = backward(f(xs) + h(xs))
        t2 = Tape()
        xs2 = [t2.record(v) for v in vals]
        gf = backward(f(xs2))
        t3 = Tape()
        xs3 = [t3.record(v) for v in vals]
        gh = backward(h(xs3))
        for i in range(4):
            assert g_sum[xs[i]] == pytest.approx(gf[xs2[i]] + gh[xs3[i]], rel=1e-12)


def test_repeat_run_bitwise_identical():
    def run():
        t = Tape()
        xs = [t.record(v) for v in (0.3, 1.7, -2.2)]
        out = sin(xs[0] * xs[1]) + sqrt(xs[2] * xs[2]) * log2(xs[1] + 3.0)
        g = backward(out)
        return out.value, [g[x] for x in xs]

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2 and g1 == g2


def test_finite_diff_check_linear_function():
    def f(xs):
        return xs[0] * 3.0 + xs[1] * -2.0 + 7.0

    assert finite_diff_check(f, [0.4, 1.3]) < 1e-9


def test_finite_diff_check_composite():
    def f(xs):
        return sin(xs[0]) * sqrt(xs[1]) + log2(xs[0] * xs[1] + 2.0) - relu(xs[0] - 1.0)

    assert finite_diff_check(f, [1.4, 2.6]) < 1e-7


def test_relu_and_abs_gradients():
    t = Tape()
    x = t.record(-2.0)
    g = backward(relu(x))
    assert g[x] == 0.0
    t = Tape()
    x = t.record(2.0)
    g = backward(relu(x) * 3.0)
    assert g[x] == 3.0
    t = Tape()
    x = t.record(-1.5)
    g = backward(absval(x))
    assert g[x] == -1.0


def test_second_order_through_emitted_gradient():
    """d/dx of (dx^3/dx) = 6x via the graph-emitting backward."""
    t = Tape()
    x = t.record(2.0)
    f = x * x * x
    (gx,) = grad_vars(f, [x])
    assert gx.value == pytest.approx(12.0)
    g2 = backward(gx)
    assert g2[x] == pytest.approx(12.0)


def test_grad_vars_multi_target():
    t = Tape()
    x, y = t.record(1.2), t.record(-0.7)
    f = sin(x) * y + x / (y * y + 0.5)
    gx, gy = grad_vars(f, [x, y])
    assert gx.value == pytest.approx(math.cos(1.2) * -0.7 + 1 / (0.49 + 0.5), rel=1e-12)
    expect_gy = math.sin(1.2) - 1.2 * (2 * -0.7) / (0.49 + 0.5) ** 2
    assert gy.value == pytest.approx(expect_gy, rel=1e-12)


def test_sum_rate_gradients_match_finite_differences():
    """Tape gradients of the sum rate vs central differences (spot check).

    The full 20-instance sweep is in the acceptance suite.
    """
    geom, state, W = random_instance(21)
    gw, gx = tg.joint_rate_gradient(geom, W.w, state.x)
    h = 1e-6
    worst = 0.0
    rng = np.random.default_rng(0)
    for _ in range(6):
        b = rng.integers(2)
        n = rng.integers(geom.n_waveguides)
        p = rng.integers(geom.n_pas)
        x_hi = state.x.copy(); x_hi[b, n, p] += h
        x_lo = state.x.copy(); x_lo[b, n, p] -= h
        fd = (tg.sum_rate_value(geom, W.w, x_hi)
              - tg.sum_rate_value(geom, W.w, x_lo)) / (2 * h)
        worst = max(worst, abs(gx[b, n, p] - fd) / max(abs(fd), 1e-12))
    for _ in range(6):
        b = rng.integers(2)
        n = rng.integers(geom.n_waveguides)
        k = rng.integers(geom.n_users)
        w_hi = W.w.copy(); w_hi[b, n, k] += h
        w_lo = W.w.copy(); w_lo[b, n, k] -= h
        fd = (tg.sum_rate_value(geom, w_hi, state.x)
              - tg.sum_rate_value(geom, w_lo, state.x)) / (2 * h)
        worst = max(worst, abs(gw[b, n, k].real - fd) / max(abs(fd), 1e-12))
    assert worst < 1e-5


def test_closed_form_wgrad_matches_generic_backward():
    geom, state, W = random_instance(31)
    t = Tape()
    w_vars = tg.record_beamforming(t, W.w)
    a_const = tg.channel_constants(geom, state.x)
    closed = tg.wgrad_graph(t, a_const, w_vars, geom.noise_power)

    t2 = Tape()
    w_vars2 = tg.record_beamforming(t2, W.w)
    _, total = tg.rate_graph(t2, a_const, w_vars2, geom.noise_power)
    targets = [v for b in range(2) for row in w_vars2[b] for pair in row for v in pair]
    generic = grad_vars(total, targets)

    flat_closed = [g.value for b in range(2) for n in range(geom.n_waveguides)
                   for pair in closed[b][n] for g in pair]
    flat_generic = [g.value for g in generic]
    np.testing.assert_allclose(flat_closed, flat_generic, rtol=1e-10, atol=1e-18)


def test_closed_form_pgrad_matches_generic_backward():
    geom, state, W = random_instance(32)
    x_norm = state.x / geom.span
    t = Tape()
    w_vars = tg.record_beamforming(t, W.w)
    p_vars = tg.record_positions(t, x_norm)
    closed, _, _ = tg.pgrad_graph(t, geom, p_vars, w_vars, geom.noise_power)

    t2 = Tape()
    w_vars2 = tg.record_beamforming(t2, W.w)
    p_vars2 = tg.record_positions(t2, x_norm)
    a = tg.channel_graph(t2, geom, p_vars2)
    _, total = tg.rate_graph(t2, a, w_vars2, geom.noise_power)
    targets = [v for b in range(2) for row in p_vars2[b] for v in row]
    generic = grad_vars(total, targets)

    flat_closed = [closed[b][n][p].value for b in range(2)
                   for n in range(geom.n_waveguides) for p in range(geom.n_pas)]
    flat_generic = [g.value for g in generic]
    np.testing.assert_allclose(flat_closed, flat_generic, rtol=1e-9, atol=1e-18)


def test_gradient_shapes_cover_variables():
    geom, state, W = random_instance(33)
    gw, gx = tg.joint_rate_gradient(geom, W.w, state.x)
    assert gw.shape == W.w.shape
    assert gx.shape == state.x.shape
    assert np.all(np.isfinite(gw.view(float))) and np.all(np.isfinite(gx))
