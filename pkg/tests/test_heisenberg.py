"""Tests for the group operations, the oscillatory-integral heat kernel,
its under-integral derivatives, and the perturbation integrand."""

import math

import numpy as np
import pytest
from scipy.special import erf

from srheat.geometry import heisenberg_frame, sublaplacian_apply_values
from srheat.heisenberg import (
    DEFAULT_CONFIG,
    GroupElement,
    QuadratureConfig,
    ToleranceNotMetError,
    dilate,
    displayed_y_form,
    group_inv,
    group_mul,
    heat_kernel,
    heat_kernel_derivatives,
    heat_kernel_two_point,
    y_applied_kernel,
    y_applied_kernel_batch,
)
from srheat.quadrature import integrate_adaptive

TIGHT = QuadratureConfig(abs_tol=1e-14, rel_tol=1e-13)


# -- group operations -------------------------------------------------------

def test_group_law_example():
    p = GroupElement(1.0, 0.0, 0.0)
    q = GroupElement(0.0, 1.0, 0.0)
    assert group_mul(p, q) == GroupElement(1.0, 1.0, -0.5)


def test_group_identity_and_inverse():
    q = GroupElement(1.0, 2.0, 3.0)
    e = GroupElement()
    assert group_mul(q, e) == q
    assert group_mul(e, q) == q
    assert group_inv(q) == GroupElement(-1.0, -2.0, -3.0)
    assert group_inv(e) == e
    assert group_mul(q, group_inv(q)) == e  # exact in floating point


def test_group_associativity_instance():
    p = GroupElement(1.0, 0.0, 0.0)
    q = GroupElement(0.0, 1.0, 0.0)
    r = GroupElement(0.0, 0.0, 1.0)
    lhs = group_mul(group_mul(p, q), r)
    rhs = group_mul(p, group_mul(q, r))
    assert lhs == rhs


def test_dilation_examples():
    assert dilate(GroupElement(1.0, 1.0, 1.0), 2.0) == GroupElement(2.0, 2.0, 4.0)
    q = GroupElement(0.3, -0.7, 0.9)
    assert dilate(q, 1.0) == q
    with pytest.raises(ValueError):
        dilate(q, 0.0)
    with pytest.raises(ValueError):
        dilate(q, -2.0)


def test_dilation_is_group_automorphism():
    rng = np.random.default_rng(4)
    lam = 3.0
    for _ in range(5):
        p = GroupElement(*rng.normal(size=3))
        q = GroupElement(*rng.normal(size=3))
        lhs = dilate(group_mul(p, q), lam)
        rhs = group_mul(dilate(p, lam), dilate(q, lam))
        assert lhs.x == pytest.approx(rhs.x, abs=1e-14)
        assert lhs.y == pytest.approx(rhs.y, abs=1e-14)
        assert lhs.w == pytest.approx(rhs.w, abs=1e-12)


# -- heat kernel ------------------------------------------------------------

def test_kernel_origin_value():
    assert heat_kernel(1.0, GroupElement()) == pytest.approx(1.0 / 16.0, abs=1e-10)


def test_kernel_origin_scaling():
    for t in (0.25, 0.5, 2.0):
        assert heat_kernel(t, (0.0, 0.0, 0.0)) == pytest.approx(
            1.0 / (16.0 * t * t), rel=1e-9)


def test_kernel_accepts_tuples_and_elements():
    q = GroupElement(0.3, -0.1, 0.2)
    assert heat_kernel(0.7, q) == heat_kernel(0.7, (0.3, -0.1, 0.2))


def test_kernel_homogeneity_single_point():
    t, lam = 0.7, 2.0
    q = GroupElement(0.3, -0.1, 0.2)
    lhs = heat_kernel(t, q)
    rhs = lam ** 4 * heat_kernel(lam * lam * t, dilate(q, lam))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_kernel_homogeneity_grid():
    q = GroupElement(0.4, 0.2, -0.3)
    for t in (0.5, 1.0):
        for lam in (0.8, 1.5):
            lhs = heat_kernel(t, q)
            rhs = lam ** 4 * heat_kernel(lam * lam * t, dilate(q, lam))
            assert lhs == pytest.approx(rhs, abs=1e-10)


def test_kernel_even_under_inversion():
    rng = np.random.default_rng(11)
    for _ in range(4):
        q = GroupElement(*rng.normal(scale=0.7, size=3))
        assert heat_kernel(0.8, q) == pytest.approx(
            heat_kernel(0.8, group_inv(q)), rel=1e-11, abs=1e-13)


def test_kernel_positive():
    rng = np.random.default_rng(13)
    for _ in range(6):
        t = float(rng.uniform(0.2, 1.5))
        q = GroupElement(*rng.normal(scale=1.0, size=3))
        assert heat_kernel(t, q) > 0.0


def test_kernel_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        heat_kernel(0.0, GroupElement())
    with pytest.raises(ValueError):
        heat_kernel(-1.0, GroupElement())


def test_kernel_truncation_self_consistency():
    # QuadratureConfig invariant: doubling max_truncation moves the result
    # by less than abs_tol.
    q = GroupElement(0.5, 0.2, 0.4)
    v1 = heat_kernel(1.0, q, QuadratureConfig(max_truncation=100.0))
    v2 = heat_kernel(1.0, q, QuadratureConfig(max_truncation=200.0))
    assert abs(v1 - v2) < 1e-12


def test_kernel_tolerance_not_met():
    cfg = QuadratureConfig(abs_tol=1e-13, rel_tol=1e-13, max_nodes=30)
    with pytest.raises(ToleranceNotMetError) as exc_info:
        heat_kernel(0.05, GroupElement(0.1, 0.1, 2.0), cfg)
    assert math.isfinite(exc_info.value.estimate)


def test_config_validation():
    with pytest.raises(ValueError):
        QuadratureConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        QuadratureConfig(rel_tol=-1e-9)
    with pytest.raises(ValueError):
        QuadratureConfig(max_truncation=0.0)
    with pytest.raises(ValueError):
        QuadratureConfig(max_nodes=3)


def test_two_point_kernel():
    rng = np.random.default_rng(17)
    for _ in range(3):
        q = GroupElement(*rng.normal(size=3))
        assert heat_kernel_two_point(1.0, q, q) == pytest.approx(1.0 / 16.0, abs=1e-10)
    p = GroupElement(0.2, 0.5, -0.1)
    q = GroupElement(-0.4, 0.1, 0.3)
    assert heat_kernel_two_point(0.6, p, q) == pytest.approx(
        heat_kernel_two_point(0.6, q, p), rel=1e-10)
    assert heat_kernel_two_point(1.0, GroupElement(), GroupElement()) == pytest.approx(
        1.0 / 16.0, abs=1e-10)


def test_box_mass_factorized():
    # mass of h_1 over |x|,|y| <= 8, |w| <= 40, via the factorized form:
    # the x and y integrals are Gaussians with rate B(s) = s/(4 tanh s),
    # the w integral is 2 sin(40 s)/s.
    def f(s):
        s = np.asarray(s)
        tiny = np.abs(s) < 1e-8
        ssafe = np.where(tiny, 1.0, s)
        A = np.where(tiny, 1.0, ssafe / np.sinh(ssafe))
        B = np.where(tiny, 0.25, ssafe / (4.0 * np.tanh(ssafe)))
        planar = (math.pi / B) * erf(8.0 * np.sqrt(B)) ** 2
        vertical = 80.0 * np.sinc(40.0 * s / math.pi)
        return A * planar * vertical

    seeds = np.arange(0.0, 40.0, math.pi / 40.0)
    res = integrate_adaptive(f, 0.0, 40.0, abs_tol=1e-10, rel_tol=1e-9,
                             seed_edges=seeds, max_nodes=600_000)
    mass = res.value / (8.0 * math.pi ** 2) * 2.0
    assert 0.999 <= mass <= 1.0 + 1e-6


# -- derivatives and the PDE ------------------------------------------------

def test_time_derivative_against_finite_differences():
    rng = np.random.default_rng(19)
    for _ in range(3):
        t = float(rng.uniform(0.5, 1.2))
        q = GroupElement(*rng.normal(scale=0.6, size=3))
        kd = heat_kernel_derivatives(t, q, TIGHT)
        delta = 1e-5
        fd = (heat_kernel(t + delta, q, TIGHT) - heat_kernel(t - delta, q, TIGHT)) / (2 * delta)
        assert kd.dt == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_gradient_against_finite_differences():
    t = 0.8
    q = (0.4, -0.3, 0.25)
    kd = heat_kernel_derivatives(t, q, TIGHT)
    delta = 1e-5
    for axis in range(3):
        qp = list(q)
        qm = list(q)
        qp[axis] += delta
        qm[axis] -= delta
        fd = (heat_kernel(t, qp, TIGHT) - heat_kernel(t, qm, TIGHT)) / (2 * delta)
        assert kd.grad[axis] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_kernel_solves_heat_equation():
    F = heisenberg_frame()
    rng = np.random.default_rng(23)
    for _ in range(5):
        t = float(rng.uniform(0.3, 1.0))
        q = tuple(rng.normal(scale=0.8, size=3))
        kd = heat_kernel_derivatives(t, q, TIGHT)
        lap = sublaplacian_apply_values(F, q, kd.grad, kd.hess)
        assert abs(kd.dt - lap) < 1e-6


def test_derivatives_value_matches_kernel():
    t, q = 0.9, (0.2, 0.6, -0.4)
    kd = heat_kernel_derivatives(t, q)
    assert kd.value == pytest.approx(heat_kernel(t, q), rel=1e-11)


# -- perturbation integrand -------------------------------------------------

def _fd_y_apply(t, q, model, delta=1e-4):
    """Finite-difference application of the perturbation operator to the
    kernel: the oracle for y_applied_kernel."""
    a, b, c = model
    x, y, w = q
    rho = x * x + y * y
    gamma = a * x * x + b * x * y + c * y * y
    gx = 2.0 * a * x + b * y
    gy = b * x + 2.0 * c * y

    def h(px, py, pw):
        return heat_kernel(t, (px, py, pw), TIGHT)

    center = h(x, y, w)
    h_x = (h(x + delta, y, w) - h(x - delta, y, w)) / (2 * delta)
    h_y = (h(x, y + delta, w) - h(x, y - delta, w)) / (2 * delta)
    h_wp = h(x, y, w + delta)
    h_wm = h(x, y, w - delta)
    h_w = (h_wp - h_wm) / (2 * delta)
    h_ww = (h_wp - 2.0 * center + h_wm) / delta ** 2
    h_wx = (h(x + delta, y, w + delta) - h(x + delta, y, w - delta)
            - h(x - delta, y, w + delta) + h(x - delta, y, w - delta)) / (4 * delta ** 2)
    h_wy = (h(x, y + delta, w + delta) - h(x, y + delta, w - delta)
            - h(x, y - delta, w + delta) + h(x, y - delta, w - delta)) / (4 * delta ** 2)

    return (0.5 * gamma * rho * h_ww
            + gamma * (x * h_wy - y * h_wx)
            - 0.5 * (x * gy - y * gx) * h_w
            - 2.0 * (gx * h_x + gy * h_y))


def test_y_applied_zero_model():
    rng = np.random.default_rng(29)
    for _ in range(3):
        t = float(rng.uniform(0.2, 1.0))
        q = tuple(rng.normal(size=3))
        assert y_applied_kernel(t, q, (0.0, 0.0, 0.0)) == 0.0


def test_y_applied_vanishes_on_vertical_axis():
    for w in (-1.0, 0.0, 2.5):
        assert y_applied_kernel(0.7, (0.0, 0.0, w), (1.0, 2.0, 3.0)) == 0.0


def test_y_applied_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        y_applied_kernel(0.0, (0.1, 0.2, 0.3), (1.0, 0.0, 1.0))


def test_y_applied_finite_difference_oracle():
    rng = np.random.default_rng(31)
    model = (1.0, 2.0, 3.0)
    checked = 0
    while checked < 20:
        t = float(rng.uniform(0.6, 1.2))
        q = tuple(rng.uniform(0.25, 0.9, size=3) * rng.choice([-1.0, 1.0], size=3))
        val = y_applied_kernel(t, q, model, TIGHT)
        if abs(val) < 1e-2:
            continue
        fd = _fd_y_apply(t, q, model)
        assert val == pytest.approx(fd, rel=1e-5)
        checked += 1


def test_displayed_form_is_inconsistent_with_kernel():
    # The transcription retained as a diagnostic does not match the
    # under-integral evaluation; both are finite, but they disagree far
    # beyond quadrature tolerance.
    t, q, model = 0.8, (0.5, 0.3, 0.2), (1.0, 0.0, 1.0)
    truth = y_applied_kernel(t, q, model)
    disp = displayed_y_form(t, q, model)
    assert math.isfinite(disp)
    assert abs(disp - truth) > 1e-3 * max(1.0, abs(truth))


def test_batch_matches_scalar():
    rng = np.random.default_rng(37)
    n = 24
    t = rng.uniform(0.05, 1.0, size=n)
    x = rng.normal(scale=0.7, size=n)
    y = rng.normal(scale=0.7, size=n)
    w = rng.normal(scale=0.7, size=n)
    model = (1.0, 2.0, 3.0)
    batch = y_applied_kernel_batch(t, x, y, w, model)
    for i in range(n):
        scalar = y_applied_kernel(float(t[i]), (x[i], y[i], w[i]), model, TIGHT)
        assert batch[i] == pytest.approx(scalar, rel=2e-5, abs=1e-8)


def test_batch_small_time_regime():
    # The late-stratum regime of the convolution: tiny times, points near
    # the origin where the integrand is large.
    model = (2.0, 1.0, 0.0)
    t = np.array([0.0016, 0.0016, 0.0062, 0.0062, 0.0016])
    x = np.array([0.05, 0.30, 0.02, 0.45, 0.70])
    y = np.array([0.02, -0.20, 0.04, 0.31, -0.50])
    w = np.array([0.01, 0.40, -0.02, 0.25, 1.10])
    batch = y_applied_kernel_batch(t, x, y, w, model)
    for i in range(len(t)):
        scalar = y_applied_kernel(float(t[i]), (x[i], y[i], w[i]), model, TIGHT)
        assert batch[i] == pytest.approx(scalar, rel=5e-5, abs=1e-8)


def test_batch_zero_model_and_validation():
    t = np.array([0.5, 0.5])
    z = np.zeros(2)
    assert np.all(y_applied_kernel_batch(t, z + 0.3, z - 0.2, z, (0, 0, 0)) == 0.0)
    with pytest.raises(ValueError):
        y_applied_kernel_batch(np.array([0.5, -0.1]), z, z, z, (1, 0, 1))
    with pytest.raises(ValueError):
        y_applied_kernel_batch(t, z[:1], z, z, (1, 0, 1))
