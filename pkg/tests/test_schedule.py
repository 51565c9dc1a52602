"""Schedules and the per-step update rules.

The T=5 end-to-end check rebuilds the whole denoising recurrence from the
written formulas (inline, no calls into the package's step functions) and
requires agreement to 1e-12 per element.
"""

import math

import numpy as np
import pytest

from parastep.errors import DimensionError, ParameterError
from parastep.numerics import PURPOSE_STEP, draw_normal, stream_id
from parastep.schedule import (
    SIGMA_POSTERIOR,
    SIGMA_ZERO,
    NoiseSchedule,
    ddpm_step,
    default_beta_range,
    euler_flow_step,
    forward_sample,
    make_default_schedule,
    make_linear_schedule,
    posterior_mean,
)


def test_alpha_bar_t2_hand_value():
    s = make_linear_schedule(2, 0.1, 0.2)
    assert s.alpha_bar == pytest.approx([0.9, 0.72], rel=1e-15)


def test_alpha_bar_matches_running_product_oracle():
    s = make_linear_schedule(10, 1e-4, 0.02)
    prod = 1.0
    for t in range(10):
        prod *= 1.0 - s.beta[t]
        assert s.alpha_bar[t] == prod


def test_alpha_bar_strictly_decreasing():
    for T in (2, 5, 50, 300):
        s = make_default_schedule(T)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.array_equal(s.alpha, 1.0 - s.beta)


def test_sigma_zero_mode():
    s = make_linear_schedule(6, 0.01, 0.3, sigma_mode=SIGMA_ZERO)
    assert np.all(s.sigma == 0.0)
    assert s.sigma_mode == SIGMA_ZERO


def test_sigma_posterior_hand_value():
    # beta = [0.25, 0.25]: sigma_1 = 0 (alpha_bar_0 := 1) and
    # sigma_2 = sqrt(0.25 * (1 - 0.75) / (1 - 0.5625)) = sqrt(1/7).
    s = make_linear_schedule(2, 0.25, 0.25)
    assert s.sigma[0] == 0.0
    assert s.sigma[1] == pytest.approx(math.sqrt(1.0 / 7.0), rel=1e-15)


def test_make_linear_schedule_rejects_bad_params():
    with pytest.raises(ParameterError):
        make_linear_schedule(1, 0.1, 0.2)
    with pytest.raises(ParameterError):
        make_linear_schedule(5, 0.0, 0.2)
    with pytest.raises(ParameterError):
        make_linear_schedule(5, 0.3, 0.2)
    with pytest.raises(ParameterError):
        make_linear_schedule(5, 0.1, 1.0)
    with pytest.raises(ParameterError):
        make_linear_schedule(5, 0.1, 0.2, sigma_mode="learned")


def test_default_beta_range_scales_with_T():
    assert default_beta_range(1000) == (1e-4, 0.02)
    assert default_beta_range(2000) == (5e-5, 0.01)
    assert default_beta_range(10) == (0.01, 0.98)   # end capped below 1
    assert default_beta_range(5) == (0.02, 0.98)


def test_check_step_bounds():
    s = make_default_schedule(5)
    with pytest.raises(ParameterError):
        s.check_step(0)
    with pytest.raises(ParameterError):
        s.check_step(6)


# ---------------------------------------------------------------- forward

def test_forward_sample_limits():
    s = make_linear_schedule(2, 0.36, 0.36)  # alpha_bar = [0.64, 0.4096]
    x0 = np.array([1.0, -2.0])
    z = np.array([0.5, 0.5])
    assert forward_sample(x0, 1, np.zeros(2), s) == pytest.approx(0.8 * x0, rel=1e-15)
    assert forward_sample(np.zeros(2), 1, z, s) == pytest.approx(0.6 * z, rel=1e-15)
    # direct substitution: alpha_bar = 0.64, x0 = noise = [1] -> 0.8 + 0.6
    got = forward_sample(np.array([1.0]), 1, np.array([1.0]), s)
    assert got == pytest.approx([1.4], rel=1e-12)


def test_forward_sample_statistics():
    s = make_default_schedule(20)
    t = 12
    x0 = np.array([1.5, -0.5])
    n = 10_000
    ab = s.alpha_bar[t - 1]
    draws = np.empty((n, 2))
    for i in range(n):
        z = draw_normal(1000 + i, stream_id(PURPOSE_STEP, t), 2)
        draws[i] = forward_sample(x0, t, z, s)
    want_mean = math.sqrt(ab) * x0
    se = math.sqrt(1.0 - ab) / math.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - want_mean) < 3 * se)
    assert np.all(np.abs(draws.var(axis=0) / (1.0 - ab) - 1.0) < 0.05)


def test_forward_sample_dimension_mismatch():
    s = make_default_schedule(4)
    with pytest.raises(DimensionError):
        forward_sample(np.zeros(2), 1, np.zeros(3), s)


# ---------------------------------------------------------------- reverse

def test_posterior_mean_hand_value():
    # t=1 with beta_1 = 0.25: (1/sqrt(0.75)) * (1 - (0.25/0.5) * 0.5) = sqrt(0.75)
    s = make_linear_schedule(2, 0.25, 0.25)
    got = posterior_mean(np.array([1.0]), 1, np.array([0.5]), s)
    assert got == pytest.approx([0.8660254037844387], abs=1e-12)


def test_posterior_mean_eps_zero():
    s = make_default_schedule(8)
    x = np.array([0.3, -0.7])
    got = posterior_mean(x, 5, np.zeros(2), s)
    assert got == pytest.approx(x / math.sqrt(s.alpha[4]), rel=1e-15)


def test_posterior_mean_affine_in_eps():
    s = make_default_schedule(8)
    x = np.array([0.4, 1.1])
    e1 = np.array([0.2, -0.3])
    e2 = np.array([-1.0, 0.5])
    lhs = posterior_mean(x, 3, e1 + e2, s) - posterior_mean(x, 3, e2, s)
    rhs = posterior_mean(x, 3, e1, s) - posterior_mean(x, 3, np.zeros(2), s)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_ddpm_step_zero_mode_is_posterior_mean():
    s = make_linear_schedule(6, 0.01, 0.3, sigma_mode=SIGMA_ZERO)
    x = np.array([0.9, -0.1])
    e = np.array([0.3, 0.4])
    z = np.array([5.0, -5.0])
    assert np.array_equal(ddpm_step(x, 4, e, s, z), posterior_mean(x, 4, e, s))


def test_ddpm_step_final_step_deterministic():
    s = make_linear_schedule(6, 0.01, 0.3)
    x = np.array([0.9, -0.1])
    e = np.array([0.3, 0.4])
    out1 = ddpm_step(x, 1, e, s, np.array([100.0, 100.0]))
    out2 = ddpm_step(x, 1, e, s, np.array([-9.0, 2.0]))
    assert np.array_equal(out1, out2)


def test_ddpm_step_affine_in_eps():
    s = make_default_schedule(8)
    x = np.array([0.4, 1.1])
    z = np.array([0.1, 0.2])
    e1 = np.array([0.2, -0.3])
    e2 = np.array([-1.0, 0.5])
    lhs = ddpm_step(x, 5, e1 + e2, s, z) - ddpm_step(x, 5, e2, s, z)
    rhs = ddpm_step(x, 5, e1, s, z) - ddpm_step(x, 5, np.zeros(2), s, z)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_ddpm_step_dimension_mismatches():
    s = make_default_schedule(4)
    with pytest.raises(DimensionError):
        ddpm_step(np.zeros(2), 3, np.zeros(3), s, np.zeros(2))
    with pytest.raises(DimensionError):
        ddpm_step(np.zeros(2), 3, np.zeros(2), s, np.zeros(3))


def test_reconstruction_at_t1():
    # Build x_1 from known x0 and noise, then denoise deterministically:
    # the chain inverts exactly at the final step.
    s = make_default_schedule(12)
    x0 = np.array([0.8, -1.3])
    e = np.array([0.45, 0.9])
    x1 = forward_sample(x0, 1, e, s)
    back = ddpm_step(x1, 1, e, s, np.zeros(2))
    assert back == pytest.approx(x0, abs=1e-9)


def test_t5_trajectory_matches_inline_recurrence():
    # Full 5-step chain vs the formulas written out longhand. The "predictor"
    # is the fixed map eps = 0.5*x + 0.1*t so no network is involved.
    s = make_default_schedule(5)
    x = np.array([1.2, -0.4])
    via_pkg = x.copy()
    via_hand = x.copy()
    for t in range(5, 0, -1):
        z = draw_normal(11, stream_id(PURPOSE_STEP, t), 2)
        eps_p = 0.5 * via_pkg + 0.1 * t
        via_pkg = ddpm_step(via_pkg, t, eps_p, s, z)
        a = 1.0 - s.beta[t - 1]
        ab = s.alpha_bar[t - 1]
        prev_ab = s.alpha_bar[t - 2] if t > 1 else 1.0
        eps_h = 0.5 * via_hand + 0.1 * t
        mean = (via_hand - (1.0 - a) / math.sqrt(1.0 - ab) * eps_h) / math.sqrt(a)
        sig = 0.0 if t == 1 else math.sqrt(
            s.beta[t - 1] * (1.0 - prev_ab) / (1.0 - ab)
        )
        via_hand = mean + sig * z
        assert via_pkg == pytest.approx(via_hand, abs=1e-12)


# ---------------------------------------------------------------- flow

def test_euler_flow_step_identity_and_substitution():
    z = np.array([1.0, 1.0])
    v = np.array([2.0, -2.0])
    out = euler_flow_step(z, v, 0.0)
    assert np.array_equal(out, z)
    out[0] = 99.0
    assert z[0] == 1.0  # dt=0 returns a copy, not an alias
    assert euler_flow_step(z, v, 0.5) == pytest.approx([2.0, 0.0], rel=1e-15)


def test_euler_flow_step_composes():
    z = np.array([0.2, -0.9, 1.4])
    v = np.array([1.0, 0.5, -2.0])
    two = euler_flow_step(euler_flow_step(z, v, 0.25), v, 0.25)
    assert two == pytest.approx(euler_flow_step(z, v, 0.5), rel=1e-15)


def test_euler_flow_step_errors():
    with pytest.raises(ParameterError):
        euler_flow_step(np.zeros(2), np.zeros(2), -0.1)
    with pytest.raises(DimensionError):
        euler_flow_step(np.zeros(2), np.zeros(3), 0.1)


def test_schedule_is_frozen():
    s = make_default_schedule(4)
    with pytest.raises(Exception):
        s.T = 9
    assert isinstance(s, NoiseSchedule)
    assert s.sigma_mode == SIGMA_POSTERIOR
