"""Noise schedules and the per-step denoising / flow update rules.

Step indices t run over [1, T]; denoising iterates t = T, T-1, ..., 1 and each
step maps x_t to x_{t-1}. Arrays inside a schedule are 0-indexed, so entry
t - 1 belongs to step t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .numerics import Vector, as_vector

SIGMA_POSTERIOR = "posterior"
SIGMA_ZERO = "zero"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion coefficients; immutable and safely shareable.

    beta[t-1] is the noise increment of step t, alpha = 1 - beta, alpha_bar the
    running product of alpha, and sigma the sampler's per-step noise scale.
    """

    T: int
    beta: Vector
    alpha: Vector
    alpha_bar: Vector
    sigma: Vector
    sigma_mode: str

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ParameterError(f"step index {t} outside [1, {self.T}]")


def make_linear_schedule(
    T: int,
    beta_start: float,
    beta_end: float,
    sigma_mode: str = SIGMA_POSTERIOR,
) -> NoiseSchedule:
    """Linear beta ramp from beta_start (t=1) to beta_end (t=T).

    In posterior mode sigma_t^2 = beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
    with alpha_bar_0 taken as 1, which makes sigma_1 = 0. Zero mode gives a
    fully deterministic sampler.
    """
    if T < 2:
        raise ParameterError(f"need T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if sigma_mode not in (SIGMA_POSTERIOR, SIGMA_ZERO):
        raise ParameterError(f"unknown sigma mode {sigma_mode!r}")

    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_mode == SIGMA_ZERO:
        sigma = np.zeros(T)
    else:
        prev_bar = np.concatenate(([1.0], alpha_bar[:-1]))
        sigma = np.sqrt(beta * (1.0 - prev_bar) / (1.0 - alpha_bar))
    return NoiseSchedule(T, beta, alpha, alpha_bar, sigma, sigma_mode)


def default_beta_range(T: int) -> tuple[float, float]:
    """The 1e-4..0.02 ramp rescaled so total noise is preserved at step count T.

    The reference ramp is defined at 1000 steps; shorter runs scale beta up
    (capped below 1 to stay a valid schedule).
    """
    scale = 1000.0 / T
    return min(1e-4 * scale, 0.98), min(0.02 * scale, 0.98)


def make_default_schedule(T: int, sigma_mode: str = SIGMA_POSTERIOR) -> NoiseSchedule:
    start, end = default_beta_range(T)
    return make_linear_schedule(T, start, end, sigma_mode)


def forward_sample(x0: Vector, t: int, noise: Vector, sched: NoiseSchedule) -> Vector:
    """Jump the forward process straight to step t:
    sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise.
    """
    x0 = as_vector(x0)
    noise = as_vector(noise)
    if len(x0) != len(noise):
        raise DimensionError(f"length mismatch: {len(x0)} vs {len(noise)}")
    sched.check_step(t)
    ab = sched.alpha_bar[t - 1]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def posterior_mean(x_t: Vector, t: int, eps: Vector, sched: NoiseSchedule) -> Vector:
    """Mean of the reverse-step distribution:
    (1/sqrt(alpha_t)) * (x_t - ((1 - alpha_t)/sqrt(1 - alpha_bar_t)) * eps).
    """
    x_t = as_vector(x_t)
    eps = as_vector(eps)
    if len(x_t) != len(eps):
        raise DimensionError(f"length mismatch: {len(x_t)} vs {len(eps)}")
    sched.check_step(t)
    a = sched.alpha[t - 1]
    ab = sched.alpha_bar[t - 1]
    coeff = (1.0 - a) / math.sqrt(1.0 - ab)
    return (x_t - coeff * eps) / math.sqrt(a)


def ddpm_step(
    x_t: Vector, t: int, eps: Vector, sched: NoiseSchedule, step_noise: Vector
) -> Vector:
    """One reverse step: posterior mean plus sigma_t * step_noise.

    The final step (t == 1) is always deterministic; step_noise must come from
    the run's shared per-step stream so every worker applies identical noise.
    """
    mean = posterior_mean(x_t, t, eps, sched)
    if t == 1 or sched.sigma_mode == SIGMA_ZERO:
        return mean
    step_noise = as_vector(step_noise)
    if len(step_noise) != len(x_t):
        raise DimensionError(f"length mismatch: {len(x_t)} vs {len(step_noise)}")
    return mean + sched.sigma[t - 1] * step_noise


def euler_flow_step(z: Vector, v: Vector, dt: float) -> Vector:
    """Explicit Euler update of a learned velocity field: z + dt * v."""
    z = as_vector(z)
    v = as_vector(v)
    if len(z) != len(v):
        raise DimensionError(f"length mismatch: {len(z)} vs {len(v)}")
    if dt < 0.0:
        raise ParameterError(f"dt must be >= 0, got {dt}")
    if dt == 0.0:
        return z.copy()
    return z + dt * v
