"""Small 2-D toy distributions for training the predictor.

Every generator draws from the package's counter-based streams, so a dataset
is a pure function of (name, n, seed).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ParameterError
from .numerics import PURPOSE_DATASET, RngStream, stream_id

GAUSS8_RADIUS = 1.5
GAUSS8_STD = 0.15


def _rng(seed: int) -> RngStream:
    return RngStream(seed, stream_id(PURPOSE_DATASET))


def gauss8(n: int, seed: int) -> np.ndarray:
    """Mixture of 8 isotropic Gaussians evenly spaced on a circle."""
    rng = _rng(seed)
    comp = np.asarray(rng.integers(n, 0, 7))
    angles = comp * (2.0 * np.pi / 8.0)
    centers = GAUSS8_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + GAUSS8_STD * rng.normals(2 * n).reshape(n, 2)


def _standardize(pts: np.ndarray) -> np.ndarray:
    return (pts - pts.mean(axis=0)) / pts.std(axis=0)


def swiss_roll(n: int, seed: int) -> np.ndarray:
    """2-D spiral with radial noise, standardized per axis."""
    rng = _rng(seed)
    theta = 1.5 * np.pi * (1.0 + 2.0 * rng.uniforms(n))
    pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)
    pts += 0.4 * rng.normals(2 * n).reshape(n, 2)
    return _standardize(pts)


def two_moons(n: int, seed: int) -> np.ndarray:
    """Two interleaved half-circles with noise, standardized per axis."""
    rng = _rng(seed)
    n_upper = n // 2
    angles = np.pi * rng.uniforms(n)
    upper = np.stack([np.cos(angles[:n_upper]), np.sin(angles[:n_upper])], axis=1)
    lower = np.stack(
        [1.0 - np.cos(angles[n_upper:]), 0.5 - np.sin(angles[n_upper:])], axis=1
    )
    pts = np.concatenate([upper, lower]) + 0.08 * rng.normals(2 * n).reshape(n, 2)
    return _standardize(pts)


_GENERATORS = {
    "gauss8": gauss8,
    "swiss_roll": swiss_roll,
    "two_moons": two_moons,
}

DATASET_NAMES = tuple(sorted(_GENERATORS))


def make_dataset(name: str, n: int, seed: int) -> np.ndarray:
    """Generate n points of the named distribution, shape (n, 2)."""
    if name not in _GENERATORS:
        raise ConfigError(f"unknown dataset {name!r}; have {', '.join(DATASET_NAMES)}")
    if n < 1:
        raise ParameterError("dataset size must be positive")
    return _GENERATORS[name](n, seed)
