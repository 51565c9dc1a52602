"""Vector arithmetic, counter-based random streams, and divergence metrics.

Everything here is a pure function of its inputs. That is a hard requirement:
distributed workers regenerate shared noise locally instead of receiving it
over the wire, so the same (seed, stream, counter) triple must yield identical
bits on every worker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateReferenceError, DimensionError, ParameterError

Vector = np.ndarray

_MASK64 = 0xFFFFFFFFFFFFFFFF

# Stream-id allocation: (purpose << 32) | index. Keeping purposes apart means a
# new draw site can never collide with the per-step sampling streams.
PURPOSE_INIT = 0         # initial x_T of a generation run (index: sample number)
PURPOSE_STEP = 1         # per-step sampler noise (index: step t)
PURPOSE_TRAIN = 2        # per-iteration training draws (index: iteration)
PURPOSE_WEIGHT_INIT = 3  # layer initialization (index: layer)
PURPOSE_DATASET = 4      # dataset generation (index: 0)


def stream_id(purpose: int, index: int = 0) -> int:
    return ((purpose << 32) | (index & 0xFFFFFFFF)) & _MASK64


_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)


def _mix64_scalar(z: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit avalanche (exact Python ints)."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    """Same finalizer over a uint64 array (wraps modulo 2^64 natively)."""
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> _S30)) * np.uint64(_MIX1)
    z = (z ^ (z >> _S27)) * np.uint64(_MIX2)
    return z ^ (z >> _S31)


def _words(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    """64 random bits per counter, a pure function of (seed, stream, counter)."""
    h = _mix64_scalar(seed & _MASK64)
    h = _mix64_scalar(h ^ (stream & _MASK64))
    return _mix64(np.uint64(h) ^ counters.astype(np.uint64))


def _uniforms_at(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    # 53 high bits, shifted into (0, 1]: never 0, so the log below is safe.
    bits = _words(seed, stream, counters) >> np.uint64(11)
    return (bits + np.uint64(1)).astype(np.float64) * 2.0 ** -53


def _normals_at(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    """Standard normals at absolute counter indices (O(1) random access).

    Counters are consumed in Box-Muller pairs (2j, 2j+1); index parity selects
    which of the pair's two outputs is returned.
    """
    base = counters & ~np.uint64(1)
    u1 = _uniforms_at(seed, stream, base)
    u2 = _uniforms_at(seed, stream, base + np.uint64(1))
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    return np.where(counters == base, r * np.cos(theta), r * np.sin(theta))


@dataclass
class RngStream:
    """A deterministic, independently addressable stream of random values.

    Replaying a stream from the same counter reproduces identical bits; streams
    with distinct ids under one seed are statistically independent.
    """

    run_seed: int
    stream: int
    counter: int = field(default=0)

    def _take(self, n: int) -> np.ndarray:
        if n < 1:
            raise ParameterError("draw count must be >= 1")
        counters = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return counters

    def normals(self, n: int) -> Vector:
        """n standard-normal variates; advances the counter by n."""
        return _normals_at(self.run_seed, self.stream, self._take(n))

    def uniforms(self, n: int) -> Vector:
        """n uniforms in (0, 1]; advances the counter by n."""
        return _uniforms_at(self.run_seed, self.stream, self._take(n))

    def integers(self, n: int, lo: int, hi: int) -> list[int]:
        """n integers uniform over [lo, hi] inclusive; advances the counter by n."""
        if hi < lo:
            raise ParameterError("integer range is empty")
        span = hi - lo + 1
        return [lo + min(int(u * span), span - 1) for u in self.uniforms(n)]


def draw_normal(seed: int, stream: int, n: int, counter: int = 0) -> Vector:
    """Convenience wrapper: n normals from a fresh stream positioned at counter."""
    return RngStream(seed, stream, counter).normals(n)


def as_vector(values) -> Vector:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"expected a 1-D vector of length >= 1, got shape {v.shape}")
    return v


def _require_same_length(a: Vector, b: Vector) -> None:
    if len(a) != len(b):
        raise DimensionError(f"length mismatch: {len(a)} vs {len(b)}")


def _sum_lr(values) -> float:
    # Plain left-to-right accumulation. Metric values feed frozen-expectation
    # tests, so the reduction order must not depend on array size or backend.
    total = 0.0
    for v in values:
        total += v
    return total


def rel_mae(a: Vector, b: Vector) -> float:
    """Mean |a_i - b_i| normalized by mean |a_i|; a is the reference.

    Not symmetric in its arguments. A zero-magnitude reference is an error,
    never a silent Inf.
    """
    a = as_vector(a)
    b = as_vector(b)
    _require_same_length(a, b)
    n = len(a)
    denom = _sum_lr(abs(float(x)) for x in a) / n
    if denom == 0.0:
        raise DegenerateReferenceError("reference vector has zero mean magnitude")
    num = _sum_lr(abs(float(x) - float(y)) for x, y in zip(a, b)) / n
    return num / denom


def mse(a: Vector, b: Vector) -> float:
    """Mean squared difference; symmetric, zero iff the vectors are identical."""
    a = as_vector(a)
    b = as_vector(b)
    _require_same_length(a, b)
    return _sum_lr((float(x) - float(y)) ** 2 for x, y in zip(a, b)) / len(a)
