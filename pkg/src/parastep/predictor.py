"""The toy noise predictor: an MLP over (sample, sinusoidal time embedding).

The same network class serves two training objectives: predicting the noise
component of a forward-process sample, or predicting the straight-path
velocity for Euler-integrated flow sampling.

Inference (`forward`, `forward_batch`) is the bitwise contract the sampling
engines rely on: identical weights and inputs give identical bits everywhere,
and a batched call is defined element-for-element by the single-sample path.
Training uses an internal vectorized path for speed; it only needs to be
deterministic run-to-run, not bit-identical to the inference path.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .datasets import make_dataset
from .errors import (
    ConfigError,
    DimensionError,
    ParameterError,
    TrainingDivergedError,
    WeightFormatError,
)
from .numerics import PURPOSE_TRAIN, PURPOSE_WEIGHT_INIT, RngStream, Vector, as_vector, stream_id
from .schedule import NoiseSchedule

ACT_TANH = "tanh"
ACT_SILU = "silu"
_ACT_TO_ID = {ACT_TANH: 0, ACT_SILU: 1}
_ID_TO_ACT = {v: k for k, v in _ACT_TO_ID.items()}

OBJECTIVE_NOISE = "noise"
OBJECTIVE_FLOW = "flow"

_EMBED_MAX_PERIOD = 10000.0


def time_embed(t: int, T: int, dim: int) -> Vector:
    """Interleaved sin/cos of the step index at geometrically spaced rates.

    The usual transformer-style construction on the absolute index: dim/2
    angular rates from 1 down to 1/10000, so no channel advances more than
    one radian between adjacent steps. Each (sin, cos) pair has unit norm,
    making the embedding's squared norm always dim/2. T only bounds t.
    """
    if dim < 2 or dim % 2 != 0:
        raise ParameterError(f"embedding dim must be even and >= 2, got {dim}")
    if not 0 <= t <= T:
        raise ParameterError(f"step index {t} outside [0, {T}]")
    half = dim // 2
    if half == 1:
        rates = np.array([1.0])
    else:
        rates = _EMBED_MAX_PERIOD ** (-np.arange(half) / (half - 1))
    angles = t * rates
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out), row-major
    b: np.ndarray  # (fan_out,)


@dataclass
class PredictorWeights:
    layers: list[Layer]
    activation: str
    # Ballast repeats each hidden-layer product this many times (results
    # discarded) to make one forward call expensive enough to time. Not
    # persisted; outputs are unaffected.
    ballast: int = field(default=1)

    @property
    def data_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.layers[0].w.shape[0] - self.data_dim

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("need at least one layer")
        if self.activation not in _ACT_TO_ID:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for i, layer in enumerate(self.layers):
            if layer.w.shape[1] != layer.b.shape[0]:
                raise ConfigError(f"layer {i}: bias length != fan_out")
            if i > 0 and self.layers[i - 1].w.shape[1] != layer.w.shape[0]:
                raise ConfigError(f"layer {i}: fan_in does not chain from layer {i - 1}")
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise ConfigError(f"layer {i}: non-finite parameters")
        ed = self.embed_dim
        if ed < 2 or ed % 2 != 0:
            raise ConfigError(f"implied embedding dim {ed} must be even and >= 2")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows; the two branches differ in
    # rounding, so this exact function must be used everywhere silu appears.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == ACT_TANH:
        return np.tanh(z)
    return z * _sigmoid(z)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == ACT_TANH:
        th = np.tanh(z)
        return 1.0 - th * th
    sig = _sigmoid(z)
    return sig * (1.0 + z * (1.0 - sig))


def forward(w: PredictorWeights, x: Vector, t: int, T: int) -> Vector:
    """Predict the noise (or velocity) component of x at step t."""
    x = as_vector(x)
    if len(x) != w.data_dim:
        raise DimensionError(f"input length {len(x)} != data_dim {w.data_dim}")
    a = np.concatenate([x, time_embed(t, T, w.embed_dim)])
    last = len(w.layers) - 1
    for i, layer in enumerate(w.layers):
        z = np.dot(a, layer.w) + layer.b
        if i < last:
            if w.ballast > 1:
                # One wide matmul re-doing this layer's product ballast-1 times;
                # wide so the work happens inside a single BLAS call.
                np.dot(np.tile(a, (w.ballast - 1, 1)), layer.w)
            a = _activate(z, w.activation)
        else:
            a = z
    return a


def forward_batch(
    w: PredictorWeights, xs: list[Vector], ts: list[int], T: int
) -> list[Vector]:
    """Element i is forward(w, xs[i], ts[i], T), bitwise.

    Implemented as a loop over the single-sample path on purpose: routing rows
    through a different BLAS kernel could change low-order bits, and the
    sampling engines assert exact equality between batched and unbatched runs.
    """
    if len(xs) != len(ts):
        raise DimensionError(f"batch length mismatch: {len(xs)} inputs vs {len(ts)} steps")
    if not xs:
        raise DimensionError("batch must be nonempty")
    return [forward(w, x, t, T) for x, t in zip(xs, ts)]


@dataclass
class TrainConfig:
    dataset: str = "gauss8"
    data_dim: int = 2
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    iterations: int = 3000
    seed: int = 42
    activation: str = ACT_SILU
    dataset_size: int = 4000
    log_interval: int = 100
    objective: str = OBJECTIVE_NOISE

    def validate(self) -> None:
        if self.data_dim < 1 or self.batch_size < 1 or self.dataset_size < 1:
            raise ConfigError("counts must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ConfigError("embed_dim must be even and >= 2")
        if self.activation not in _ACT_TO_ID:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.objective not in (OBJECTIVE_NOISE, OBJECTIVE_FLOW):
            raise ConfigError(f"unknown objective {self.objective!r}")


def init_weights(cfg: TrainConfig) -> PredictorWeights:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, seeded per layer."""
    dims = [cfg.data_dim + cfg.embed_dim, *cfg.hidden, cfg.data_dim]
    layers = []
    for i in range(len(dims) - 1):
        rng = RngStream(cfg.seed, stream_id(PURPOSE_WEIGHT_INIT, i))
        fan_in, fan_out = dims[i], dims[i + 1]
        scale = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniforms(fan_in * fan_out)
        w = ((2.0 * u - 1.0) * scale).reshape(fan_in, fan_out)
        layers.append(Layer(w, np.zeros(fan_out)))
    weights = PredictorWeights(layers, cfg.activation)
    weights.validate()
    return weights


def _embed_rows(ts, T: int, dim: int) -> np.ndarray:
    return np.stack([time_embed(t, T, dim) for t in ts])


def _forward_training(w: PredictorWeights, a0: np.ndarray):
    """Vectorized batch forward keeping pre-activations for backprop."""
    acts = [a0]
    zs = []
    last = len(w.layers) - 1
    for i, layer in enumerate(w.layers):
        z = acts[-1] @ layer.w + layer.b
        zs.append(z)
        acts.append(_activate(z, w.activation) if i < last else z)
    return acts, zs


def _backprop(w: PredictorWeights, a0: np.ndarray, target: np.ndarray):
    """Loss = mean over batch of squared-norm error, and its exact gradient."""
    batch = a0.shape[0]
    acts, zs = _forward_training(w, a0)
    diff = acts[-1] - target
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    delta = (2.0 / batch) * diff
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(w.layers)
    for i in range(len(w.layers) - 1, -1, -1):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.layers[i].w.T) * _activate_grad(zs[i - 1], w.activation)
    return loss, grads


def loss_and_grad_fixed(
    w: PredictorWeights,
    x0_batch: np.ndarray,
    ts: list[int],
    eps: np.ndarray,
    sched: NoiseSchedule,
):
    """Noise-prediction loss with caller-supplied step and noise draws.

    Split out from loss_and_grad so tests can pin the draws (finite-difference
    checks need the same perturbation at w and w+h).
    """
    x0_batch = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if x0_batch.shape != eps.shape or x0_batch.shape[0] != len(ts):
        raise DimensionError("batch, noise, and step lists must have matching shapes")
    ab = sched.alpha_bar[np.asarray(ts) - 1]
    x_t = np.sqrt(ab)[:, None] * x0_batch + np.sqrt(1.0 - ab)[:, None] * eps
    a0 = np.concatenate([x_t, _embed_rows(ts, sched.T, w.embed_dim)], axis=1)
    return _backprop(w, a0, eps)


def loss_and_grad(
    w: PredictorWeights, x0_batch: np.ndarray, sched: NoiseSchedule, rng: RngStream
):
    """Draw per-element steps and noise, then the noise-prediction objective."""
    x0_batch = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    n, d = x0_batch.shape
    ts = rng.integers(n, 1, sched.T)
    eps = rng.normals(n * d).reshape(n, d)
    return loss_and_grad_fixed(w, x0_batch, ts, eps, sched)


def flow_loss_and_grad_fixed(
    w: PredictorWeights,
    x0_batch: np.ndarray,
    ts: list[int],
    eps: np.ndarray,
    T: int,
):
    """Velocity-matching loss on the straight noise-to-data path.

    The path point at fraction tau = t/T is (1-tau)*eps + tau*x0 and the
    regression target is the constant path velocity x0 - eps.
    """
    x0_batch = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if x0_batch.shape != eps.shape or x0_batch.shape[0] != len(ts):
        raise DimensionError("batch, noise, and step lists must have matching shapes")
    tau = (np.asarray(ts, dtype=np.float64) / T)[:, None]
    z = (1.0 - tau) * eps + tau * x0_batch
    a0 = np.concatenate([z, _embed_rows(ts, T, w.embed_dim)], axis=1)
    return _backprop(w, a0, x0_batch - eps)


class _Adam:
    def __init__(self, cfg: TrainConfig, layers: list[Layer]):
        self.cfg = cfg
        self.step = 0
        self.m = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in layers]
        self.v = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in layers]

    def update(self, layers: list[Layer], grads) -> None:
        c = self.cfg
        self.step += 1
        bc1 = 1.0 - c.adam_beta1 ** self.step
        bc2 = 1.0 - c.adam_beta2 ** self.step
        for i, layer in enumerate(layers):
            for param, grad, m, v in (
                (layer.w, grads[i][0], self.m[i][0], self.v[i][0]),
                (layer.b, grads[i][1], self.m[i][1], self.v[i][1]),
            ):
                m *= c.adam_beta1
                m += (1.0 - c.adam_beta1) * grad
                v *= c.adam_beta2
                v += (1.0 - c.adam_beta2) * grad * grad
                param -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


def train(
    cfg: TrainConfig,
    sched: NoiseSchedule,
    loss_log: list[tuple[int, float]] | None = None,
) -> PredictorWeights:
    """Adam on the configured objective; fully deterministic given cfg.seed."""
    cfg.validate()
    data = make_dataset(cfg.dataset, cfg.dataset_size, cfg.seed)
    if data.shape[1] != cfg.data_dim:
        raise ConfigError(
            f"dataset {cfg.dataset!r} is {data.shape[1]}-dimensional, config says {cfg.data_dim}"
        )
    weights = init_weights(cfg)
    opt = _Adam(cfg, weights.layers)
    for it in range(cfg.iterations):
        rng = RngStream(cfg.seed, stream_id(PURPOSE_TRAIN, it))
        idx = rng.integers(cfg.batch_size, 0, cfg.dataset_size - 1)
        batch = data[idx]
        ts = rng.integers(cfg.batch_size, 1, sched.T)
        eps = rng.normals(cfg.batch_size * cfg.data_dim).reshape(cfg.batch_size, cfg.data_dim)
        if cfg.objective == OBJECTIVE_NOISE:
            loss, grads = loss_and_grad_fixed(weights, batch, ts, eps, sched)
        else:
            loss, grads = flow_loss_and_grad_fixed(weights, batch, ts, eps, sched.T)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at iteration {it}")
        opt.update(weights.layers, grads)
        if loss_log is not None and (it % cfg.log_interval == 0 or it == cfg.iterations - 1):
            loss_log.append((it, loss))
    return weights


_MAGIC = b"PSWT"
_VERSION = 1


def save_weights(w: PredictorWeights, path) -> None:
    """Write the binary weight file (all integers and floats little-endian)."""
    w.validate()
    parts = [_MAGIC, struct.pack("<BH", _VERSION, len(w.layers))]
    for layer in w.layers:
        rows, cols = layer.w.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(np.ascontiguousarray(layer.w, dtype="<f8").tobytes())
        parts.append(np.asarray(layer.b, dtype="<f8").tobytes())
    parts.append(struct.pack("<B", _ACT_TO_ID[w.activation]))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_weights(path) -> PredictorWeights:
    """Read the binary weight file; bitwise inverse of save_weights."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != _MAGIC:
        raise WeightFormatError("bad magic bytes", offset=0)
    if len(data) < 7:
        raise WeightFormatError("truncated header", offset=4)
    version, layer_count = struct.unpack_from("<BH", data, 4)
    if version != _VERSION:
        raise WeightFormatError(f"unsupported format version {version}", offset=4)
    off = 7
    layers = []
    for i in range(layer_count):
        if off + 8 > len(data):
            raise WeightFormatError("truncated layer header", offset=off, layer=i)
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        need = 8 * (rows * cols + cols)
        if off + need > len(data):
            raise WeightFormatError("truncated layer data", offset=off, layer=i)
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=off)
        off += 8 * cols
        layers.append(Layer(w.copy(), b.copy()))
    if off + 1 > len(data):
        raise WeightFormatError("missing activation id", offset=off)
    act_id = data[off]
    off += 1
    if act_id not in _ID_TO_ACT:
        raise WeightFormatError(f"unknown activation id {act_id}", offset=off - 1)
    if off != len(data):
        raise WeightFormatError(f"{len(data) - off} trailing bytes", offset=off)
    weights = PredictorWeights(layers, _ID_TO_ACT[act_id])
    weights.validate()
    return weights
