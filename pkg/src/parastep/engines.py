"""Single-process sampling strategies and trajectory diagnostics.

Five strategies share one contract (same weights, schedule, and seed give the
same bits everywhere):

- ``sequential``: one fresh prediction per step; the reference everything else
  is compared against.
- ``direct_reuse``: after warm-up, predict only every ``stride``-th step and
  feed the stale noise to the scheduler in between.
- ``parastep``: reuse-then-predict with ``p`` virtual ranks stepped in
  lockstep, replicating the distributed round protocol in one process. Rank
  r's sample is rolled forward with cached noise, a fresh prediction is made
  on the rolled sample, and rank 0 resynchronizes everyone each cycle.
- ``batchstep``: same semantics with each cycle's fresh predictions evaluated
  in a single batched call.
- ``dynamic``: batchstep-style cycles with per-cycle lengths from an external
  schedule.

The parastep emulation and the batchstep/dynamic cycle runner are written
independently on purpose — their bitwise agreement is one of the package's
main correctness checks, and sharing the loop would make it vacuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateReferenceError, DimensionError
from .numerics import (
    PURPOSE_INIT,
    PURPOSE_STEP,
    Vector,
    draw_normal,
    mse,
    rel_mae,
    stream_id,
)
from .predictor import PredictorWeights, forward, forward_batch
from .schedule import NoiseSchedule, ddpm_step

STRATEGY_SEQUENTIAL = "sequential"
STRATEGY_DIRECT_REUSE = "direct_reuse"
STRATEGY_PARASTEP = "parastep"
STRATEGY_BATCHSTEP = "batchstep"
STRATEGY_DYNAMIC = "dynamic"
STRATEGIES = (
    STRATEGY_SEQUENTIAL,
    STRATEGY_DIRECT_REUSE,
    STRATEGY_PARASTEP,
    STRATEGY_BATCHSTEP,
    STRATEGY_DYNAMIC,
)

# Where a rank's noise estimate came from at a given step.
SRC_LOCAL_FRESH = "local_fresh"    # this rank ran the predictor
SRC_REMOTE_FRESH = "remote_fresh"  # fresh value computed by the step's master
SRC_REUSE = "reuse"                # rank's own cached noise


def warmup_from_ratio(ratio: float, steps: int) -> int:
    """Convert a warm-up ratio to a step count: round(ratio * steps)."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"warm-up ratio must be in [0, 1], got {ratio}")
    return int(round(ratio * steps))


@dataclass
class RunConfig:
    steps: int
    warmup: int = 0
    strategy: str = STRATEGY_SEQUENTIAL
    # Meaning depends on strategy: parallelism p (parastep), cycle length s
    # (batchstep), or reuse stride (direct_reuse). Ignored by the others.
    degree: int = 1
    schedule_override: list[int] | None = None
    seed: int = 0
    data_dim: int = 2

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.warmup <= self.steps:
            raise ConfigError(f"warmup must be in [0, {self.steps}], got {self.warmup}")
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        if self.data_dim < 1:
            raise ConfigError(f"data_dim must be >= 1, got {self.data_dim}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        needs_cache = self.strategy in (STRATEGY_PARASTEP, STRATEGY_BATCHSTEP)
        if needs_cache and self.degree > 1 and self.warmup < 1:
            raise ConfigError(
                "degree > 1 requires warmup >= 1: the noise cache is only "
                "populated during warm-up or master steps"
            )
        if self.strategy == STRATEGY_DYNAMIC:
            sched = self.schedule_override
            if sched is None:
                raise ConfigError("dynamic strategy requires schedule_override")
            if not all(isinstance(c, int) and c >= 1 for c in sched):
                raise ConfigError("cycle lengths must be integers >= 1")
            if sum(sched) != self.steps - self.warmup:
                raise ConfigError(
                    f"cycle lengths sum to {sum(sched)}, expected "
                    f"steps - warmup = {self.steps - self.warmup}"
                )
            if any(c > 1 for c in sched) and self.warmup < 1:
                raise ConfigError("cycle lengths > 1 require warmup >= 1")
        elif self.schedule_override is not None:
            raise ConfigError("schedule_override is only valid for the dynamic strategy")


@dataclass
class StepRecord:
    t: int
    x: Vector       # state entering the step (x_t)
    eps: Vector     # noise estimate consumed by the scheduler
    fresh: bool     # the trajectory's owner invoked the predictor here


@dataclass
class Trajectory:
    records: list[StepRecord]
    x0: Vector
    # Batched predictor invocations (batchstep only); bookkeeping, not part of
    # trajectory identity.
    batch_calls: int = 0

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def fresh_calls(self) -> int:
        return sum(1 for r in self.records if r.fresh)

    def bitwise_equal(self, other: "Trajectory") -> bool:
        if len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if a.t != b.t or a.fresh != b.fresh:
                return False
            if not (np.array_equal(a.x, b.x) and np.array_equal(a.eps, b.eps)):
                return False
        return np.array_equal(self.x0, other.x0)


@dataclass
class HistoryStep:
    t: int
    x_before: Vector
    eps: Vector
    source: str     # SRC_LOCAL_FRESH / SRC_REMOTE_FRESH / SRC_REUSE
    x_after: Vector  # after the scheduler update and any broadcast overwrite


@dataclass
class VirtualWorkerState:
    rank: int
    x: Vector
    eps_cache: Vector | None = None
    cache_step: int | None = None
    history: list[HistoryStep] = field(default_factory=list)

    @property
    def local_fresh_calls(self) -> int:
        return sum(1 for h in self.history if h.source == SRC_LOCAL_FRESH)


def initial_state(cfg: RunConfig) -> Vector:
    """x_T drawn from the run seed; every worker derives it identically."""
    return draw_normal(cfg.seed, stream_id(PURPOSE_INIT, 0), cfg.data_dim)


def step_noise(cfg: RunConfig, t: int) -> Vector:
    """The shared per-step sampling noise, a pure function of (seed, t)."""
    return draw_normal(cfg.seed, stream_id(PURPOSE_STEP, t), cfg.data_dim)


def _check(w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig, strategy: str) -> None:
    cfg.validate()
    if cfg.strategy != strategy:
        raise ConfigError(f"config strategy is {cfg.strategy!r}, engine expects {strategy!r}")
    if cfg.steps != sched.T:
        raise ConfigError(f"config steps {cfg.steps} != schedule length {sched.T}")
    if cfg.data_dim != w.data_dim:
        raise ConfigError(f"config data_dim {cfg.data_dim} != predictor data_dim {w.data_dim}")


def _in_warmup(cfg: RunConfig, t: int) -> bool:
    return (cfg.steps - t) < cfg.warmup


def denoise_sequential(w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig) -> Trajectory:
    """One fresh prediction per step, t = T down to 1."""
    _check(w, sched, cfg, STRATEGY_SEQUENTIAL)
    x = initial_state(cfg)
    records = []
    for t in range(cfg.steps, 0, -1):
        eps = forward(w, x, t, sched.T)
        records.append(StepRecord(t, x, eps, True))
        x = ddpm_step(x, t, eps, sched, step_noise(cfg, t))
    return Trajectory(records, x)


def denoise_direct_reuse(w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig) -> Trajectory:
    """Predict every cfg.degree-th post-warm-up step; reuse stale noise between."""
    _check(w, sched, cfg, STRATEGY_DIRECT_REUSE)
    stride = cfg.degree
    x = initial_state(cfg)
    records = []
    last_eps = None
    since_warmup = 0
    for t in range(cfg.steps, 0, -1):
        if _in_warmup(cfg, t):
            fresh = True
        else:
            fresh = since_warmup % stride == 0
            since_warmup += 1
        if fresh:
            eps = forward(w, x, t, sched.T)
            last_eps = eps
        else:
            eps = last_eps
        records.append(StepRecord(t, x, eps, fresh))
        x = ddpm_step(x, t, eps, sched, step_noise(cfg, t))
    return Trajectory(records, x)


def denoise_parastep_emulated(
    w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig
) -> tuple[Trajectory, list[VirtualWorkerState]]:
    """Reuse-then-predict with p virtual ranks stepped in lockstep.

    Per non-warm-up step the master rank (rank == round) predicts fresh noise
    and caches it; rank 0, when not master, consumes that fresh value (the
    wire protocol's noise send); other ranks reuse their own cache. Every rank
    applies the scheduler every step. At round p-1 rank 0's sample overwrites
    all ranks (the broadcast), then round advances mod p. A trailing partial
    cycle runs its first r rounds and skips the broadcast.

    The returned trajectory is rank 0's view; its fresh flags mark steps rank
    0 computed itself, while received values appear as remote-fresh in the
    per-rank histories.
    """
    _check(w, sched, cfg, STRATEGY_PARASTEP)
    p = cfg.degree
    x_init = initial_state(cfg)
    workers = [VirtualWorkerState(r, x_init) for r in range(p)]
    records = []
    rnd = 0
    for t in range(cfg.steps, 0, -1):
        z = step_noise(cfg, t)
        warm = _in_warmup(cfg, t)
        master = 0 if warm else rnd
        befores = [ws.x for ws in workers]
        eps_master = forward(w, befores[master], t, sched.T)
        for ws in workers:
            if warm or ws.rank == master:
                eps_r, src = eps_master, SRC_LOCAL_FRESH
                ws.eps_cache, ws.cache_step = eps_master, t
            elif ws.rank == 0:
                eps_r, src = eps_master, SRC_REMOTE_FRESH
            else:
                eps_r, src = ws.eps_cache, SRC_REUSE
            ws.x = ddpm_step(befores[ws.rank], t, eps_r, sched, z)
            ws.history.append(HistoryStep(t, befores[ws.rank], eps_r, src, ws.x))
        records.append(StepRecord(t, befores[0], eps_master, warm or master == 0))
        if not warm:
            if rnd == p - 1:
                for ws in workers[1:]:
                    ws.x = workers[0].x
                    ws.history[-1].x_after = workers[0].x
            rnd = (rnd + 1) % p
    return Trajectory(records, workers[0].x), workers


def _plan_cycles(cfg: RunConfig) -> list[list[int]]:
    """Post-warm-up steps (descending t) chunked into cycles."""
    ts = list(range(cfg.steps - cfg.warmup, 0, -1))
    if cfg.strategy == STRATEGY_DYNAMIC:
        lengths = cfg.schedule_override
    else:
        lengths = []
        left = len(ts)
        while left > 0:
            lengths.append(min(cfg.degree, left))
            left -= lengths[-1]
    cycles = []
    pos = 0
    for c in lengths:
        cycles.append(ts[pos:pos + c])
        pos += c
    return cycles


def _run_cycles(
    w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig, batched: bool
) -> Trajectory:
    """Cycle-at-a-time runner shared by batchstep and dynamic.

    At each cycle start every virtual lane holds the same synchronized sample.
    Lane j's prediction input is that sample rolled forward j steps with lane
    j's own cached noise; the fresh predictions are then applied in round
    order to produce the canonical (rank-0) chain, and each lane's cache is
    replaced by its fresh value.
    """
    x = initial_state(cfg)
    records = []
    caches: dict[int, Vector] = {}
    warm_eps = None
    for t in range(cfg.steps, cfg.steps - cfg.warmup, -1):
        eps = forward(w, x, t, sched.T)
        records.append(StepRecord(t, x, eps, True))
        x = ddpm_step(x, t, eps, sched, step_noise(cfg, t))
        warm_eps = eps
    batch_calls = 0
    for cycle in _plan_cycles(cfg):
        inputs = []
        for j in range(len(cycle)):
            xj = x
            cached = caches.get(j, warm_eps)
            for k in range(j):
                xj = ddpm_step(xj, cycle[k], cached, sched, step_noise(cfg, cycle[k]))
            inputs.append(xj)
        if batched:
            eps_list = forward_batch(w, inputs, cycle, sched.T)
            batch_calls += 1
        else:
            eps_list = [forward(w, xj, tj, sched.T) for xj, tj in zip(inputs, cycle)]
        for j, tj in enumerate(cycle):
            records.append(StepRecord(tj, x, eps_list[j], j == 0))
            x = ddpm_step(x, tj, eps_list[j], sched, step_noise(cfg, tj))
            caches[j] = eps_list[j]
    return Trajectory(records, x, batch_calls)


def denoise_batchstep(w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig) -> Trajectory:
    """Parastep semantics with each cycle's s predictions in one batched call."""
    _check(w, sched, cfg, STRATEGY_BATCHSTEP)
    return _run_cycles(w, sched, cfg, batched=True)


def denoise_dynamic(w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig) -> Trajectory:
    """Reuse-then-predict cycles with lengths taken from cfg.schedule_override."""
    _check(w, sched, cfg, STRATEGY_DYNAMIC)
    return _run_cycles(w, sched, cfg, batched=False)


def run_strategy(w: PredictorWeights, sched: NoiseSchedule, cfg: RunConfig) -> Trajectory:
    """Dispatch on cfg.strategy; parastep's per-rank histories are dropped."""
    engine = {
        STRATEGY_SEQUENTIAL: denoise_sequential,
        STRATEGY_DIRECT_REUSE: denoise_direct_reuse,
        STRATEGY_BATCHSTEP: denoise_batchstep,
        STRATEGY_DYNAMIC: denoise_dynamic,
    }
    if cfg.strategy == STRATEGY_PARASTEP:
        return denoise_parastep_emulated(w, sched, cfg)[0]
    if cfg.strategy not in engine:
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    return engine[cfg.strategy](w, sched, cfg)


def generate_threshold_schedule(
    reference: Trajectory, tau: float, max_len: int, warmup: int = 0
) -> list[int]:
    """Greedy cycle lengths from a sequential reference run.

    A cycle is extended to cover step u while the reference's adjacent-step
    noise change rel_mae(eps_u, eps_{u+1}) stays strictly below tau, capped at
    max_len. tau = 0 therefore yields all-ones. The result covers the steps
    after the first `warmup` and satisfies the dynamic strategy's precondition.
    """
    if tau < 0:
        raise ConfigError(f"tau must be >= 0, got {tau}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    T = len(reference.records)
    if not 0 <= warmup <= T:
        raise ConfigError(f"warmup must be in [0, {T}], got {warmup}")
    eps_by_t = {rec.t: rec.eps for rec in reference.records}

    def change(u: int) -> float:
        try:
            return rel_mae(eps_by_t[u], eps_by_t[u + 1])
        except DegenerateReferenceError:
            return float("inf")

    steps = list(range(T - warmup, 0, -1))
    lengths = []
    i = 0
    while i < len(steps):
        n = 1
        while n < max_len and i + n < len(steps) and change(steps[i + n]) < tau:
            n += 1
        lengths.append(n)
        i += n
    return lengths


@dataclass
class DiffRow:
    t: int
    rel_mae_x: float
    rel_mae_eps: float
    mse_x: float
    mse_eps: float


@dataclass
class AdjacentRow:
    t: int
    rel_mae_x: float
    rel_mae_eps: float


def _adjacent_series(traj: Trajectory) -> list[AdjacentRow]:
    rows = []
    for prev, cur in zip(traj.records, traj.records[1:]):
        rows.append(
            AdjacentRow(cur.t, rel_mae(cur.x, prev.x), rel_mae(cur.eps, prev.eps))
        )
    return rows


@dataclass
class DiffReport:
    rows: list[DiffRow]
    final_rel_mae: float
    final_mse: float
    # Self-similarity between adjacent steps of each input trajectory,
    # rel_mae(value_t, value_{t+1}); T-1 entries each.
    adjacent_a: list[AdjacentRow]
    adjacent_b: list[AdjacentRow]

    def to_csv(self) -> str:
        lines = ["step,rel_mae_x,rel_mae_eps,mse_x,mse_eps"]
        for r in self.rows:
            lines.append(f"{r.t},{r.rel_mae_x!r},{r.rel_mae_eps!r},{r.mse_x!r},{r.mse_eps!r}")
        return "\n".join(lines) + "\n"


def compare_trajectories(a: Trajectory, b: Trajectory) -> DiffReport:
    """Per-step divergence of b from reference a, plus adjacent-step series."""
    if len(a.records) != len(b.records):
        raise DimensionError(
            f"trajectory lengths differ: {len(a.records)} vs {len(b.records)}"
        )
    if len(a.x0) != len(b.x0):
        raise DimensionError(f"data dims differ: {len(a.x0)} vs {len(b.x0)}")
    rows = []
    for ra, rb in zip(a.records, b.records):
        if ra.t != rb.t:
            raise DimensionError(f"step mismatch: {ra.t} vs {rb.t}")
        rows.append(
            DiffRow(
                ra.t,
                rel_mae(ra.x, rb.x),
                rel_mae(ra.eps, rb.eps),
                mse(ra.x, rb.x),
                mse(ra.eps, rb.eps),
            )
        )
    return DiffReport(
        rows,
        rel_mae(a.x0, b.x0),
        mse(a.x0, b.x0),
        _adjacent_series(a),
        _adjacent_series(b),
    )
