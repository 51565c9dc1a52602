"""Wall-clock benchmarking of sequential vs. round-parallel denoising.

Latency for the threaded/process backends is the span of the denoising loops
themselves (max loop end minus min loop start across workers), so process
spawn and rendezvous cost do not pollute the measurement. Reported times are
medians over repetitions after discarding one warm run. The predictor's
ballast knob is auto-calibrated so a single forward call costs at least a
target wall time, making the workload compute-bound enough to parallelize.
"""

from __future__ import annotations

import math
import os
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .commodel import amdahl_speedup
from .engines import RunConfig, STRATEGY_PARASTEP, STRATEGY_SEQUENTIAL, run_strategy
from .errors import ParameterError
from .predictor import PredictorWeights, forward
from .protocol import DEFAULT_TIMEOUT, RunResult, run_loopback, run_tcp
from .schedule import NoiseSchedule

BACKEND_LOOPBACK = "loopback"
BACKEND_TCP = "tcp"
BACKENDS = (BACKEND_LOOPBACK, BACKEND_TCP)

# One forward call should cost at least this long for bench runs to be
# meaningfully compute-bound.
TARGET_FORWARD_S = 0.005
_BALLAST_CAP = 2_000_000


@contextmanager
def single_threaded_blas():
    """Pin BLAS pools to one thread while timing, when threadpoolctl exists.

    Each worker then owns exactly one stream of compute, so thread counts
    rather than BLAS internals determine the parallelism being measured.
    """
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _time_forward(w: PredictorWeights, dim: int, reps: int = 5) -> float:
    x = np.zeros(dim)
    forward(w, x, 1, 2)  # warm caches
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        forward(w, x, 1, 2)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def calibrate_ballast(w: PredictorWeights, target_s: float = TARGET_FORWARD_S) -> int:
    """Smallest ballast (roughly) making one forward call take >= target_s.

    Fits cost(k) ~= base + slope*k from two probe points, then verifies and
    doubles if the estimate undershot.
    """
    if not w.layers or len(w.layers) < 2:
        raise ParameterError("ballast calibration needs at least one hidden layer")
    original = w.ballast
    try:
        w.ballast = 1
        base = _time_forward(w, w.data_dim)
        if base >= target_s:
            return 1
        probe = 64
        w.ballast = probe
        at_probe = _time_forward(w, w.data_dim)
        slope = max((at_probe - base) / (probe - 1), 1e-9)
        k = min(max(int(math.ceil((target_s - base) / slope)) + 1, 1), _BALLAST_CAP)
        for _ in range(8):
            w.ballast = k
            if _time_forward(w, w.data_dim, reps=3) >= target_s or k >= _BALLAST_CAP:
                break
            k = min(k * 2, _BALLAST_CAP)
        return k
    finally:
        w.ballast = original


@dataclass
class BenchRow:
    variant: str  # "sequential", "parastep-loopback", "parastep-tcp"
    p: int
    reps: int
    median_s: float
    speedup: float
    amdahl_bound: float
    forward_s: float
    comm_s: float
    wait_s: float

    @property
    def comm_share(self) -> float:
        return self.comm_s / self.median_s if self.median_s > 0 else 0.0


@dataclass
class BenchReport:
    rows: list[BenchRow]
    ballast: int
    warnings: list[str]

    _COLUMNS = (
        "variant",
        "p",
        "reps",
        "median_s",
        "speedup",
        "amdahl_bound",
        "forward_s",
        "comm_s",
        "wait_s",
        "comm_share",
    )

    def _cells(self, row: BenchRow) -> list[str]:
        return [
            row.variant,
            str(row.p),
            str(row.reps),
            f"{row.median_s:.6f}",
            f"{row.speedup:.3f}",
            f"{row.amdahl_bound:.3f}",
            f"{row.forward_s:.6f}",
            f"{row.comm_s:.6f}",
            f"{row.wait_s:.6f}",
            f"{row.comm_share:.4f}",
        ]

    def to_csv(self) -> str:
        lines = [",".join(self._COLUMNS)]
        for row in self.rows:
            lines.append(",".join(self._cells(row)))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        table = [list(self._COLUMNS)] + [self._cells(r) for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(self._COLUMNS))]
        lines = ["  ".join(cell.ljust(wd) for cell, wd in zip(row, widths)).rstrip() for row in table]
        lines.insert(1, "  ".join("-" * wd for wd in widths))
        for msg in self.warnings:
            lines.append(f"warning: {msg}")
        lines.append(f"ballast={self.ballast}")
        return "\n".join(lines) + "\n"


def _median_run(times: list[float]) -> float:
    return statistics.median(times)


@contextmanager
def _pinned_workers(enable: bool):
    if not enable:
        yield
        return
    prev = os.environ.get("PARASTEP_PIN_CORES")
    os.environ["PARASTEP_PIN_CORES"] = "1"
    try:
        yield
    finally:
        if prev is None:
            os.environ.pop("PARASTEP_PIN_CORES", None)
        else:
            os.environ["PARASTEP_PIN_CORES"] = prev


def run_bench(
    w: PredictorWeights,
    sched: NoiseSchedule,
    steps: int,
    warmup: int,
    degree: int,
    seed: int,
    data_dim: int,
    backends: tuple[str, ...] = BACKENDS,
    reps: int = 5,
    hosts: list[str] | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> BenchReport:
    """Measure sequential vs. round-parallel latency with identical weights."""
    for backend in backends:
        if backend not in BACKENDS:
            raise ParameterError(f"unknown backend {backend!r}")
    if reps < 1:
        raise ParameterError(f"reps must be >= 1, got {reps}")
    warnings: list[str] = []
    cores = os.cpu_count() or 1
    if cores < degree:
        warnings.append(
            f"only {cores} core(s) available for {degree} workers; speedup will be limited"
        )
    if reps < 5:
        warnings.append(f"only {reps} repetition(s); medians are reported from >= 5")

    seq_cfg = RunConfig(
        steps=steps, warmup=0, strategy=STRATEGY_SEQUENTIAL, degree=1,
        seed=seed, data_dim=data_dim,
    )
    par_cfg = RunConfig(
        steps=steps, warmup=warmup, strategy=STRATEGY_PARASTEP, degree=degree,
        seed=seed, data_dim=data_dim,
    )
    bound = amdahl_speedup(warmup / steps, degree)

    rows: list[BenchRow] = []
    with single_threaded_blas():
        seq_times = []
        for _ in range(reps + 1):  # first run warms caches and is discarded
            t0 = time.perf_counter()
            run_strategy(w, sched, seq_cfg)
            seq_times.append(time.perf_counter() - t0)
        seq_times = seq_times[1:]
        seq_median = _median_run(seq_times)
        rows.append(
            BenchRow("sequential", 1, reps, seq_median, 1.0, 1.0, seq_median, 0.0, 0.0)
        )

        can_pin = cores >= degree and hasattr(os, "sched_setaffinity")
        with _pinned_workers(can_pin):
            for backend in backends:
                walls, fwds, comms, waits = [], [], [], []
                for _ in range(reps + 1):
                    if backend == BACKEND_LOOPBACK:
                        res: RunResult = run_loopback(w, sched, par_cfg, timeout=timeout)
                    else:
                        res = run_tcp(w, sched, par_cfg, hosts=hosts, timeout=timeout)
                    walls.append(res.loop_latency_s)
                    fwds.append(statistics.mean(t.forward_s for t in res.timings))
                    comms.append(statistics.mean(t.comm_s for t in res.timings))
                    waits.append(statistics.mean(t.recv_wait_s for t in res.timings))
                walls, fwds, comms, waits = walls[1:], fwds[1:], comms[1:], waits[1:]
                wall = _median_run(walls)
                rows.append(
                    BenchRow(
                        f"parastep-{backend}",
                        degree,
                        reps,
                        wall,
                        seq_median / wall if wall > 0 else float("inf"),
                        bound,
                        _median_run(fwds),
                        _median_run(comms),
                        _median_run(waits),
                    )
                )
    return BenchReport(rows, w.ballast, warnings)
