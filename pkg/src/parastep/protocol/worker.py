"""The distributed reuse-then-predict worker and its launchers.

Each of the p workers runs the same sequential control flow over t = T..1:
full computation during warm-up, then rounds in which the master rank
(rank == round) predicts fresh noise — sending it to rank 0 when the master
is not rank 0 itself — while the others reuse their own cached noise; every
rank applies the scheduler every step; at round p-1 rank 0's updated sample
is broadcast to everyone and the round counter wraps. A trailing partial
cycle of r rounds runs masters 0..r-1 and skips the broadcast. Rank 0 ends
the run by sending SHUTDOWN to every other rank.

Nothing stochastic is ever transmitted: the initial sample and the per-step
scheduler noise are regenerated on every rank from the shared seed.

The loopback launcher runs the p workers as threads over in-process queues;
the TCP launcher spawns them as OS processes talking over localhost sockets.
Both must produce — and are tested to produce — rank-0 trajectories bitwise
identical to the single-process virtual-rank emulation.
"""

from __future__ import annotations

import multiprocessing as mp
import os
import queue as queue_mod
import threading
import time
import traceback
from dataclasses import dataclass

from ..engines import (
    SRC_LOCAL_FRESH,
    SRC_REMOTE_FRESH,
    SRC_REUSE,
    STRATEGY_PARASTEP,
    HistoryStep,
    RunConfig,
    StepRecord,
    Trajectory,
    VirtualWorkerState,
    initial_state,
    step_noise,
)
from ..errors import ConfigError, FrameError, ProtocolAbortError
from ..predictor import PredictorWeights, forward
from ..schedule import NoiseSchedule, ddpm_step
from .ledger import CommLedger
from .transport import (
    DEFAULT_TIMEOUT,
    LoopbackNetwork,
    TcpTransport,
    free_local_ports,
)
from .wire import (
    MSG_NAMES,
    MSG_NOISE,
    MSG_SAMPLE_BCAST,
    MSG_SHUTDOWN,
    WireMessage,
    decode_message,
    encode_message,
)


@dataclass
class WorkerTimings:
    """Wall-clock accounting for one worker's denoising loop.

    loop_start/loop_end are CLOCK_MONOTONIC stamps (comparable across local
    processes), so a run's denoising latency is max(loop_end) - min(loop_start)
    independent of process spawn and rendezvous cost. comm time counts frame
    encode/send and decode/validate work; time blocked waiting for a peer is
    tracked separately as wait.
    """

    loop_start: float = 0.0
    loop_end: float = 0.0
    forward_s: float = 0.0
    send_s: float = 0.0
    recv_wait_s: float = 0.0
    recv_decode_s: float = 0.0

    @property
    def comm_s(self) -> float:
        return self.send_s + self.recv_decode_s


@dataclass
class WorkerResult:
    rank: int
    trajectory: Trajectory | None  # rank 0 only
    state: VirtualWorkerState
    ledger: CommLedger
    timings: WorkerTimings


@dataclass
class RunResult:
    trajectory: Trajectory
    worker_states: list[VirtualWorkerState]
    ledgers: list[CommLedger]
    timings: list[WorkerTimings]

    @property
    def merged_ledger(self) -> CommLedger:
        return CommLedger.merged(self.ledgers)

    @property
    def loop_latency_s(self) -> float:
        return max(t.loop_end for t in self.timings) - min(t.loop_start for t in self.timings)


def _check_run(cfg: RunConfig, w: PredictorWeights, sched: NoiseSchedule) -> None:
    cfg.validate()
    if cfg.strategy != STRATEGY_PARASTEP:
        raise ConfigError(f"protocol runs use the parastep strategy, got {cfg.strategy!r}")
    if cfg.steps != sched.T:
        raise ConfigError(f"config steps {cfg.steps} != schedule length {sched.T}")
    if cfg.data_dim != w.data_dim:
        raise ConfigError(f"config data_dim {cfg.data_dim} != predictor data_dim {w.data_dim}")


def _expect(rank: int, frame: bytes, msg_type: int, sender: int, step: int, dim: int | None):
    """Decode a frame and insist it is exactly the message the protocol owes us."""
    try:
        msg = decode_message(frame)
    except FrameError as exc:
        raise ProtocolAbortError(f"undecodable frame from rank {sender}: {exc}", rank, step) from exc
    if msg.msg_type != msg_type or msg.sender_rank != sender or (
        step is not None and msg.step != step
    ):
        raise ProtocolAbortError(
            f"expected {MSG_NAMES[msg_type]} from rank {sender} at step {step}, "
            f"got {MSG_NAMES.get(msg.msg_type, msg.msg_type)} from rank "
            f"{msg.sender_rank} at step {msg.step}",
            rank,
            step,
        )
    if dim is not None and len(msg.payload) != dim:
        raise ProtocolAbortError(
            f"{MSG_NAMES[msg_type]} payload has {len(msg.payload)} elements, "
            f"expected {dim}",
            rank,
            step,
        )
    return msg


def run_worker(
    rank: int,
    cfg: RunConfig,
    w: PredictorWeights,
    sched: NoiseSchedule,
    transport,
    timeout: float = DEFAULT_TIMEOUT,
) -> WorkerResult:
    """One worker's complete run; see the module docstring for the protocol."""
    _check_run(cfg, w, sched)
    if not 0 <= rank < cfg.degree:
        raise ConfigError(f"rank {rank} out of range for degree {cfg.degree}")
    p = cfg.degree
    if os.environ.get("PARASTEP_PIN_CORES") == "1":
        try:  # pid 0 == calling thread on Linux, so this pins per worker
            os.sched_setaffinity(0, {rank % (os.cpu_count() or 1)})
        except (AttributeError, OSError):
            pass
    ledger = CommLedger()
    tm = WorkerTimings()
    transport.setup(ledger)
    try:
        state = VirtualWorkerState(rank, initial_state(cfg))
        records: list[StepRecord] = []
        rnd = 0
        tm.loop_start = time.perf_counter()
        for t in range(cfg.steps, 0, -1):
            z = step_noise(cfg, t)
            warm = (cfg.steps - t) < cfg.warmup
            master = 0 if warm else rnd
            before = state.x
            if warm or rank == master:
                clk = time.perf_counter()
                eps = forward(w, before, t, sched.T)
                tm.forward_s += time.perf_counter() - clk
                state.eps_cache, state.cache_step = eps, t
                src = SRC_LOCAL_FRESH
                if not warm and rank != 0:
                    clk = time.perf_counter()
                    frame = encode_message(WireMessage(MSG_NOISE, rank, t, eps))
                    transport.send(0, frame)
                    tm.send_s += time.perf_counter() - clk
                    ledger.record(t, MSG_NOISE, 8 * len(eps), len(frame))
            elif rank == 0:
                clk = time.perf_counter()
                frame = transport.recv_from(master, timeout, step=t)
                mid = time.perf_counter()
                tm.recv_wait_s += mid - clk
                msg = _expect(rank, frame, MSG_NOISE, master, t, cfg.data_dim)
                tm.recv_decode_s += time.perf_counter() - mid
                eps = msg.payload
                src = SRC_REMOTE_FRESH
            else:
                eps = state.eps_cache
                src = SRC_REUSE
            state.x = ddpm_step(before, t, eps, sched, z)
            state.history.append(HistoryStep(t, before, eps, src, state.x))
            if rank == 0:
                records.append(StepRecord(t, before, eps, warm or master == 0))
            if not warm:
                if rnd == p - 1:
                    if rank == 0:
                        clk = time.perf_counter()
                        for dest in range(1, p):
                            frame = encode_message(
                                WireMessage(MSG_SAMPLE_BCAST, 0, t, state.x)
                            )
                            transport.send(dest, frame)
                            ledger.record(t, MSG_SAMPLE_BCAST, 8 * len(state.x), len(frame))
                        tm.send_s += time.perf_counter() - clk
                    else:
                        clk = time.perf_counter()
                        frame = transport.recv_from(0, timeout, step=t)
                        mid = time.perf_counter()
                        tm.recv_wait_s += mid - clk
                        msg = _expect(rank, frame, MSG_SAMPLE_BCAST, 0, t, cfg.data_dim)
                        tm.recv_decode_s += time.perf_counter() - mid
                        state.x = msg.payload
                        state.history[-1].x_after = state.x
                rnd = (rnd + 1) % p
        tm.loop_end = time.perf_counter()
        if rank == 0:
            for dest in range(1, p):
                frame = encode_message(WireMessage(MSG_SHUTDOWN, 0, 0))
                transport.send(dest, frame)
                ledger.record(0, MSG_SHUTDOWN, 0, len(frame))
        else:
            frame = transport.recv_from(0, timeout, step=None)
            _expect(rank, frame, MSG_SHUTDOWN, 0, None, None)
        trajectory = Trajectory(records, state.x) if rank == 0 else None
        return WorkerResult(rank, trajectory, state, ledger, tm)
    finally:
        transport.close()


def run_loopback(
    w: PredictorWeights,
    sched: NoiseSchedule,
    cfg: RunConfig,
    timeout: float = DEFAULT_TIMEOUT,
) -> RunResult:
    """All p workers as threads over in-process queues."""
    _check_run(cfg, w, sched)
    p = cfg.degree
    network = LoopbackNetwork(p)
    results: list[WorkerResult | None] = [None] * p
    failures: list[BaseException | None] = [None] * p

    def entry(rank: int) -> None:
        try:
            results[rank] = run_worker(rank, cfg, w, sched, network.endpoint(rank), timeout)
        except BaseException as exc:  # surfaced to the caller below
            failures[rank] = exc

    threads = [
        threading.Thread(target=entry, args=(rank,), daemon=True, name=f"worker-{rank}")
        for rank in range(p)
    ]
    for th in threads:
        th.start()
    # Workers abort themselves via receive timeouts, so a modest grace beyond
    # the protocol timeout is enough for joins.
    deadline = time.monotonic() + timeout + 60.0
    for th in threads:
        th.join(max(deadline - time.monotonic(), 0.1))
    for rank, exc in enumerate(failures):
        if exc is not None:
            raise exc
    for rank, (th, res) in enumerate(zip(threads, results)):
        if th.is_alive() or res is None:
            raise ProtocolAbortError("worker thread did not finish", rank)
    return RunResult(
        results[0].trajectory,
        [res.state for res in results],
        [res.ledger for res in results],
        [res.timings for res in results],
    )


def _tcp_worker_entry(rank, cfg, w, sched, hosts, timeout, out_queue) -> None:
    try:
        transport = TcpTransport(rank, hosts)
        result = run_worker(rank, cfg, w, sched, transport, timeout)
        out_queue.put((rank, True, result))
    except BaseException:  # report, parent re-raises with context
        out_queue.put((rank, False, traceback.format_exc()))


def run_tcp(
    w: PredictorWeights,
    sched: NoiseSchedule,
    cfg: RunConfig,
    hosts: list[str] | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> RunResult:
    """All p workers as spawned OS processes over localhost sockets."""
    _check_run(cfg, w, sched)
    p = cfg.degree
    if hosts is None:
        hosts = free_local_ports(p)
    if len(hosts) != p:
        raise ConfigError(f"need {p} host:port entries, got {len(hosts)}")
    ctx = mp.get_context("spawn")
    out_queue = ctx.Queue()
    procs = [
        ctx.Process(
            target=_tcp_worker_entry,
            args=(rank, cfg, w, sched, hosts, timeout, out_queue),
            daemon=True,
        )
        for rank in range(p)
    ]
    for proc in procs:
        proc.start()
    results: list[WorkerResult | None] = [None] * p
    # Spawned interpreters import the package from scratch; allow generous
    # startup slack on top of the protocol timeout.
    deadline = time.monotonic() + timeout + 120.0
    try:
        collected = 0
        while collected < p:
            try:
                rank, ok, payload = out_queue.get(timeout=0.25)
            except queue_mod.Empty:
                dead = [
                    r for r in range(p)
                    if results[r] is None and not procs[r].is_alive()
                ]
                if dead:
                    # Give the queue's feeder thread one last chance to flush a
                    # report written just before the process exited.
                    try:
                        rank, ok, payload = out_queue.get(timeout=1.0)
                    except queue_mod.Empty:
                        r = dead[0]
                        raise ProtocolAbortError(
                            f"worker process exited with code {procs[r].exitcode} "
                            "without reporting",
                            r,
                        ) from None
                elif time.monotonic() >= deadline:
                    stuck = [r for r in range(p) if results[r] is None]
                    raise ProtocolAbortError(
                        "worker processes did not all report before the deadline",
                        stuck[0],
                    ) from None
                else:
                    continue
            if not ok:
                raise ProtocolAbortError(f"worker process failed:\n{payload}", rank)
            results[rank] = payload
            collected += 1
        for proc in procs:
            proc.join(timeout=10.0)
    finally:
        for proc in procs:
            if proc.is_alive():
                proc.terminate()
    return RunResult(
        results[0].trajectory,
        [res.state for res in results],
        [res.ledger for res in results],
        [res.timings for res in results],
    )
