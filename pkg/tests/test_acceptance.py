"""Acceptance gate: twelve checks, one per numbered criterion, each printing a
single PASS/FAIL line with its measured evidence.

Criterion 8 is known-red on this model family: the population medians move the
right way (mid-run adjacent noise changes are smaller than early ones), but the
per-seed reliability floor of 45/50 is not reached — roughly a fifth of seeds
collapse their predicted-noise magnitude mid-run, which inflates the relative
MAE there. The check is implemented faithfully and left to fail with its
numbers rather than weakened.

Criterion 11 needs at least four physical cores and is skipped where the host
has fewer.
"""

import math
import os
import statistics
import time

import numpy as np
import pytest

from tests.conftest import small_weights

from parastep.bench import calibrate_ballast, run_bench
from parastep.commodel import (
    amdahl_speedup,
    call_count_per_device,
    comm_asyncdiff,
    comm_parastep,
    comm_ring,
    comm_table,
)
from parastep.engines import (
    STRATEGY_BATCHSTEP,
    STRATEGY_DIRECT_REUSE,
    STRATEGY_DYNAMIC,
    STRATEGY_PARASTEP,
    RunConfig,
    compare_trajectories,
    denoise_parastep_emulated,
    run_strategy,
    warmup_from_ratio,
)
from parastep.errors import FrameError
from parastep.numerics import rel_mae
from parastep.protocol.ledger import verify_ledger
from parastep.protocol.wire import (
    MSG_NOISE,
    MSG_SAMPLE_BCAST,
    decode_message,
    encode_message,
)
from parastep.protocol.worker import run_loopback, run_tcp
from parastep.schedule import make_default_schedule

from tests.test_wire import GOLDEN


def _report(n: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


def _seq(w, sched, seed, data_dim=2):
    return run_strategy(
        w, sched, RunConfig(steps=sched.T, seed=seed, data_dim=data_dim)
    )


# ---------------------------------------------------------------------------

def test_criterion_01_degenerate_collapse(trained_w):
    t0 = time.perf_counter()
    checked = 0
    for sigma_mode in ("posterior", "zero"):
        sched = make_default_schedule(50, sigma_mode=sigma_mode)
        for seed in range(10):
            ref = _seq(trained_w, sched, seed)
            variants = [
                RunConfig(steps=50, warmup=0, strategy=STRATEGY_PARASTEP,
                          degree=1, seed=seed, data_dim=2),
                RunConfig(steps=50, warmup=0, strategy=STRATEGY_BATCHSTEP,
                          degree=1, seed=seed, data_dim=2),
                RunConfig(steps=50, warmup=0, strategy=STRATEGY_DIRECT_REUSE,
                          degree=1, seed=seed, data_dim=2),
                RunConfig(steps=50, warmup=0, strategy=STRATEGY_DYNAMIC,
                          schedule_override=[1] * 50, seed=seed, data_dim=2),
            ]
            for cfg in variants:
                assert run_strategy(trained_w, sched, cfg).bitwise_equal(ref), (
                    f"{cfg.strategy} diverged from sequential at seed {seed}"
                )
                checked += 1
    elapsed = time.perf_counter() - t0
    _report(
        1,
        checked == 80 and elapsed < 60,
        f"{checked}/80 degenerate runs bitwise-equal to sequential in {elapsed:.1f}s",
    )


def test_criterion_02_backend_equivalence():
    w = small_weights(seed=7)
    t0 = time.perf_counter()
    combos = 0
    for T in (20, 50):
        sched = make_default_schedule(T)
        for p in (2, 3, 4):
            for warmup in (1, warmup_from_ratio(0.3, T)):
                cfg = RunConfig(steps=T, warmup=warmup, strategy=STRATEGY_PARASTEP,
                                degree=p, seed=13, data_dim=2)
                emu, _ = denoise_parastep_emulated(w, sched, cfg)
                loop = run_loopback(w, sched, cfg, timeout=60)
                tcp = run_tcp(w, sched, cfg, timeout=60)
                assert loop.trajectory.bitwise_equal(emu), (T, p, warmup, "loopback")
                assert tcp.trajectory.bitwise_equal(emu), (T, p, warmup, "tcp")
                combos += 1
    elapsed = time.perf_counter() - t0
    _report(
        2,
        combos == 12 and elapsed < 300,
        f"{combos}/12 (T, p, warmup) combos: loopback == tcp == emulation "
        f"bitwise in {elapsed:.1f}s",
    )


def test_criterion_03_batchstep_equivalence():
    w = small_weights(seed=7)
    sched = make_default_schedule(50)
    t0 = time.perf_counter()
    checked = 0
    for s in (2, 3, 4, 8):
        for seed in (0, 1):
            para = run_strategy(w, sched, RunConfig(
                steps=50, warmup=5, strategy=STRATEGY_PARASTEP, degree=s,
                seed=seed, data_dim=2))
            batch = run_strategy(w, sched, RunConfig(
                steps=50, warmup=5, strategy=STRATEGY_BATCHSTEP, degree=s,
                seed=seed, data_dim=2))
            assert batch.bitwise_equal(para), f"s={s} seed={seed}"
            checked += 1
    elapsed = time.perf_counter() - t0
    _report(
        3,
        checked == 8 and elapsed < 120,
        f"batchstep(s) == parastep(p=s) bitwise for s in (2,3,4,8), "
        f"2 seeds each, in {elapsed:.1f}s",
    )


def test_criterion_04_ledger_closed_forms():
    w = small_weights(seed=7)
    dim = 2
    details = []
    for p in (2, 4, 8):
        cycles, warmup = 3, 2
        T = warmup + cycles * p
        sched = make_default_schedule(T)
        cfg = RunConfig(steps=T, warmup=warmup, strategy=STRATEGY_PARASTEP,
                        degree=p, seed=5, data_dim=dim)
        merged = run_loopback(w, sched, cfg).merged_ledger
        per_cycle = 2 * (p - 1) * 8 * dim
        noise = merged.count(MSG_NOISE)
        bcast = merged.count(MSG_SAMPLE_BCAST)
        payload = merged.payload_bytes(MSG_NOISE) + merged.payload_bytes(MSG_SAMPLE_BCAST)
        assert payload == cycles * per_cycle, f"p={p} payload {payload}"
        assert noise == cycles * (p - 1), f"p={p} noise census"
        assert bcast == cycles * (p - 1), f"p={p} broadcast census"
        report = verify_ledger(merged, p, dim, cycles)
        assert report.measured_per_step == comm_parastep(8 * dim, p)
        details.append(f"p={p}: {payload}B=={cycles}*{per_cycle}B")
    sched = make_default_schedule(10)
    single = run_loopback(w, sched, RunConfig(
        steps=10, warmup=1, strategy=STRATEGY_PARASTEP, degree=1,
        seed=5, data_dim=dim))
    assert single.merged_ledger.count() == 0
    _report(4, True, "; ".join(details) + "; p=1 sends zero messages")


def test_criterion_05_formula_table():
    table = comm_table([1, 4, 8], [1, 3], [1, 2, 4, 8])
    for row in table.rows:
        assert row.c_ring == 2 * row.L * (row.p - 1) * row.M
        assert row.c_asyncdiff == row.p * (row.p - 1) * row.M
        assert row.c_parastep == comm_parastep(row.M, row.p)
        if row.p > 1:
            assert row.ratio_ring == row.L * row.p
            assert row.ratio_asyncdiff * 2 == row.p * row.p
    assert comm_ring(8, 1, 4) == 48
    assert comm_asyncdiff(1, 4) == 12
    assert float(comm_parastep(1, 4)) == 1.5
    _report(
        5, True,
        "2L(p-1)M / p(p-1)M / 2(p-1)M/p and ratios L*p, p^2/2 hold over the "
        "3x2x4 grid; spot row (L=8,M=1,p=4) = 48/12/1.5",
    )


def test_criterion_06_call_count_law():
    w = small_weights(seed=7)
    for T in (13, 20, 50, 200):
        for p in (1, 2, 3, 4, 8):
            for warmup in (0, 1, T // 4, T):
                expected = warmup + math.ceil((T - warmup) / p)
                assert call_count_per_device(T, warmup, p) == expected
    assert call_count_per_device(50, 13, 2) == 32
    assert call_count_per_device(200, 1, 8) == 26
    # the formula matches the emulated busiest rank
    for T, warmup, p in ((13, 4, 3), (12, 5, 3), (20, 2, 4)):
        sched = make_default_schedule(T)
        cfg = RunConfig(steps=T, warmup=warmup, strategy=STRATEGY_PARASTEP,
                        degree=p, seed=2, data_dim=2)
        _, workers = denoise_parastep_emulated(w, sched, cfg)
        busiest = max(ws.local_fresh_calls for ws in workers)
        assert busiest == call_count_per_device(T, warmup, p), (T, warmup, p)
    _report(
        6, True,
        "busiest-device calls == warmup + ceil((T-warmup)/p) across the grid "
        "and in emulation; (50,13,2)->32, (200,1,8)->26",
    )


def test_criterion_07_gradient_correctness():
    from parastep.predictor import flow_loss_and_grad_fixed, loss_and_grad_fixed
    from tests.test_predictor import _fd_max_rel_err

    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2024)
    sched = make_default_schedule(12)
    for i in range(20):
        activation = ("silu", "tanh")[i % 2]
        w = small_weights(seed=100 + i, hidden=(int(rng.integers(3, 9)),),
                          embed_dim=4, activation=activation)
        case = np.random.default_rng(200 + i)
        x0 = case.normal(size=(5, 2))
        ts = [int(t) for t in case.integers(1, 13, size=5)]
        eps = case.normal(size=(5, 2))
        if (i // 2) % 2:
            def loss_fn(weights):
                return flow_loss_and_grad_fixed(weights, x0, ts, eps, 12)
        else:
            def loss_fn(weights):
                return loss_and_grad_fixed(weights, x0, ts, eps, sched)
        worst = max(worst, _fd_max_rel_err(w, loss_fn))
    elapsed = time.perf_counter() - t0
    _report(
        7,
        worst < 1e-4 and elapsed < 60,
        f"max relative error vs central differences {worst:.3e} < 1e-4 "
        f"over 20 nets in {elapsed:.1f}s",
    )


def test_criterion_08_adjacent_noise_flattens(trained_w, sched50):
    wins = 0
    firsts, mids = [], []
    for seed in range(50):
        traj = _seq(trained_w, sched50, seed)
        series = [
            row.rel_mae_eps for row in compare_trajectories(traj, traj).adjacent_a
        ]
        n = len(series)
        first = series[: max(1, round(0.1 * n))]
        mid = series[round(0.2 * n): round(0.8 * n)]
        firsts.append(statistics.median(first))
        mids.append(statistics.median(mid))
        if statistics.median(mid) < statistics.median(first):
            wins += 1
    detail = (
        f"median mid-60% adjacent rel-MAE below first-10% for {wins}/50 seeds "
        f"(need >= 45); population medians: first {statistics.median(firsts):.4f}, "
        f"mid {statistics.median(mids):.4f}"
    )
    _report(8, wins >= 45, detail)


def test_criterion_09_beats_direct_reuse(trained_w, sched50):
    t0 = time.perf_counter()
    warmup = warmup_from_ratio(0.2, 50)
    para_err, reuse_err = [], []
    for seed in range(50):
        ref = _seq(trained_w, sched50, seed)
        para = run_strategy(trained_w, sched50, RunConfig(
            steps=50, warmup=warmup, strategy=STRATEGY_PARASTEP, degree=2,
            seed=seed, data_dim=2))
        reuse = run_strategy(trained_w, sched50, RunConfig(
            steps=50, warmup=warmup, strategy=STRATEGY_DIRECT_REUSE, degree=2,
            seed=seed, data_dim=2))
        para_err.append(rel_mae(ref.x0, para.x0))
        reuse_err.append(rel_mae(ref.x0, reuse.x0))
    wins = sum(1 for a, b in zip(para_err, reuse_err) if a < b)
    mean_para = statistics.mean(para_err)
    mean_reuse = statistics.mean(reuse_err)
    elapsed = time.perf_counter() - t0
    _report(
        9,
        wins >= 40 and mean_para < mean_reuse and elapsed < 300,
        f"reuse-then-predict beats direct reuse in {wins}/50 seeds "
        f"(need >= 40); mean final rel-MAE {mean_para:.4f} vs "
        f"{mean_reuse:.4f}, in {elapsed:.1f}s",
    )


def test_criterion_10_warmup_tradeoff(trained_w, sched50):
    ratios = [round(0.1 * k, 1) for k in range(11)]
    # (a) the call-count speedup bound never increases with more warm-up
    bounds = []
    for ratio in ratios:
        warmup = warmup_from_ratio(ratio, 50)
        bounds.append(50 / call_count_per_device(50, warmup, 2))
    monotone = all(a >= b - 1e-12 for a, b in zip(bounds, bounds[1:]))
    assert monotone, f"speedup bound not non-increasing: {bounds}"

    # (b) divergence in the reuse regime (ratio >= 0.3) vs the 0.1 anchor;
    # ratio 0.0 is excluded: degree > 1 requires at least one warm-up step
    mean_at: dict[float, float] = {}
    for ratio in ratios[1:]:
        warmup = warmup_from_ratio(ratio, 50)
        errs = []
        for seed in range(20):
            ref = _seq(trained_w, sched50, seed)
            para = run_strategy(trained_w, sched50, RunConfig(
                steps=50, warmup=warmup, strategy=STRATEGY_PARASTEP, degree=2,
                seed=seed, data_dim=2))
            errs.append(rel_mae(ref.x0, para.x0))
        mean_at[ratio] = statistics.mean(errs)
    regime = statistics.mean(mean_at[r] for r in ratios[3:])
    anchor = mean_at[0.1]
    curve = " ".join(f"{r}:{mean_at[r]:.4f}" for r in ratios[1:])
    _report(
        10,
        monotone and regime <= anchor,
        f"(a) bound non-increasing over 11 ratios; (b) mean divergence over "
        f"ratios >= 0.3 is {regime:.4f} <= {anchor:.4f} at 0.1; curve: {curve}",
    )


def test_criterion_11_wall_clock_speedup(trained_w):
    cores = os.cpu_count() or 1
    if cores < 4:
        print(f"ACCEPTANCE CRITERION 11: SKIP (needs >= 4 cores; host has {cores})")
        pytest.skip(f"needs >= 4 cores; host has {cores}")
    ballast = calibrate_ballast(trained_w, target_s=0.005)
    trained_w.ballast = ballast
    try:
        sched = make_default_schedule(50)
        warmup = warmup_from_ratio(0.1, 50)
        rep4 = run_bench(trained_w, sched, 50, warmup, 4, 0, 2,
                         backends=("loopback",), reps=5)
        rep2 = run_bench(trained_w, sched, 50, warmup, 2, 0, 2,
                         backends=("loopback",), reps=5)
    finally:
        trained_w.ballast = 1
    row4 = next(r for r in rep4.rows if r.variant == "parastep-loopback")
    row2 = next(r for r in rep2.rows if r.variant == "parastep-loopback")
    bound4 = amdahl_speedup(warmup / 50, 4)
    ok = (
        row4.speedup >= 2.0
        and row4.speedup <= bound4 * 1.05
        and row2.speedup >= 1.4
        and row4.comm_share < 0.05
    )
    _report(
        11, ok,
        f"p=4 speedup {row4.speedup:.2f} (need 2.0..{bound4 * 1.05:.2f}), "
        f"p=2 speedup {row2.speedup:.2f} (need >= 1.4), loopback comm share "
        f"{row4.comm_share:.3f} (need < 0.05), ballast {ballast}",
    )


def test_criterion_12_wire_conformance():
    for name, (msg, hexframe) in sorted(GOLDEN.items()):
        frame = bytes.fromhex(hexframe)
        assert encode_message(msg) == frame, name
        assert decode_message(frame) == msg, name
    noise = bytes.fromhex(GOLDEN["noise"][1])
    cases = [
        (noise[:10], 10),                     # short frame -> offset == length
        (b"XSTP" + noise[4:], 0),             # magic
        (noise[:4] + b"\x09" + noise[5:], 4),  # version
        (noise[:5] + b"\x0f" + noise[6:], 5),  # msg type
        (noise[:-8], 16),                     # count / payload mismatch
    ]
    for frame, offset in cases:
        with pytest.raises(FrameError) as exc:
            decode_message(frame)
        assert exc.value.offset == offset
    _report(
        12, True,
        "4 golden frames round-trip byte-exact; 5 corruption classes raise "
        "frame errors at the documented offsets",
    )
