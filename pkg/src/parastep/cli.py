"""Operator command line: train toy predictors, denoise with any strategy
(locally or across worker processes), compare strategies against the
sequential baseline, print communication-cost tables, and benchmark
wall-clock speedup.

Commands
--------
train      fit a noise predictor on a toy 2-D dataset, save PSWT weights
generate   run a denoising strategy, save trajectory + samples (+ ledger)
compare    run strategies over many seeds against the sequential reference
commodel   print per-step communication-volume tables for the cost models
bench      time sequential vs. round-parallel denoising, loopback and tcp

Config files are flat ``key=value`` text; ``#`` starts a comment.
Command-line flags always override file values. Every command writes
``effective_config.txt`` next to its outputs; re-running with exactly that
file reproduces the outputs bit for bit (wall-clock timings excepted).

Recognized keys (flag spellings use ``-`` instead of ``_``):

===============  ============================================================
key              meaning
===============  ============================================================
seed             base RNG seed (default 0); sample/seed sweeps use seed+i
out_dir          output directory (default ``parastep_out``)
steps            denoising steps T (default 50)
sigma_mode       posterior | zero
warmup           warm-up step count (mutually exclusive with warmup_ratio)
warmup_ratio     warm-up as a fraction of steps, resolved to round(r*T)
strategy         sequential | direct_reuse | parastep | batchstep | dynamic
degree           parallel degree / cycle length / stride (aliases -p, -s,
                 --stride select the same value)
backend          loopback | tcp (parastep runs; default loopback)
backends         bench only: comma subset of loopback,tcp (default both)
hosts            comma host:port list for tcp (default: free local ports)
timeout          per-receive protocol timeout in seconds (default 30)
weights          path to a PSWT weight file
ballast          synthetic per-forward workload multiplier; bench accepts
                 ``auto`` to calibrate one forward to >= 5 ms
samples          generate: number of samples (seeds seed..seed+n-1)
cycle_lengths    dynamic strategy: comma list of per-cycle lengths
tau              dynamic strategy: adjacent-noise threshold for deriving
                 cycle lengths from a sequential reference run
max_cycle        dynamic strategy: cap on derived cycle length (default 4)
dataset          train: gauss8 | swiss_roll | two_moons (required)
data_dim         sample dimensionality (default 2)
iterations       train: optimizer iterations (default 3000)
hidden           train: comma list of hidden widths (default 64,64)
embed_dim        train: timestep embedding width (default 16)
learning_rate    train: Adam step size (default 1e-3)
batch_size       train: minibatch size (default 64)
activation       train: tanh | silu
objective        train: noise | flow
dataset_size     train: number of training points (default 4000)
log_interval     train: loss-log thinning (default 100)
strategies       compare: comma list of name[:degree] specs
seeds            compare: number of seeds (default 50)
L_values         commodel: comma list of sequence-parallel layer counts
M_values         commodel: comma list of activation sizes
p_values         commodel: comma list of device counts
reps             bench: repetitions per measurement (default 5)
===============  ============================================================

Exit codes: 0 success, 2 usage/config error, 3 runtime/protocol error.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
from pathlib import Path

from . import bench as bench_mod
from .commodel import call_count_per_device, comm_table
from .datasets import DATASET_NAMES
from .engines import (
    STRATEGIES,
    STRATEGY_BATCHSTEP,
    STRATEGY_DIRECT_REUSE,
    STRATEGY_DYNAMIC,
    STRATEGY_PARASTEP,
    STRATEGY_SEQUENTIAL,
    RunConfig,
    compare_trajectories,
    generate_threshold_schedule,
    run_strategy,
    warmup_from_ratio,
)
from .errors import ConfigError, ParameterError, ParastepError
from .predictor import (
    ACT_SILU,
    ACT_TANH,
    OBJECTIVE_FLOW,
    OBJECTIVE_NOISE,
    TrainConfig,
    load_weights,
    save_weights,
    train,
)
from .protocol import (
    DEFAULT_TIMEOUT,
    MSG_NOISE,
    MSG_SAMPLE_BCAST,
    run_loopback,
    run_tcp,
    verify_ledger,
)
from .schedule import SIGMA_POSTERIOR, SIGMA_ZERO, make_default_schedule
from .trajectory_io import save_trajectory_text

_SIGMA_MODES = (SIGMA_POSTERIOR, SIGMA_ZERO)
_ACTIVATIONS = (ACT_TANH, ACT_SILU)
_OBJECTIVES = (OBJECTIVE_NOISE, OBJECTIVE_FLOW)
_DEFAULT_OUT_DIR = "parastep_out"

_CONFIG_KEYS = frozenset(
    """
    seed out_dir steps sigma_mode warmup warmup_ratio strategy degree
    backend backends hosts timeout weights ballast samples cycle_lengths tau
    max_cycle dataset data_dim iterations hidden embed_dim learning_rate
    batch_size activation objective dataset_size log_interval strategies
    seeds L_values M_values p_values reps
    """.split()
)


# ---------------------------------------------------------------------------
# config file + value resolution


def _cast_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _cast_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _cast_str(raw: str, key: str) -> str:
    return raw


def _cast_int_list(raw: str, key: str) -> list[int]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: expected a comma-separated integer list, got {raw!r}")
    return [_cast_int(p, key) for p in parts]


def _cast_str_list(raw: str, key: str) -> list[str]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: expected a comma-separated list, got {raw!r}")
    return parts


def _choice(options):
    def cast(raw: str, key: str):
        if raw not in options:
            raise ConfigError(f"{key}: expected one of {', '.join(options)}; got {raw!r}")
        return raw

    return cast


def _cast_ballast(raw: str, key: str):
    if raw == "auto":
        return "auto"
    value = _cast_int(raw, key)
    if value < 1:
        raise ConfigError(f"{key}: must be >= 1, got {value}")
    return value


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse flat key=value config text; unknown or repeated keys are errors."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not key:
            raise ConfigError(f"{origin}:{line_no}: expected key=value, got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{origin}:{line_no}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{line_no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, origin=str(path))


class Resolver:
    """defaults < config file < command-line flags, with an effective echo.

    Every value a command consumes goes through get(), so the accumulated
    ``effective`` dict is exactly what reproduces the run.
    """

    def __init__(self, ns: argparse.Namespace):
        self.ns = ns
        config_path = getattr(ns, "config", None)
        self.file = load_config_file(config_path) if config_path else {}
        self.effective: dict = {"command": ns.command}

    def get(self, key: str, default, cast):
        value = getattr(self.ns, key, None)
        if value is None:
            raw = self.file.get(key)
            value = cast(raw, key) if raw is not None else default
        elif isinstance(value, str):
            value = cast(value, key)
        self.effective[key] = value
        return value


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt_value(v) for v in value)
    return str(value)


def _write_effective(out_dir: Path, resolver: Resolver) -> None:
    command = resolver.effective.pop("command")
    lines = [f"# effective configuration for: parastep {command}"]
    for key in sorted(resolver.effective):
        value = resolver.effective[key]
        if value is None:
            continue
        lines.append(f"{key}={_fmt_value(value)}")
    (out_dir / "effective_config.txt").write_text("\n".join(lines) + "\n")


def _resolve_out_dir(resolver: Resolver) -> Path:
    out = Path(resolver.get("out_dir", _DEFAULT_OUT_DIR, _cast_str))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_warmup(resolver: Resolver, steps: int, default_ratio: float | None = None) -> int:
    # CLI flags are mutually exclusive already; a config file could still
    # carry both keys, and a flag silently overrides either file key.
    warmup = getattr(resolver.ns, "warmup", None)
    ratio = getattr(resolver.ns, "warmup_ratio", None)
    if warmup is None and ratio is None:
        file_warmup = resolver.file.get("warmup")
        file_ratio = resolver.file.get("warmup_ratio")
        if file_warmup is not None and file_ratio is not None:
            raise ConfigError("set warmup or warmup_ratio, not both")
        if file_warmup is not None:
            warmup = _cast_int(file_warmup, "warmup")
        elif file_ratio is not None:
            ratio = _cast_float(file_ratio, "warmup_ratio")
    if warmup is None:
        if ratio is None:
            ratio = default_ratio
        warmup = warmup_from_ratio(ratio, steps) if ratio is not None else 0
    resolver.effective["warmup"] = warmup
    resolver.effective["warmup_ratio"] = None
    return warmup


def _resolve_weights(resolver: Resolver, allow_auto_ballast: bool = False):
    path = resolver.get("weights", None, _cast_str)
    if path is None:
        raise ConfigError("a trained weight file is required (--weights)")
    if not os.path.exists(path):
        raise ConfigError(f"weight file not found: {path}")
    resolver.effective["weights"] = os.path.abspath(path)
    w = load_weights(path)
    ballast = resolver.get("ballast", None, _cast_ballast)
    if ballast == "auto" and not allow_auto_ballast:
        raise ConfigError("ballast=auto is only supported by bench")
    if isinstance(ballast, int):
        w.ballast = ballast
    declared_dim = resolver.get("data_dim", None, _cast_int)
    if declared_dim is not None and declared_dim != w.data_dim:
        raise ConfigError(
            f"config data_dim {declared_dim} does not match weight file ({w.data_dim})"
        )
    resolver.effective["data_dim"] = w.data_dim
    return w


def _resolve_hosts(resolver: Resolver, degree: int) -> list[str] | None:
    hosts = resolver.get("hosts", None, _cast_str_list)
    if hosts is None:
        return None
    for entry in hosts:
        host, sep, port = entry.rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ConfigError(f"hosts: expected host:port, got {entry!r}")
    if len(hosts) != degree:
        raise ConfigError(f"hosts: need {degree} entries, got {len(hosts)}")
    return hosts


def _float_csv(value: float) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# commands


def cmd_train(ns: argparse.Namespace) -> int:
    r = Resolver(ns)
    out_dir = _resolve_out_dir(r)
    dataset = r.get("dataset", None, _choice(DATASET_NAMES))
    if dataset is None:
        raise ConfigError(f"missing dataset id (--dataset); one of {', '.join(DATASET_NAMES)}")
    steps = r.get("steps", 50, _cast_int)
    cfg = TrainConfig(
        dataset=dataset,
        data_dim=r.get("data_dim", 2, _cast_int),
        hidden=tuple(r.get("hidden", [64, 64], _cast_int_list)),
        embed_dim=r.get("embed_dim", 16, _cast_int),
        learning_rate=r.get("learning_rate", 1e-3, _cast_float),
        batch_size=r.get("batch_size", 64, _cast_int),
        iterations=r.get("iterations", 3000, _cast_int),
        seed=r.get("seed", 0, _cast_int),
        activation=r.get("activation", ACT_SILU, _choice(_ACTIVATIONS)),
        dataset_size=r.get("dataset_size", 4000, _cast_int),
        log_interval=r.get("log_interval", 100, _cast_int),
        objective=r.get("objective", OBJECTIVE_NOISE, _choice(_OBJECTIVES)),
    )
    sched = make_default_schedule(steps)
    loss_log: list[tuple[int, float]] = []
    w = train(cfg, sched, loss_log=loss_log)
    save_weights(w, out_dir / "weights.pswt")
    lines = ["iteration,loss"] + [f"{it},{_float_csv(loss)}" for it, loss in loss_log]
    (out_dir / "train_loss.csv").write_text("\n".join(lines) + "\n")
    _write_effective(out_dir, r)
    final = f"final loss {loss_log[-1][1]:.6f}" if loss_log else "no iterations run"
    print(f"trained {dataset} for {cfg.iterations} iterations; {final}")
    print(f"wrote {out_dir / 'weights.pswt'}")
    return 0


def _derive_cycle_lengths(r: Resolver, w, sched, steps, warmup, seed, data_dim):
    lengths = r.get("cycle_lengths", None, _cast_int_list)
    tau = r.get("tau", None, _cast_float)
    max_cycle = r.get("max_cycle", 4, _cast_int)
    if lengths is None:
        if tau is None:
            raise ConfigError("dynamic strategy needs cycle_lengths or tau")
        ref_cfg = RunConfig(
            steps=steps, warmup=0, strategy=STRATEGY_SEQUENTIAL, degree=1,
            seed=seed, data_dim=data_dim,
        )
        reference = run_strategy(w, sched, ref_cfg)
        lengths = generate_threshold_schedule(reference, tau, max_cycle, warmup)
    # Echo the concrete lengths so a rerun of the effective config does not
    # depend on re-deriving them.
    r.effective["cycle_lengths"] = lengths
    r.effective["tau"] = None
    return lengths


def cmd_generate(ns: argparse.Namespace) -> int:
    r = Resolver(ns)
    out_dir = _resolve_out_dir(r)
    steps = r.get("steps", 50, _cast_int)
    sigma_mode = r.get("sigma_mode", SIGMA_POSTERIOR, _choice(_SIGMA_MODES))
    seed = r.get("seed", 0, _cast_int)
    strategy = r.get("strategy", STRATEGY_SEQUENTIAL, _choice(STRATEGIES))
    degree = r.get("degree", 1, _cast_int)
    samples = r.get("samples", 1, _cast_int)
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")
    warmup = _resolve_warmup(r, steps)
    backend = r.get("backend", bench_mod.BACKEND_LOOPBACK, _choice(bench_mod.BACKENDS))
    timeout = r.get("timeout", DEFAULT_TIMEOUT, _cast_float)
    w = _resolve_weights(r)
    sched = make_default_schedule(steps, sigma_mode)

    schedule_override = None
    if strategy == STRATEGY_DYNAMIC:
        schedule_override = _derive_cycle_lengths(r, w, sched, steps, warmup, seed, w.data_dim)
    hosts = _resolve_hosts(r, degree) if backend == bench_mod.BACKEND_TCP else None

    first_traj = None
    ledger = None
    finals = []
    for i in range(samples):
        cfg = RunConfig(
            steps=steps,
            warmup=warmup,
            strategy=strategy,
            degree=degree,
            schedule_override=schedule_override,
            seed=seed + i,
            data_dim=w.data_dim,
        )
        if strategy == STRATEGY_PARASTEP:
            if backend == bench_mod.BACKEND_TCP:
                result = run_tcp(w, sched, cfg, hosts=hosts, timeout=timeout)
            else:
                result = run_loopback(w, sched, cfg, timeout=timeout)
            traj = result.trajectory
            if i == 0:
                ledger = result.merged_ledger
        else:
            traj = run_strategy(w, sched, cfg)
        if i == 0:
            first_traj = traj
            save_trajectory_text(traj, out_dir / "trajectory.txt")
        finals.append(traj.x0)

    header = "sample," + ",".join(f"x{j}" for j in range(w.data_dim))
    rows = [header]
    for i, x0 in enumerate(finals):
        rows.append(f"{i}," + ",".join(_float_csv(v) for v in x0))
    (out_dir / "samples.csv").write_text("\n".join(rows) + "\n")

    summary = [
        "command=generate",
        f"strategy={strategy}",
        f"degree={degree}",
        f"steps={steps}",
        f"warmup={warmup}",
        f"sigma_mode={sigma_mode}",
        f"samples={samples}",
        f"fresh_calls={first_traj.fresh_calls}",
        f"batch_calls={first_traj.batch_calls}",
    ]
    if strategy in (STRATEGY_PARASTEP, STRATEGY_BATCHSTEP):
        summary.append(
            f"busiest_device_calls={call_count_per_device(steps, warmup, degree)}"
        )
    elif strategy == STRATEGY_DYNAMIC:
        summary.append(f"busiest_device_calls={warmup + len(schedule_override)}")
    else:
        summary.append(f"busiest_device_calls={first_traj.fresh_calls}")
    if ledger is not None:
        (out_dir / "ledger.csv").write_text(ledger.to_csv())
        post = steps - warmup
        cycles, remainder = divmod(post, degree)
        verify_ledger(ledger, degree, w.data_dim, cycles, remainder)
        data_msgs = ledger.count(MSG_NOISE) + ledger.count(MSG_SAMPLE_BCAST)
        data_payload = ledger.payload_bytes(MSG_NOISE) + ledger.payload_bytes(MSG_SAMPLE_BCAST)
        summary += [
            f"messages={data_msgs}",
            f"payload_bytes={data_payload}",
            "ledger=ok",
        ]
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    _write_effective(out_dir, r)
    print("\n".join(summary))
    print(f"wrote {out_dir / 'trajectory.txt'}, {out_dir / 'samples.csv'}")
    return 0


def _parse_strategy_specs(raw: list[str]) -> list[tuple[str, int]]:
    specs = []
    for item in raw:
        name, colon, deg = item.partition(":")
        if name not in STRATEGIES:
            raise ConfigError(
                f"strategies: unknown strategy {name!r}; one of {', '.join(STRATEGIES)}"
            )
        degree = _cast_int(deg, "strategies") if colon else 1
        if degree < 1:
            raise ConfigError(f"strategies: degree must be >= 1 in {item!r}")
        specs.append((name, degree))
    return specs


def cmd_compare(ns: argparse.Namespace) -> int:
    r = Resolver(ns)
    out_dir = _resolve_out_dir(r)
    raw_specs = r.get("strategies", None, _cast_str_list)
    if not raw_specs:
        raise ConfigError("at least one strategy spec is required (--strategies name[:degree])")
    specs = _parse_strategy_specs(raw_specs)
    n_seeds = r.get("seeds", 50, _cast_int)
    if n_seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {n_seeds}")
    steps = r.get("steps", 50, _cast_int)
    sigma_mode = r.get("sigma_mode", SIGMA_POSTERIOR, _choice(_SIGMA_MODES))
    base_seed = r.get("seed", 0, _cast_int)
    warmup = _resolve_warmup(r, steps)
    w = _resolve_weights(r)
    sched = make_default_schedule(steps, sigma_mode)
    r.effective["strategies"] = [f"{name}:{deg}" for name, deg in specs]

    references = []
    for i in range(n_seeds):
        ref_cfg = RunConfig(
            steps=steps, warmup=0, strategy=STRATEGY_SEQUENTIAL, degree=1,
            seed=base_seed + i, data_dim=w.data_dim,
        )
        references.append(run_strategy(w, sched, ref_cfg))

    adjacent_lines = ["strategy,seed,step,rel_mae_x,rel_mae_eps"]
    divergence_lines = ["strategy,seed,final_rel_mae,final_mse"]
    finals: dict[str, list[float]] = {}
    for name, deg in specs:
        label = f"{name}:{deg}"
        finals[label] = []
        for i in range(n_seeds):
            cfg = RunConfig(
                steps=steps, warmup=warmup, strategy=name, degree=deg,
                seed=base_seed + i, data_dim=w.data_dim,
            )
            traj = (
                references[i]
                if name == STRATEGY_SEQUENTIAL
                else run_strategy(w, sched, cfg)
            )
            report = compare_trajectories(references[i], traj)
            for row in report.adjacent_b:
                adjacent_lines.append(
                    f"{label},{base_seed + i},{row.t},"
                    f"{_float_csv(row.rel_mae_x)},{_float_csv(row.rel_mae_eps)}"
                )
            divergence_lines.append(
                f"{label},{base_seed + i},"
                f"{_float_csv(report.final_rel_mae)},{_float_csv(report.final_mse)}"
            )
            finals[label].append(report.final_rel_mae)
    (out_dir / "adjacent.csv").write_text("\n".join(adjacent_lines) + "\n")
    (out_dir / "divergence.csv").write_text("\n".join(divergence_lines) + "\n")

    summary = [
        "command=compare",
        f"seeds={n_seeds}",
        f"steps={steps}",
        f"warmup={warmup}",
    ]
    for label, values in finals.items():
        summary.append(
            f"strategy={label} mean_final_rel_mae={statistics.mean(values):.6g} "
            f"median_final_rel_mae={statistics.median(values):.6g}"
        )
    para_label = next((f"{n}:{d}" for n, d in specs if n == STRATEGY_PARASTEP), None)
    reuse_label = next((f"{n}:{d}" for n, d in specs if n == STRATEGY_DIRECT_REUSE), None)
    if para_label and reuse_label:
        wins = sum(
            1 for a, b in zip(finals[para_label], finals[reuse_label]) if a < b
        )
        summary.append(
            f"win_rate={wins / n_seeds:.4f} ({wins}/{n_seeds}) "
            f"{para_label} vs {reuse_label}"
        )
        summary.append(
            f"mean_final_rel_mae_delta={statistics.mean(finals[reuse_label]) - statistics.mean(finals[para_label]):.6g} "
            f"(positive favors {para_label})"
        )
    else:
        summary.append("win_rate=n/a")
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    _write_effective(out_dir, r)
    print("\n".join(summary))
    return 0


def cmd_commodel(ns: argparse.Namespace) -> int:
    r = Resolver(ns)
    out_dir = _resolve_out_dir(r)
    Ls = r.get("L_values", [1, 8], _cast_int_list)
    Ms = r.get("M_values", [1], _cast_int_list)
    ps = r.get("p_values", [1, 2, 4, 8], _cast_int_list)
    table = comm_table(Ls, Ms, ps)
    (out_dir / "commodel.csv").write_text(table.to_csv())
    (out_dir / "commodel.txt").write_text(table.to_text())
    _write_effective(out_dir, r)
    print(table.to_text(), end="")
    return 0


def cmd_bench(ns: argparse.Namespace) -> int:
    r = Resolver(ns)
    out_dir = _resolve_out_dir(r)
    steps = r.get("steps", 50, _cast_int)
    sigma_mode = r.get("sigma_mode", SIGMA_POSTERIOR, _choice(_SIGMA_MODES))
    seed = r.get("seed", 0, _cast_int)
    strategy = r.get("strategy", STRATEGY_PARASTEP, _choice(STRATEGIES))
    if strategy != STRATEGY_PARASTEP:
        raise ConfigError("bench compares the sequential baseline against parastep")
    degree = r.get("degree", 2, _cast_int)
    warmup = _resolve_warmup(r, steps, default_ratio=0.1)
    reps = r.get("reps", 5, _cast_int)
    backends = tuple(r.get("backends", list(bench_mod.BACKENDS), _cast_str_list))
    timeout = r.get("timeout", DEFAULT_TIMEOUT, _cast_float)
    w = _resolve_weights(r, allow_auto_ballast=True)
    hosts = _resolve_hosts(r, degree) if bench_mod.BACKEND_TCP in backends else None
    if r.effective.get("ballast") in (None, "auto"):
        w.ballast = bench_mod.calibrate_ballast(w)
    r.effective["ballast"] = w.ballast
    sched = make_default_schedule(steps, sigma_mode)

    report = bench_mod.run_bench(
        w, sched, steps, warmup, degree, seed, w.data_dim,
        backends=backends, reps=reps, hosts=hosts, timeout=timeout,
    )
    per_forward = bench_mod._time_forward(w, w.data_dim, reps=3)
    if per_forward < bench_mod.TARGET_FORWARD_S * 0.8:
        report.warnings.append(
            f"one forward call costs {per_forward * 1e3:.2f} ms (< "
            f"{bench_mod.TARGET_FORWARD_S * 1e3:.0f} ms); results may not be compute-bound"
        )
    (out_dir / "bench.csv").write_text(report.to_csv())
    (out_dir / "bench.txt").write_text(report.to_text())
    _write_effective(out_dir, r)
    print(report.to_text(), end="")
    for msg in report.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser + entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parastep",
        description="Step-parallel diffusion denoising on toy 2-D models.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int, help="base RNG seed (default 0)")
    common.add_argument("--out-dir", dest="out_dir", metavar="DIR", help="output directory")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--steps", type=int, help="denoising steps T (default 50)")
    run.add_argument("--sigma-mode", dest="sigma_mode", choices=_SIGMA_MODES)
    warm = run.add_mutually_exclusive_group()
    warm.add_argument("--warmup", type=int, help="warm-up step count")
    warm.add_argument("--warmup-ratio", dest="warmup_ratio", type=float,
                      help="warm-up as a fraction of steps")
    run.add_argument("--weights", metavar="PATH", help="PSWT weight file")
    run.add_argument("--ballast", help="per-forward workload multiplier (bench: 'auto')")

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--strategy", choices=STRATEGIES)
    deg = shape.add_mutually_exclusive_group()
    deg.add_argument("-p", "--degree", dest="degree", type=int, help="parallel degree")
    deg.add_argument("-s", "--cycle", dest="degree", type=int,
                     help="cycle length (same knob as --degree)")
    deg.add_argument("--stride", dest="degree", type=int,
                     help="reuse stride (same knob as --degree)")
    shape.add_argument("--backend", choices=bench_mod.BACKENDS,
                       help="parastep transport (default loopback)")
    shape.add_argument("--hosts", help="comma-separated host:port list for tcp")
    shape.add_argument("--timeout", type=float, help="protocol receive timeout (s)")

    train_p = sub.add_parser("train", parents=[common],
                             help="train a toy noise predictor, save PSWT weights")
    train_p.add_argument("--dataset", choices=DATASET_NAMES)
    train_p.add_argument("--steps", type=int, help="schedule length used for training")
    train_p.add_argument("--data-dim", dest="data_dim", type=int)
    train_p.add_argument("--iterations", type=int)
    train_p.add_argument("--hidden", help="comma list of hidden widths (default 64,64)")
    train_p.add_argument("--embed-dim", dest="embed_dim", type=int)
    train_p.add_argument("--learning-rate", dest="learning_rate", type=float)
    train_p.add_argument("--batch-size", dest="batch_size", type=int)
    train_p.add_argument("--activation", choices=_ACTIVATIONS)
    train_p.add_argument("--objective", choices=_OBJECTIVES)
    train_p.add_argument("--dataset-size", dest="dataset_size", type=int)
    train_p.add_argument("--log-interval", dest="log_interval", type=int)
    train_p.set_defaults(func=cmd_train)

    gen_p = sub.add_parser("generate", parents=[common, run, shape],
                           help="denoise with a strategy; save trajectory + samples")
    gen_p.add_argument("--samples", type=int, help="number of samples (default 1)")
    gen_p.add_argument("--data-dim", dest="data_dim", type=int)
    gen_p.add_argument("--cycle-lengths", dest="cycle_lengths",
                       help="dynamic strategy: comma list of cycle lengths")
    gen_p.add_argument("--tau", type=float,
                       help="dynamic strategy: derive cycle lengths at this threshold")
    gen_p.add_argument("--max-cycle", dest="max_cycle", type=int,
                       help="cap for derived cycle lengths (default 4)")
    gen_p.set_defaults(func=cmd_generate)

    cmp_p = sub.add_parser("compare", parents=[common, run],
                           help="compare strategies against the sequential reference")
    cmp_p.add_argument("--strategies", help="comma list of name[:degree] specs")
    cmp_p.add_argument("--seeds", type=int, help="number of seeds (default 50)")
    cmp_p.add_argument("--data-dim", dest="data_dim", type=int)
    cmp_p.set_defaults(func=cmd_compare)

    com_p = sub.add_parser("commodel", parents=[common],
                           help="print communication-volume model tables")
    com_p.add_argument("--L", dest="L_values", help="comma list of layer counts")
    com_p.add_argument("--M", dest="M_values", help="comma list of activation sizes")
    com_p.add_argument("--p-list", dest="p_values", help="comma list of device counts")
    com_p.set_defaults(func=cmd_commodel)

    bench_p = sub.add_parser("bench", parents=[common, run, shape],
                             help="time sequential vs. round-parallel denoising")
    bench_p.add_argument("--reps", type=int, help="repetitions per measurement (default 5)")
    bench_p.add_argument("--backends", help="comma subset of loopback,tcp (default both)")
    bench_p.add_argument("--data-dim", dest="data_dim", type=int)
    bench_p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParastepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
