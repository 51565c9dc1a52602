"""Trajectory files: a line-per-step text format and a compact binary twin.

Both formats are bit-lossless: vectors are stored as raw IEEE-754 binary64
little-endian bytes (hex-encoded in the text format), so a loaded trajectory
compares bitwise-equal to the saved one. Neither records the producing
strategy or any timestamps — runs that agree step-for-step produce identical
files. The batched-call counter is bookkeeping, not identity, and is not
serialized.
"""

from __future__ import annotations

import struct

import numpy as np

from .engines import StepRecord, Trajectory
from .errors import TrajectoryFormatError
from .numerics import Vector

_TEXT_HEADER = "parastep-trajectory 1"
_BIN_MAGIC = b"PSTJ"
_BIN_VERSION = 1


def _vec_hex(v: Vector) -> str:
    return np.asarray(v, dtype="<f8").tobytes().hex()


def _hex_vec(s: str, dim: int, line_no: int) -> Vector:
    try:
        raw = bytes.fromhex(s)
    except ValueError:
        raise TrajectoryFormatError(f"line {line_no}: invalid hex payload") from None
    if len(raw) != 8 * dim:
        raise TrajectoryFormatError(
            f"line {line_no}: payload is {len(raw)} bytes, expected {8 * dim}"
        )
    return np.frombuffer(raw, dtype="<f8").copy()


def dump_trajectory_text(traj: Trajectory) -> str:
    dim = len(traj.x0)
    lines = [_TEXT_HEADER, f"T={traj.steps} data_dim={dim}"]
    for r in traj.records:
        lines.append(f"{r.t} {int(r.fresh)} {_vec_hex(r.x)} {_vec_hex(r.eps)}")
    lines.append(f"x0 {_vec_hex(traj.x0)}")
    return "\n".join(lines) + "\n"


def save_trajectory_text(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_trajectory_text(traj))


def parse_trajectory_text(text: str) -> Trajectory:
    lines = text.splitlines()
    if not lines or lines[0] != _TEXT_HEADER:
        raise TrajectoryFormatError("missing or wrong header line")
    try:
        t_part, d_part = lines[1].split()
        steps = int(t_part.removeprefix("T="))
        dim = int(d_part.removeprefix("data_dim="))
    except (IndexError, ValueError):
        raise TrajectoryFormatError("malformed size line") from None
    if len(lines) != steps + 3:
        raise TrajectoryFormatError(f"expected {steps + 3} lines, got {len(lines)}")
    records = []
    for i in range(steps):
        line_no = i + 3
        parts = lines[i + 2].split()
        if len(parts) != 4:
            raise TrajectoryFormatError(f"line {line_no}: expected 4 fields")
        try:
            t = int(parts[0])
            fresh = {"0": False, "1": True}[parts[1]]
        except (ValueError, KeyError):
            raise TrajectoryFormatError(f"line {line_no}: bad step or flag field") from None
        records.append(
            StepRecord(t, _hex_vec(parts[2], dim, line_no), _hex_vec(parts[3], dim, line_no), fresh)
        )
    last = lines[-1].split()
    if len(last) != 2 or last[0] != "x0":
        raise TrajectoryFormatError("missing final-sample line")
    return Trajectory(records, _hex_vec(last[1], dim, len(lines)))


def load_trajectory_text(path) -> Trajectory:
    with open(path) as fh:
        return parse_trajectory_text(fh.read())


def save_trajectory_binary(traj: Trajectory, path) -> None:
    dim = len(traj.x0)
    parts = [_BIN_MAGIC, struct.pack("<BII", _BIN_VERSION, traj.steps, dim)]
    for r in traj.records:
        parts.append(struct.pack("<IB", r.t, int(r.fresh)))
        parts.append(np.asarray(r.x, dtype="<f8").tobytes())
        parts.append(np.asarray(r.eps, dtype="<f8").tobytes())
    parts.append(np.asarray(traj.x0, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_trajectory_binary(path) -> Trajectory:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != _BIN_MAGIC:
        raise TrajectoryFormatError("bad magic bytes")
    if len(data) < 13:
        raise TrajectoryFormatError("truncated header")
    version, steps, dim = struct.unpack_from("<BII", data, 4)
    if version != _BIN_VERSION:
        raise TrajectoryFormatError(f"unsupported format version {version}")
    off = 13
    vec_bytes = 8 * dim
    records = []
    for i in range(steps):
        if off + 5 + 2 * vec_bytes > len(data):
            raise TrajectoryFormatError(f"truncated at record {i}")
        t, fresh = struct.unpack_from("<IB", data, off)
        off += 5
        x = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
        off += vec_bytes
        eps = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
        off += vec_bytes
        records.append(StepRecord(t, x, eps, bool(fresh)))
    if off + vec_bytes != len(data):
        raise TrajectoryFormatError("final-sample record has wrong size")
    x0 = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
    return Trajectory(records, x0)
