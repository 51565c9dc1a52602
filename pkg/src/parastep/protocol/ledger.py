"""Exact accounting of protocol traffic, checked against the closed forms.

Every send is recorded under (step, msg_type) with frame and payload byte
counts; a broadcast is p-1 point-to-point sends and is ledgered as such. The
closed-form target counts payload bytes only (headers are bookkeeping), which
is why the two are tracked separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..commodel import comm_parastep
from ..errors import LedgerViolationError, ParameterError
from .wire import MSG_NAMES, MSG_NOISE, MSG_SAMPLE_BCAST


@dataclass
class LedgerEntry:
    count: int = 0
    payload_bytes: int = 0
    total_bytes: int = 0


class CommLedger:
    """Per-(step, msg_type) send counters for one worker or a merged run."""

    def __init__(self):
        self._entries: dict[tuple[int, int], LedgerEntry] = {}

    def record(self, step: int, msg_type: int, payload_bytes: int, frame_bytes: int) -> None:
        entry = self._entries.setdefault((step, msg_type), LedgerEntry())
        entry.count += 1
        entry.payload_bytes += payload_bytes
        entry.total_bytes += frame_bytes

    def merge(self, other: "CommLedger") -> None:
        for key, entry in other._entries.items():
            mine = self._entries.setdefault(key, LedgerEntry())
            mine.count += entry.count
            mine.payload_bytes += entry.payload_bytes
            mine.total_bytes += entry.total_bytes

    @staticmethod
    def merged(ledgers) -> "CommLedger":
        out = CommLedger()
        for ledger in ledgers:
            out.merge(ledger)
        return out

    def entry(self, step: int, msg_type: int) -> LedgerEntry:
        return self._entries.get((step, msg_type), LedgerEntry())

    def count(self, msg_type: int | None = None) -> int:
        return sum(
            e.count for (_, mt), e in self._entries.items()
            if msg_type is None or mt == msg_type
        )

    def payload_bytes(self, msg_type: int | None = None) -> int:
        return sum(
            e.payload_bytes for (_, mt), e in self._entries.items()
            if msg_type is None or mt == msg_type
        )

    def total_bytes(self, msg_type: int | None = None) -> int:
        return sum(
            e.total_bytes for (_, mt), e in self._entries.items()
            if msg_type is None or mt == msg_type
        )

    def steps_with(self, *msg_types: int) -> list[int]:
        """Steps carrying any of the given message types, descending (run order)."""
        steps = {s for (s, mt) in self._entries if mt in msg_types}
        return sorted(steps, reverse=True)

    def to_csv(self) -> str:
        """Rows ordered by descending step (run order), control traffic last."""
        lines = ["step,msg_type,count,payload_bytes,total_bytes"]
        for (step, mt) in sorted(self._entries, key=lambda k: (-k[0], k[1])):
            e = self._entries[(step, mt)]
            lines.append(f"{step},{MSG_NAMES[mt]},{e.count},{e.payload_bytes},{e.total_bytes}")
        return "\n".join(lines) + "\n"


@dataclass
class LedgerReport:
    p: int
    data_dim: int
    cycles: int
    remainder: int
    expected_noise_frames: int
    actual_noise_frames: int
    expected_bcast_frames: int
    actual_bcast_frames: int
    expected_payload_bytes: int
    actual_payload_bytes: int
    # Payload per step averaged over the full cycles, and the closed-form
    # per-step volume 2(p-1)M/p with M = 8*data_dim; equal exactly.
    measured_per_step: Fraction
    model_per_step: Fraction

    def summary(self) -> str:
        return (
            f"p={self.p} data_dim={self.data_dim} cycles={self.cycles}"
            f" remainder={self.remainder}: "
            f"noise {self.actual_noise_frames}/{self.expected_noise_frames},"
            f" bcast {self.actual_bcast_frames}/{self.expected_bcast_frames},"
            f" payload {self.actual_payload_bytes}/{self.expected_payload_bytes} bytes,"
            f" per-step {self.measured_per_step} vs model {self.model_per_step}"
        )


def verify_ledger(
    ledger: CommLedger, p: int, data_dim: int, cycles: int, remainder: int = 0
) -> LedgerReport:
    """Check measured traffic against the per-cycle closed form.

    A full cycle moves 2(p-1) payload frames: p-1 noise sends up to rank 0 and
    a broadcast of p-1 point-to-point sends. A trailing partial cycle of r
    rounds moves r-1 noise frames and no broadcast. Any disagreement — counts,
    payload sizes, or per-step message pattern — raises, naming the first
    offending step when one exists.
    """
    if p < 1 or data_dim < 1 or cycles < 0 or not 0 <= remainder < max(p, 2):
        raise ParameterError(
            f"invalid ledger expectation (p={p}, data_dim={data_dim}, "
            f"cycles={cycles}, remainder={remainder})"
        )
    m_bytes = 8 * data_dim

    # Per-step structure first, so mismatches are localized.
    for step in ledger.steps_with(MSG_NOISE, MSG_SAMPLE_BCAST):
        noise = ledger.entry(step, MSG_NOISE)
        bcast = ledger.entry(step, MSG_SAMPLE_BCAST)
        if (noise.count, bcast.count) not in ((1, 0), (1, p - 1)):
            raise LedgerViolationError(
                f"step {step}: saw {noise.count} noise / {bcast.count} broadcast "
                f"frames; a step carries one noise frame and either 0 or {p - 1} "
                "broadcast frames"
            )
        for label, entry in (("noise", noise), ("broadcast", bcast)):
            if entry.payload_bytes != entry.count * m_bytes:
                raise LedgerViolationError(
                    f"step {step}: {label} payload is {entry.payload_bytes} bytes "
                    f"for {entry.count} frames, expected {m_bytes} per frame"
                )

    expected_noise = cycles * (p - 1) + max(remainder - 1, 0)
    expected_bcast = cycles * (p - 1)
    actual_noise = ledger.count(MSG_NOISE)
    actual_bcast = ledger.count(MSG_SAMPLE_BCAST)
    expected_payload = (expected_noise + expected_bcast) * m_bytes
    actual_payload = ledger.payload_bytes(MSG_NOISE) + ledger.payload_bytes(MSG_SAMPLE_BCAST)
    if (actual_noise, actual_bcast) != (expected_noise, expected_bcast):
        raise LedgerViolationError(
            f"frame census mismatch: noise {actual_noise} (expected {expected_noise}), "
            f"broadcast {actual_bcast} (expected {expected_bcast})"
        )
    if actual_payload != expected_payload:
        raise LedgerViolationError(
            f"payload mismatch: {actual_payload} bytes, expected {expected_payload}"
        )

    if cycles > 0:
        full_cycle_payload = actual_payload - max(remainder - 1, 0) * m_bytes
        measured = Fraction(full_cycle_payload, p * cycles)
    else:
        measured = Fraction(0)
    model = comm_parastep(m_bytes, p) if cycles > 0 else Fraction(0)
    if measured != model:
        raise LedgerViolationError(
            f"per-step payload {measured} disagrees with the closed form {model}"
        )
    return LedgerReport(
        p, data_dim, cycles, remainder,
        expected_noise, actual_noise,
        expected_bcast, actual_bcast,
        expected_payload, actual_payload,
        measured, model,
    )
