"""Closed-form communication volumes and speedup bounds for step parallelism.

Three per-step communication volumes are compared, all totals across devices:
a ring exchange of attention key/value tensors costs 2L(p-1)M per step, a
pipeline handoff of stage activations costs p(p-1)M, and the reuse-then-
predict round protocol amortizes one noise send per non-root master step plus
one sample broadcast per cycle to 2(p-1)M/p. The last is kept as an exact
rational so ledger cross-checks never depend on float rounding.

The speedup side: a serial warm-up fraction m caps end-to-end speedup at
1/(m + (1-m)/p), and the busiest device performs warmup + ceil((T-warmup)/p)
predictor calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ParameterError


def _check_lmp(L: int | None, M, p: int) -> None:
    if L is not None and L < 1:
        raise ParameterError(f"layer count must be >= 1, got {L}")
    if M <= 0:
        raise ParameterError(f"message size must be > 0, got {M}")
    if p < 1:
        raise ParameterError(f"parallelism degree must be >= 1, got {p}")


def comm_ring(L: int, M, p: int):
    """Per-step volume of ring-style key/value gathering: 2L(p-1)M."""
    _check_lmp(L, M, p)
    return 2 * L * (p - 1) * M


def comm_asyncdiff(M, p: int):
    """Per-step volume of pipeline-stage handoff: p(p-1)M."""
    _check_lmp(None, M, p)
    return p * (p - 1) * M


def comm_parastep(M, p: int) -> Fraction:
    """Average per-step volume of the round protocol: 2(p-1)M/p, exact."""
    _check_lmp(None, M, p)
    return Fraction(2 * (p - 1)) * Fraction(M) / p


def amdahl_speedup(m: float, p: int) -> float:
    """Speedup ceiling 1/(m + (1-m)/p) for serial fraction m."""
    if not 0.0 <= m <= 1.0:
        raise ParameterError(f"serial fraction must be in [0, 1], got {m}")
    if p < 1:
        raise ParameterError(f"parallelism degree must be >= 1, got {p}")
    return 1.0 / (m + (1.0 - m) / p)


def call_count_per_device(T: int, warmup: int, p: int) -> int:
    """Predictor forwards on the busiest device: warmup + ceil((T-warmup)/p)."""
    if T < 1:
        raise ParameterError(f"step count must be >= 1, got {T}")
    if not 0 <= warmup <= T:
        raise ParameterError(f"warmup must be in [0, {T}], got {warmup}")
    if p < 1:
        raise ParameterError(f"parallelism degree must be >= 1, got {p}")
    return warmup + math.ceil((T - warmup) / p)


@dataclass
class CommRow:
    L: int
    M: int
    p: int
    c_ring: Fraction
    c_asyncdiff: Fraction
    c_parastep: Fraction
    ratio_ring: Fraction | None       # c_ring / c_parastep == L*p; None when p == 1
    ratio_asyncdiff: Fraction | None  # c_asyncdiff / c_parastep == p^2/2


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    f = float(value)
    if f == int(f):
        return str(int(f))
    return repr(f)


@dataclass
class CommTable:
    rows: list[CommRow]

    _COLUMNS = ("L", "M", "p", "c_ring", "c_asyncdiff", "c_parastep",
                "ratio_ring", "ratio_asyncdiff")

    def _cells(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            out.append([
                str(r.L), str(r.M), str(r.p),
                _fmt(r.c_ring), _fmt(r.c_asyncdiff), _fmt(r.c_parastep),
                _fmt(r.ratio_ring), _fmt(r.ratio_asyncdiff),
            ])
        return out

    def to_csv(self) -> str:
        lines = [",".join(self._COLUMNS)]
        lines += [",".join(cells) for cells in self._cells()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned table carrying the same rendered numbers as the CSV."""
        all_rows = [list(self._COLUMNS)] + self._cells()
        widths = [max(len(row[i]) for row in all_rows) for i in range(len(self._COLUMNS))]
        lines = []
        for row in all_rows:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        return "\n".join(lines) + "\n"


def comm_table(Ls, Ms, ps) -> CommTable:
    """All three volumes plus the two ratios over the sweep grid L x M x p."""
    rows = []
    for L in Ls:
        for M in Ms:
            for p in ps:
                ring = Fraction(comm_ring(L, M, p))
                adiff = Fraction(comm_asyncdiff(M, p))
                pstep = comm_parastep(M, p)
                if p == 1:
                    ratio_r = ratio_a = None
                else:
                    ratio_r = ring / pstep
                    ratio_a = adiff / pstep
                rows.append(CommRow(L, M, p, ring, adiff, pstep, ratio_r, ratio_a))
    return CommTable(rows)
