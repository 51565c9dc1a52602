"""Exception types shared across the package.

Every failure mode callers are expected to handle has its own class so that
tests and the CLI can map errors to exit codes without string matching.
"""

from __future__ import annotations


class ParastepError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(ParastepError, ValueError):
    """Operands have incompatible lengths or shapes."""


class DegenerateReferenceError(ParastepError, ValueError):
    """A relative metric was asked to normalize by a zero-magnitude reference."""


class ParameterError(ParastepError, ValueError):
    """A scalar argument is outside its documented range."""


class ConfigError(ParastepError, ValueError):
    """A run or training configuration violates its invariants."""


class TrainingDivergedError(ParastepError, RuntimeError):
    """Training loss became NaN or infinite."""


class WeightFormatError(ParastepError, ValueError):
    """Weight file is corrupt. Carries the byte offset and, when known, the layer."""

    def __init__(self, message: str, offset: int | None = None, layer: int | None = None):
        self.offset = offset
        self.layer = layer
        detail = message
        if offset is not None:
            detail += f" (at byte offset {offset})"
        if layer is not None:
            detail += f" (layer {layer})"
        super().__init__(detail)


class TrajectoryFormatError(ParastepError, ValueError):
    """Trajectory file is corrupt or malformed."""


class FrameError(ParastepError, ValueError):
    """A wire frame failed to decode. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ProtocolAbortError(ParastepError, RuntimeError):
    """A distributed run failed. Carries the rank and step where it died."""

    def __init__(self, message: str, rank: int, step: int | None = None):
        self.rank = rank
        self.step = step
        where = f"rank {rank}" if step is None else f"rank {rank}, step {step}"
        super().__init__(f"{message} ({where})")


class LedgerViolationError(ParastepError, RuntimeError):
    """Measured communication volume disagrees with the closed-form expectation."""
