"""Distributed reuse-then-predict: wire format, transports, workers, ledger."""

from .ledger import CommLedger, LedgerEntry, LedgerReport, verify_ledger
from .transport import (
    DEFAULT_TIMEOUT,
    LoopbackNetwork,
    LoopbackTransport,
    TcpTransport,
    free_local_ports,
)
from .wire import (
    HEADER_BYTES,
    MAGIC,
    MSG_HELLO,
    MSG_NAMES,
    MSG_NOISE,
    MSG_SAMPLE_BCAST,
    MSG_SHUTDOWN,
    VERSION,
    WireMessage,
    decode_message,
    encode_message,
)
from .worker import (
    RunResult,
    WorkerResult,
    WorkerTimings,
    run_loopback,
    run_tcp,
    run_worker,
)

__all__ = [
    "CommLedger",
    "LedgerEntry",
    "LedgerReport",
    "verify_ledger",
    "DEFAULT_TIMEOUT",
    "LoopbackNetwork",
    "LoopbackTransport",
    "TcpTransport",
    "free_local_ports",
    "HEADER_BYTES",
    "MAGIC",
    "MSG_HELLO",
    "MSG_NAMES",
    "MSG_NOISE",
    "MSG_SAMPLE_BCAST",
    "MSG_SHUTDOWN",
    "VERSION",
    "WireMessage",
    "decode_message",
    "encode_message",
    "RunResult",
    "WorkerResult",
    "WorkerTimings",
    "run_loopback",
    "run_tcp",
    "run_worker",
]
