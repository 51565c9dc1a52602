"""Step-parallel diffusion sampling at desk scale.

A trainable toy noise predictor, DDPM/flow schedulers, five sampling
strategies (sequential, direct reuse, reuse-then-predict with virtual ranks,
batched cycles, dynamic cycle schedules), a real distributed implementation
over loopback queues or TCP sockets with an exact communication ledger, and
the closed-form communication/speedup models the ledger is checked against.
"""

__version__ = "0.1.0"
