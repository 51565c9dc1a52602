"""Shared fixtures.

The expensive piece is the trained reference model: gauss8, 2-64-64-2 silu
net, 5000 Adam iterations at lr 1e-3, seed 42, against the default 50-step
posterior schedule. It is trained once per session and shared by the
statistical tests and the acceptance suite. FROZEN_FINAL_LOSS was recorded
from one run of exactly this configuration and guards against regressions.
"""

import pytest

from parastep.predictor import TrainConfig, init_weights, train
from parastep.schedule import make_default_schedule

TRAINED_T = 50
TRAINED_CFG = TrainConfig(
    dataset="gauss8",
    hidden=(64, 64),
    iterations=5000,
    learning_rate=1e-3,
    seed=42,
)
FROZEN_FINAL_LOSS = 0.48394258436109816


@pytest.fixture(scope="session")
def sched50():
    return make_default_schedule(TRAINED_T)


@pytest.fixture(scope="session")
def trained(sched50):
    """(weights, loss_log) of the session's reference model."""
    log = []
    w = train(TRAINED_CFG, sched50, loss_log=log)
    return w, log


@pytest.fixture(scope="session")
def trained_w(trained):
    return trained[0]


def small_weights(seed=7, hidden=(8,), embed_dim=4, activation="silu"):
    """A cheap random-init 2-D predictor for structural tests."""
    cfg = TrainConfig(hidden=hidden, embed_dim=embed_dim, seed=seed,
                      activation=activation, iterations=0)
    return init_weights(cfg)


@pytest.fixture
def tiny_w():
    return small_weights()
