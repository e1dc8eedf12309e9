from __future__ import annotations

import time

import pytest
import torch

from graspkit.data import synth_dataset
from graspkit.training import PhaseConfig, TrainConfig, train_two_phase

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth16():
    return synth_dataset(16, seed=0)


@pytest.fixture(scope="session")
def overfit_run(synth16):
    """One full two-phase overfit on the 16-scene set, shared across tests.

    Returns (arrays, report, config, wall_clock_s).
    """
    config = TrainConfig(
        ratio=1.0,
        seed=0,
        phase1=PhaseConfig(epochs=120),
        phase2=PhaseConfig(epochs=400),
    )
    t0 = time.time()
    arrays, report = train_two_phase(synth16, config)
    return arrays, report, config, time.time() - t0
