"""Shared fixtures: deterministic RNG helpers and kernel warmup."""

from __future__ import annotations

import numpy as np
import pytest

from ccmqd import LossSpec, NoiseSchedule, TrainConfig
from ccmqd.linalg import make_rng
from ccmqd.training import train_hqto, trajectory_for_seed


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile every jitted kernel before any timed assertion runs."""
    cfg = TrainConfig(
        n_qubits=1,
        schedule=NoiseSchedule(family="haar_random", length=2, n_ops=2),
        l_b=2,
        k_b=2,
        loss=LossSpec(kind="pc", lam=0.5),
        max_iters=3,
        seeds=(1,),
    )
    traj = trajectory_for_seed(cfg, 1)
    train_hqto(traj, cfg, make_rng(0))


@pytest.fixture
def rng():
    return make_rng(1234)


def random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    m = g @ g.conj().T
    return m / np.trace(m).real


@pytest.fixture
def make_density():
    return random_density
