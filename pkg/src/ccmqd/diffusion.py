"""Forward decoherence trajectories and their diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import Channel, apply
from .states import (
    DensityMatrix,
    PureState,
    bloch_vector,
    fidelity,
    purity,
    von_neumann_entropy,
)

NEAR_MIXED_EPS = 0.1


@dataclass(frozen=True)
class Trajectory:
    """Forward trajectory: states[t] is the state after t noise steps.

    states[0] is the target projector; diagnostics are aligned with
    states (length = steps + 1).
    """

    target: PureState
    states: tuple
    purity: tuple
    entropy_bits: tuple
    fidelity_to_origin: tuple

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def dim(self) -> int:
        return self.target.dim


def run_forward(target: PureState, channels: Sequence[Channel]) -> Trajectory:
    """Push the target state through the forward channel sequence."""
    if not channels:
        raise ValueError("forward sequence must contain at least one channel")
    for ch in channels:
        if ch.dim != target.dim:
            raise ValueError(
                f"dimension mismatch: channel {ch.dim}, target {target.dim}"
            )
    origin = DensityMatrix.from_pure(target)
    states = [origin]
    for ch in channels:
        states.append(apply(ch, states[-1]))
    return Trajectory(
        target=target,
        states=tuple(states),
        purity=tuple(purity(s) for s in states),
        entropy_bits=tuple(von_neumann_entropy(s) for s in states),
        fidelity_to_origin=tuple(fidelity(origin, s) for s in states),
    )


def near_mixed_check(traj: Trajectory, eps: float = NEAR_MIXED_EPS) -> bool:
    """Whether the final state is within eps of maximally mixed (Frobenius)."""
    final = traj.states[-1].mat
    d = traj.dim
    return float(np.linalg.norm(final - np.eye(d) / d)) < eps


def export_trajectory_csv(traj: Trajectory, path: str) -> None:
    """Per-step diagnostics: step, purity, entropy_bits, fidelity_to_origin."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "purity", "entropy_bits", "fidelity_to_origin"])
        for t in range(traj.steps + 1):
            w.writerow(
                [
                    t,
                    repr(float(traj.purity[t])),
                    repr(float(traj.entropy_bits[t])),
                    repr(float(traj.fidelity_to_origin[t])),
                ]
            )


def bloch_rows(states: Sequence[DensityMatrix]) -> list[list[float]]:
    """(x, y, z, purity) rows for a sequence of single-qubit states."""
    rows = []
    for s in states:
        x, y, z = bloch_vector(s)
        rows.append([float(x), float(y), float(z), purity(s)])
    return rows


def export_bloch_csv(states: Sequence[DensityMatrix], path: str) -> None:
    """Bloch coordinates per step: step, x, y, z, purity."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "x", "y", "z", "purity"])
        for t, row in enumerate(bloch_rows(states)):
            w.writerow([t] + [repr(v) for v in row])


__all__ = [
    "NEAR_MIXED_EPS",
    "Trajectory",
    "run_forward",
    "near_mixed_check",
    "export_trajectory_csv",
    "bloch_rows",
    "export_bloch_csv",
]
