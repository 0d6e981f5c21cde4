"""Stiefel-manifold parameterization of the reversal model.

Each reversal step owns an independent point kappa on St(d, K_b * d),
i.e. a (K_b * d) x d matrix with orthonormal columns. Its d x d row
blocks are the step's Kraus operators, so the completeness relation
sum_i k_i^dagger k_i = kappa^dagger kappa = I holds exactly on the
manifold and each learned channel is CPTP on its own.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .diffusion import Trajectory
from .linalg import haar_unitary
from .losses import (
    LossSpec,
    build_references,
    evaluate_chain,
    local_step_eval,
)
from .states import DensityMatrix

logger = logging.getLogger(__name__)

STIEFEL_DEFECT_TOL = 1e-10
MAX_TAU_HALVINGS = 20
FD_H_MIN, FD_H_MAX = 1e-6, 1e-3
FD_REPORT_FLOOR = 1e-8
CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class StiefelPoint:
    """Point on St(n, N*n): kappa is (N*n) x n with orthonormal columns."""

    kappa: np.ndarray

    def __post_init__(self):
        k = np.ascontiguousarray(self.kappa, dtype=np.complex128)
        if k.ndim != 2 or k.shape[0] % k.shape[1] != 0:
            raise ValueError(
                f"kappa must be (N*n) x n for integer N, got {k.shape}"
            )
        object.__setattr__(self, "kappa", k)

    @property
    def n(self) -> int:
        return self.kappa.shape[1]

    @property
    def n_ops(self) -> int:
        return self.kappa.shape[0] // self.kappa.shape[1]

    def ops(self) -> np.ndarray:
        """Row blocks as (N, n, n) Kraus operators."""
        return self.kappa.reshape(self.n_ops, self.n, self.n)

    def defect(self) -> float:
        """Frobenius distance of kappa^dagger kappa from the identity."""
        g = self.kappa.conj().T @ self.kappa
        return float(np.linalg.norm(g - np.eye(self.n)))


def polar_project(kappa: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal columns (polar factor via SVD)."""
    u, _, vh = np.linalg.svd(kappa, full_matrices=False)
    return np.ascontiguousarray(u @ vh)


def random_stiefel(n: int, n_ops: int, rng: np.random.Generator) -> StiefelPoint:
    """Haar-random isometry, the first n columns of a Haar unitary."""
    u = haar_unitary(n * n_ops, rng)
    return StiefelPoint(np.ascontiguousarray(u[:, :n]))


@dataclass(frozen=True)
class BackwardModel:
    """Learned reversal chain: blocks[t-1] parameterizes step t.

    Step t maps state index t to t-1; application order is step L_b
    first (on the chain input) down to step 1 (producing the output).
    """

    dim: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("model needs at least one step")
        for b in blocks:
            if not isinstance(b, StiefelPoint) or b.n != self.dim:
                raise ValueError("blocks must be StiefelPoints of matching dim")
        if len({b.n_ops for b in blocks}) != 1:
            raise ValueError("all blocks must hold the same operator count")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n_steps(self) -> int:
        return len(self.blocks)

    @property
    def n_ops(self) -> int:
        return self.blocks[0].n_ops

    def stacked(self) -> np.ndarray:
        """(L_b, K_b, d, d) operator array for the kernels."""
        return np.ascontiguousarray(np.stack([b.ops() for b in self.blocks]))


def init_backward(
    n_steps: int, n_ops: int, dim: int, rng: np.random.Generator
) -> BackwardModel:
    """Haar-random isometry per step."""
    if min(n_steps, n_ops, dim) < 1:
        raise ValueError("n_steps, n_ops and dim must all be >= 1")
    return BackwardModel(
        dim=dim,
        blocks=tuple(random_stiefel(dim, n_ops, rng) for _ in range(n_steps)),
    )


def identity_backward(n_steps: int, n_ops: int, dim: int) -> BackwardModel:
    """Identity-channel blocks: kappa = stacked [I; 0; ...; 0]."""
    kappa = np.zeros((n_ops * dim, dim), dtype=np.complex128)
    kappa[:dim] = np.eye(dim)
    return BackwardModel(
        dim=dim, blocks=tuple(StiefelPoint(kappa.copy()) for _ in range(n_steps))
    )


def apply_backward(model: BackwardModel, rho_in: DensityMatrix) -> list[DensityMatrix]:
    """Run the reversal chain, returning all L_b + 1 states.

    The returned list is indexed by backward position t: entry t is the
    state after steps L_b..t+1, entry L_b is the input, entry 0 the
    reconstruction.
    """
    if model.dim != rho_in.dim:
        raise ValueError(f"dimension mismatch: model {model.dim}, state {rho_in.dim}")
    states = _kernels.backward_chain(model.stacked(), rho_in.mat)
    out = []
    for t in range(states.shape[0]):
        m = states[t]
        tr = float(np.trace(m).real)
        m = (m + m.conj().T) * (0.5 / tr)
        out.append(DensityMatrix.from_matrix(m, validate=False))
    return out


def cayley_update(point: StiefelPoint, grad: np.ndarray, tau: float) -> StiefelPoint:
    """Curvilinear descent step staying on the Stiefel manifold.

    kappa' = kappa - tau U (I + (tau/2) V^dagger U)^{-1} V^dagger kappa
    with U = [G, kappa], V = [kappa, -G]. A singular inner matrix raises
    numpy.linalg.LinAlgError; the caller is expected to retry with
    tau / 2 (at most MAX_TAU_HALVINGS times). If the result drifts off
    the manifold beyond STIEFEL_DEFECT_TOL it is re-orthonormalized by
    polar projection and the event is logged.
    """
    g = np.ascontiguousarray(grad, dtype=np.complex128)
    if g.shape != point.kappa.shape:
        raise ValueError(f"gradient shape {g.shape} != kappa shape {point.kappa.shape}")
    if tau == 0.0 or not np.any(g):
        return point
    new = _kernels.cayley_step(point.kappa, g, float(tau))
    out = StiefelPoint(new)
    d = out.defect()
    if d > STIEFEL_DEFECT_TOL:
        logger.warning("cayley update drifted off manifold (defect %.3e); reprojecting", d)
        out = StiefelPoint(polar_project(new))
    return out


def projected_gradient(kappa: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Riemannian gradient A kappa with A = G kappa^dagger - kappa G^dagger."""
    return grad - kappa @ (grad.conj().T @ kappa)


def loss_and_gradient(
    model: BackwardModel, traj: Trajectory, spec: LossSpec
) -> tuple[float, list[np.ndarray]]:
    """Loss value and per-block gradients in the kappa layout.

    The gradient convention is G = dL/d(kappa*), i.e. the linear model
    L(kappa + delta) ~ L(kappa) + 2 Re Tr(G^dagger delta).
    """
    if model.dim != traj.dim:
        raise ValueError(f"dimension mismatch: model {model.dim}, trajectory {traj.dim}")
    stacked = model.stacked()
    k, d = model.n_ops, model.dim
    refs = build_references(traj, model.n_steps)
    if spec.kind == "sqco_step":
        if model.n_steps != traj.steps:
            raise ValueError(
                "sqco_step pairs each backward step with one forward step; "
                f"got {model.n_steps} backward vs {traj.steps} forward"
            )
        loss = 0.0
        grads = []
        for t in range(1, model.n_steps + 1):
            value, _, g = local_step_eval(
                stacked[t - 1], traj.states[t].mat, refs[t - 1], spec.loss_form, True
            )
            loss += value
            grads.append(g.reshape(k * d, d))
        return float(loss), grads
    alpha = spec.resolve_alpha(model.n_steps)
    states = _kernels.backward_chain(stacked, traj.states[-1].mat)
    ev = evaluate_chain(states, refs, spec, alpha, want_cot=True)
    gblocks = _kernels.adjoint_chain(stacked, states, ev.direct_cot)
    return ev.loss, [gblocks[t].reshape(k * d, d) for t in range(model.n_steps)]


def loss_gradient(
    model: BackwardModel, traj: Trajectory, spec: LossSpec
) -> list[np.ndarray]:
    """Per-block gradients only; see `loss_and_gradient`."""
    return loss_and_gradient(model, traj, spec)[1]


def loss_value(model: BackwardModel, traj: Trajectory, spec: LossSpec) -> float:
    """Loss value at the model's current parameters."""
    refs = build_references(traj, model.n_steps)
    stacked = model.stacked()
    if spec.kind == "sqco_step":
        if model.n_steps != traj.steps:
            raise ValueError("sqco_step requires matching step counts")
        return float(
            sum(
                local_step_eval(
                    stacked[t - 1], traj.states[t].mat, refs[t - 1], spec.loss_form
                )[0]
                for t in range(1, model.n_steps + 1)
            )
        )
    alpha = spec.resolve_alpha(model.n_steps)
    states = _kernels.backward_chain(stacked, traj.states[-1].mat)
    return evaluate_chain(states, refs, spec, alpha).loss


class GradientReport(NamedTuple):
    """Analytic vs finite-difference gradients and their worst deviation."""

    analytic: list
    fd: list
    max_rel_dev: float


def fd_oracle(
    model: BackwardModel, traj: Trajectory, spec: LossSpec, h: float = 1e-5
) -> GradientReport:
    """Central-difference check of `loss_gradient` on every kappa entry.

    Real and imaginary parts are perturbed separately; the finite-
    difference gradient is assembled in the same Wirtinger convention as
    loss_gradient (G = dL/d(kappa*), so dL/d(Re) = 2 Re G and
    dL/d(Im) = 2 Im G). The relative deviation is reported over entries
    with analytic magnitude > FD_REPORT_FLOOR.
    """
    if not FD_H_MIN <= h <= FD_H_MAX:
        raise ValueError(f"h must be in [{FD_H_MIN}, {FD_H_MAX}], got {h}")
    analytic = loss_and_gradient(model, traj, spec)[1]

    def value_at(blocks: list[np.ndarray]) -> float:
        probe = BackwardModel(
            dim=model.dim, blocks=tuple(StiefelPoint(b) for b in blocks)
        )
        return loss_value(probe, traj, spec)

    base = [b.kappa.copy() for b in model.blocks]
    fd = [np.zeros_like(b) for b in base]
    for bi, kappa in enumerate(base):
        for idx in np.ndindex(kappa.shape):
            for part, delta in ((0, h), (1, 1j * h)):
                kappa[idx] += delta
                up = value_at(base)
                kappa[idx] -= 2 * delta
                down = value_at(base)
                kappa[idx] += delta
                slope = (up - down) / (2.0 * h)
                fd[bi][idx] += (slope / 2.0) if part == 0 else (1j * slope / 2.0)
    worst = 0.0
    for a, f in zip(analytic, fd):
        mags = np.abs(a)
        mask = mags > FD_REPORT_FLOOR
        if np.any(mask):
            worst = max(worst, float(np.max(np.abs(f - a)[mask] / mags[mask])))
    return GradientReport(analytic, fd, worst)


def save_checkpoint(model: BackwardModel, path: str) -> None:
    """Round-trip-exact JSON checkpoint."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "l_b": model.n_steps,
        "k_b": model.n_ops,
        "dim": model.dim,
        "blocks": [
            [[float(z.real), float(z.imag)] for z in b.kappa.ravel()]
            for b in model.blocks
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> BackwardModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported checkpoint schema_version {doc.get('schema_version')!r}"
        )
    dim, k = int(doc["dim"]), int(doc["k_b"])
    blocks = []
    for flat in doc["blocks"]:
        arr = np.array(
            [complex(re, im) for re, im in flat], dtype=np.complex128
        ).reshape(k * dim, dim)
        blocks.append(StiefelPoint(arr))
    if len(blocks) != int(doc["l_b"]):
        raise ValueError("checkpoint block count does not match l_b")
    return BackwardModel(dim=dim, blocks=tuple(blocks))


__all__ = [
    "STIEFEL_DEFECT_TOL",
    "MAX_TAU_HALVINGS",
    "StiefelPoint",
    "polar_project",
    "random_stiefel",
    "BackwardModel",
    "init_backward",
    "identity_backward",
    "apply_backward",
    "cayley_update",
    "projected_gradient",
    "loss_and_gradient",
    "loss_gradient",
    "loss_value",
    "GradientReport",
    "fd_oracle",
    "save_checkpoint",
    "load_checkpoint",
]
