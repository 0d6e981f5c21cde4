"""Loss functionals over reversal-chain states, with their cotangents.

Two functional families are supported. With loss_form "one_minus_F"
every fidelity term enters as (1 - F); with "neg_sqrt_F" the endpoint
enters as -f and path terms as (1 - f), where f = Tr sqrt(sqrt(r) s
sqrt(r)) is the square root of the Uhlmann fidelity.

Cotangents use the Hermitian pairing dL = Tr[W d(sigma)], which the
channel adjoint consumes directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .diffusion import Trajectory
from .linalg import psd_sqrt
from .states import DensityMatrix, _pure_vector

PINV_CUTOFF = 1e-10
OVERLAP_FLOOR = 1e-12

LOSS_KINDS = ("sqco_step", "hqto", "pc")
LOSS_FORMS = ("one_minus_F", "neg_sqrt_F")


@dataclass(frozen=True)
class LossSpec:
    """Which loss to optimize.

    kind "sqco_step" trains each reversal step against its paired
    forward step; "hqto" trains all steps jointly on the endpoint
    fidelity; "pc" adds lam-weighted per-step path terms with weights
    alpha (default all ones).
    """

    kind: str
    lam: float = 0.0
    alpha: tuple | None = None
    loss_form: str = "one_minus_F"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; known: {LOSS_KINDS}")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(
                f"unknown loss_form {self.loss_form!r}; known: {LOSS_FORMS}"
            )
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.alpha is not None:
            alpha = tuple(float(a) for a in self.alpha)
            if any(a < 0 for a in alpha):
                raise ValueError("alpha weights must be >= 0")
            object.__setattr__(self, "alpha", alpha)

    def resolve_alpha(self, n_back_steps: int) -> np.ndarray:
        if self.alpha is None:
            return np.ones(n_back_steps)
        if len(self.alpha) != n_back_steps:
            raise ValueError(
                f"alpha length {len(self.alpha)} != back steps {n_back_steps}"
            )
        return np.asarray(self.alpha, dtype=np.float64)


def align_index(t_backward: int, n_back_steps: int, n_fwd_steps: int) -> int:
    """Forward index paired with backward index t, same relative position.

    round(t * L_f / L_b) with halves rounded away from zero.
    """
    if not 0 <= t_backward <= n_back_steps:
        raise ValueError(
            f"t must be in [0, {n_back_steps}], got {t_backward}"
        )
    x = t_backward * n_fwd_steps / n_back_steps
    return int(np.floor(x + 0.5))


class _Reference:
    """Fixed reference state, preprocessed for fidelity terms.

    Pure references keep the state vector and projector (the closed-form
    path); mixed references keep the PSD square-root factor.
    """

    __slots__ = ("psi", "proj", "rfac")

    def __init__(self, state: DensityMatrix):
        psi = _pure_vector(state)
        if psi is not None:
            self.psi = psi
            self.proj = np.ascontiguousarray(np.outer(psi, psi.conj()))
            self.rfac = None
        else:
            self.psi = None
            self.proj = None
            self.rfac = np.ascontiguousarray(psd_sqrt(state.mat))

    def sqrt_fidelity(self, sigma: np.ndarray) -> float:
        """f = Tr sqrt(sqrt(r) sigma sqrt(r)), without the derivative."""
        if self.psi is not None:
            q = max(float(np.real(self.psi.conj() @ sigma @ self.psi)), 0.0)
            return float(np.sqrt(q))
        f, _ = _kernels.sqrt_factor_terms(self.rfac, sigma, PINV_CUTOFF)
        return float(f)

    def sqrt_fidelity_and_grad(self, sigma: np.ndarray) -> tuple[float, np.ndarray]:
        """(f, W) with df = Tr[W d(sigma)].

        For pure references f matches `sqrt_fidelity` bitwise; the
        overlap is floored only inside the derivative's denominator.
        """
        if self.psi is not None:
            q = max(float(np.real(self.psi.conj() @ sigma @ self.psi)), 0.0)
            denom = 2.0 * float(np.sqrt(max(q, OVERLAP_FLOOR)))
            return float(np.sqrt(q)), self.proj / denom
        f, w = _kernels.sqrt_factor_terms(self.rfac, sigma, PINV_CUTOFF)
        return float(f), w


def build_references(
    traj: Trajectory, n_back_steps: int
) -> list[_Reference]:
    """Reference for each backward index t = 0..L_b via align_index."""
    n_fwd = traj.steps
    return [
        _Reference(traj.states[align_index(t, n_back_steps, n_fwd)])
        for t in range(n_back_steps + 1)
    ]


def term_value(f: float, form: str, endpoint: bool) -> float:
    """Scalar loss contribution of one fidelity term."""
    if form == "one_minus_F":
        return 1.0 - f * f
    return -f if endpoint else 1.0 - f


def term_cot_scale(f: float, form: str) -> float:
    """Scale c such that the term's cotangent is c * W (df = Tr[W ds])."""
    if form == "one_minus_F":
        return -2.0 * f
    return -1.0


@dataclass
class ChainEval:
    """One evaluation of the joint loss over chain states."""

    loss: float
    fidelity_curve: list[float] | None
    direct_cot: np.ndarray | None


def evaluate_chain(
    states: np.ndarray,
    refs: Sequence[_Reference],
    spec: LossSpec,
    alpha: np.ndarray,
    want_cot: bool = False,
    want_curve: bool = False,
) -> ChainEval:
    """Joint (hqto/pc) loss over chain states, optionally with extras.

    `states` is the (L_b+1, d, d) array from the reversal chain, indexed
    so states[t] pairs with refs[t]. The loss value is accumulated in a
    fixed order independent of the flags, so line-search evaluations and
    full evaluations agree bitwise.
    """
    if spec.kind not in ("hqto", "pc"):
        raise ValueError(f"evaluate_chain requires kind hqto or pc, got {spec.kind}")
    n_steps = states.shape[0] - 1
    d = states.shape[1]
    cot = np.zeros((n_steps + 1, d, d), dtype=np.complex128) if want_cot else None
    curve = [0.0] * (n_steps + 1) if want_curve else None

    if want_cot:
        f0, w0 = refs[0].sqrt_fidelity_and_grad(states[0])
        cot[0] = term_cot_scale(f0, spec.loss_form) * w0
    else:
        f0 = refs[0].sqrt_fidelity(states[0])
    loss = term_value(f0, spec.loss_form, endpoint=True)
    if curve is not None:
        curve[0] = min(max(f0 * f0, 0.0), 1.0)

    path_active = spec.kind == "pc" and spec.lam != 0.0
    for t in range(1, n_steps + 1):
        need_term = path_active and alpha[t - 1] != 0.0
        if not (need_term or want_curve):
            continue
        # the chain input states[n_steps] is constant, so its cotangent
        # is never consumed; skip the derivative work
        if want_cot and need_term and t < n_steps:
            f, w = refs[t].sqrt_fidelity_and_grad(states[t])
            cot[t] = (spec.lam * alpha[t - 1] * term_cot_scale(f, spec.loss_form)) * w
        else:
            f = refs[t].sqrt_fidelity(states[t])
        if need_term:
            loss += spec.lam * alpha[t - 1] * term_value(f, spec.loss_form, False)
        if curve is not None:
            curve[t] = min(max(f * f, 0.0), 1.0)
    return ChainEval(float(loss), curve, cot)


def local_step_eval(
    block_ops: np.ndarray,
    source: np.ndarray,
    ref: _Reference,
    form: str,
    want_grad: bool = False,
) -> tuple[float, float, np.ndarray | None]:
    """Per-step (sqco) loss for one block applied to its forward state.

    Returns (value, F, G) where G is the parameter gradient in the block
    layout (K, d, d), or None when not requested.
    """
    sigma = _kernels.kraus_apply(block_ops, source)
    if not want_grad:
        f = ref.sqrt_fidelity(sigma)
        return term_value(f, form, endpoint=True), min(max(f * f, 0.0), 1.0), None
    f, w = ref.sqrt_fidelity_and_grad(sigma)
    cot = term_cot_scale(f, form) * w
    grads = np.empty_like(block_ops)
    for i in range(block_ops.shape[0]):
        grads[i] = cot @ block_ops[i] @ source
    return (
        term_value(f, form, endpoint=True),
        min(max(f * f, 0.0), 1.0),
        grads,
    )


__all__ = [
    "PINV_CUTOFF",
    "LOSS_KINDS",
    "LOSS_FORMS",
    "LossSpec",
    "align_index",
    "build_references",
    "term_value",
    "term_cot_scale",
    "ChainEval",
    "evaluate_chain",
    "local_step_eval",
]
