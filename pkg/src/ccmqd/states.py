"""Quantum states and state functionals.

States are density matrices: Hermitian, PSD, unit-trace complex128
matrices. `DensityMatrix` is a thin validated wrapper; hot code paths
work on raw arrays and wrap only at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .linalg import as_cmatrix, herm_defect, herm_eig, hermitize, psd_sqrt

VALIDATION_ATOL = 1e-9
PURE_RANK_TOL = 1e-9
ENTROPY_FLOOR = 1e-12
OUTCOME_FLOOR = 1e-12

PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


@dataclass(frozen=True)
class PureState:
    """Unit-norm state vector."""

    vec: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vec, dtype=np.complex128)
        if v.ndim != 1 or v.size < 1:
            raise ValueError(f"state vector must be 1-D, got shape {v.shape}")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state vector norm {norm!r} is not 1 within 1e-12")
        object.__setattr__(self, "vec", v)

    @property
    def dim(self) -> int:
        return self.vec.size

    def projector(self) -> np.ndarray:
        return np.outer(self.vec, self.vec.conj())


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density matrix.

    Construction through `from_matrix` checks Hermiticity, unit trace and
    positivity within VALIDATION_ATOL; `validate=False` skips the checks
    for internal callers that construct states known to be valid.
    """

    mat: np.ndarray
    pure_vec: np.ndarray | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @classmethod
    def from_matrix(
        cls, mat: np.ndarray, validate: bool = True, atol: float = VALIDATION_ATOL
    ) -> "DensityMatrix":
        m = as_cmatrix(mat)
        if validate:
            hd = herm_defect(m)
            if hd > atol:
                raise ValueError(f"matrix is not Hermitian: defect {hd:.3e}")
            tr = complex(np.trace(m))
            if abs(tr - 1.0) > atol:
                raise ValueError(f"trace {tr!r} differs from 1 beyond {atol:.1e}")
            wmin = float(np.linalg.eigvalsh(hermitize(m))[0])
            if wmin < -atol:
                raise ValueError(f"matrix is not PSD: min eigenvalue {wmin:.3e}")
        return cls(hermitize(m))

    @classmethod
    def from_pure(cls, psi: PureState) -> "DensityMatrix":
        return cls(psi.projector(), pure_vec=psi.vec)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=np.complex128) / dim)


class MeasurementOutcome(NamedTuple):
    """One measurement branch: Born probability and conditional state.

    `post_state` is None when the branch probability is below
    OUTCOME_FLOOR and the conditional state is undefined.
    """

    probability: float
    post_state: DensityMatrix | None


def _pure_vector(rho: DensityMatrix) -> np.ndarray | None:
    """Unit eigenvector when rho is rank-1 within PURE_RANK_TOL, else None."""
    if rho.pure_vec is not None:
        return rho.pure_vec
    w, v = herm_eig(rho.mat)
    if w[-1] > 1.0 - PURE_RANK_TOL:
        return np.ascontiguousarray(v[:, -1])
    return None


def fidelity(a: DensityMatrix, b: DensityMatrix) -> float:
    """Uhlmann fidelity F(a, b) = (Tr sqrt(sqrt(a) b sqrt(a)))^2.

    When either argument is rank-1 within PURE_RANK_TOL the closed form
    <psi| other |psi> is used instead of the matrix square roots. The
    result is clipped to [0, 1].
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    psi = _pure_vector(a)
    other = b
    if psi is None:
        psi = _pure_vector(b)
        other = a
    if psi is not None:
        val = float(np.real(psi.conj() @ other.mat @ psi))
    else:
        r = psd_sqrt(a.mat)
        w = np.linalg.eigvalsh(hermitize(r @ b.mat @ r))
        val = float(np.sum(np.sqrt(np.maximum(w, 0.0))) ** 2)
    return min(max(val, 0.0), 1.0)


def purity(rho: DensityMatrix) -> float:
    """Tr(rho^2), in [1/dim, 1] for a valid state."""
    return float(np.vdot(rho.mat, rho.mat).real)


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """Entropy in bits; eigenvalues below ENTROPY_FLOOR contribute zero."""
    w = np.linalg.eigvalsh(hermitize(rho.mat))
    w = w[w >= ENTROPY_FLOOR]
    return float(-np.sum(w * np.log2(w)))


def bloch_vector(rho: DensityMatrix) -> np.ndarray:
    """Pauli expectation vector (x, y, z) of a single-qubit state."""
    if rho.dim != 2:
        raise ValueError(f"bloch_vector is defined for dim 2, got {rho.dim}")
    m = rho.mat
    return np.array(
        [
            float(np.trace(m @ PAULI_X).real),
            float(np.trace(m @ PAULI_Y).real),
            float(np.trace(m @ PAULI_Z).real),
        ]
    )


def random_pure_state(n_qubits: int, rng: np.random.Generator) -> PureState:
    """Haar-random pure state on n qubits."""
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    d = 2**n_qubits
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return PureState(v / np.linalg.norm(v))


def named_state(kind: str, n_qubits: int) -> PureState:
    """Named reference states: 'zeros', 'plus', or 'ghz'."""
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    d = 2**n_qubits
    v = np.zeros(d, dtype=np.complex128)
    if kind == "zeros":
        v[0] = 1.0
    elif kind == "plus":
        v[:] = 1.0 / np.sqrt(d)
    elif kind == "ghz":
        v[0] = v[-1] = 1.0 / np.sqrt(2.0)
    else:
        raise ValueError(f"unknown named state {kind!r}")
    return PureState(v)


def measurement_update(
    rho: DensityMatrix, ops: Sequence[np.ndarray]
) -> list[MeasurementOutcome]:
    """Generalized measurement: Born probabilities and conditional states.

    `ops` must satisfy sum_i M_i^dagger M_i = I within VALIDATION_ATOL.
    """
    d = rho.dim
    mats = [as_cmatrix(m) for m in ops]
    if not mats:
        raise ValueError("measurement requires at least one operator")
    comp = sum(m.conj().T @ m for m in mats)
    defect = float(np.linalg.norm(comp - np.eye(d)))
    if defect > VALIDATION_ATOL:
        raise ValueError(f"measurement operators not complete: defect {defect:.3e}")
    outcomes = []
    for m in mats:
        post = m @ rho.mat @ m.conj().T
        p = max(float(np.trace(post).real), 0.0)
        if p < OUTCOME_FLOOR:
            outcomes.append(MeasurementOutcome(p, None))
        else:
            outcomes.append(
                MeasurementOutcome(p, DensityMatrix.from_matrix(post / p))
            )
    return outcomes


__all__ = [
    "PAULI_X",
    "PAULI_Y",
    "PAULI_Z",
    "PURE_RANK_TOL",
    "VALIDATION_ATOL",
    "PureState",
    "DensityMatrix",
    "MeasurementOutcome",
    "fidelity",
    "purity",
    "von_neumann_entropy",
    "bloch_vector",
    "random_pure_state",
    "named_state",
    "measurement_update",
]
