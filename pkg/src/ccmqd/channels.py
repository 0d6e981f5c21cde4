"""Quantum channels: Kraus form, named families, and verification.

A channel is anything with `dim`, `apply_raw(mat) -> mat` (the bare
linear map, no validation) and `kraus_ops() -> (K, d, d)`. Two concrete
kinds exist: `KrausChannel` holds explicit operators, and
`DepolarizingChannel` applies its affine closed form exactly while still
materializing Kraus operators on demand for verification.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .linalg import (
    as_cmatrix,
    haar_unitary,
    herm_defect,
    hermitize,
    kron,
    make_rng,
    partial_trace_env,
)
from .states import DensityMatrix

logger = logging.getLogger(__name__)

CPTP_DEFECT_TOL = 1e-9
STEP_DRIFT_TOL = 1e-8
LINDBLAD_RAW_DEFECT_LIMIT = 1e-2
CHANNEL_SCHEMA_VERSION = 1

KNOWN_FAMILIES = ("depolarizing", "haar_random", "lindblad")


@dataclass(frozen=True)
class KrausChannel:
    """Channel given by explicit Kraus operators, stacked as (K, d, d)."""

    dim: int
    ops: np.ndarray
    family: str = "generic"
    seed: int | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ops = np.ascontiguousarray(self.ops, dtype=np.complex128)
        if ops.ndim != 3 or ops.shape[1:] != (self.dim, self.dim):
            raise ValueError(
                f"operators must have shape (K, {self.dim}, {self.dim}), "
                f"got {ops.shape}"
            )
        if ops.shape[0] < 1:
            raise ValueError("channel needs at least one Kraus operator")
        object.__setattr__(self, "ops", ops)

    @property
    def n_ops(self) -> int:
        return self.ops.shape[0]

    def apply_raw(self, mat: np.ndarray) -> np.ndarray:
        return _kernels.kraus_apply(self.ops, np.ascontiguousarray(mat))

    def kraus_ops(self) -> np.ndarray:
        return self.ops


@dataclass(frozen=True)
class DepolarizingChannel:
    """Global depolarizing map rho -> (1-p) rho + p Tr(rho) I/dim.

    Applied in the affine closed form, which is exactly linear and CPTP.
    `kraus_ops` materializes the dim^2 Weyl-operator representation for
    verification against the closed form.
    """

    dim: int
    p: float
    family: str = "depolarizing"
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")

    @property
    def n_ops(self) -> int:
        return self.dim**2

    def apply_raw(self, mat: np.ndarray) -> np.ndarray:
        m = np.ascontiguousarray(mat, dtype=np.complex128)
        tr = np.trace(m)
        eye = np.eye(self.dim, dtype=np.complex128)
        return (1.0 - self.p) * m + (self.p * tr / self.dim) * eye

    def kraus_ops(self) -> np.ndarray:
        d, p = self.dim, self.p
        ops = np.empty((d * d, d, d), dtype=np.complex128)
        shift = np.roll(np.eye(d, dtype=np.complex128), 1, axis=0)
        omega = np.exp(2j * np.pi / d)
        clock = np.diag(omega ** np.arange(d))
        idx = 0
        for j in range(d):
            for k in range(d):
                w = np.linalg.matrix_power(shift, j) @ np.linalg.matrix_power(clock, k)
                if j == 0 and k == 0:
                    ops[idx] = np.sqrt(1.0 - p + p / d**2) * w
                else:
                    ops[idx] = (np.sqrt(p) / d) * w
                idx += 1
        return ops


Channel = KrausChannel | DepolarizingChannel


class CptpReport(NamedTuple):
    """Completeness check result: pass flag and Frobenius defect."""

    passed: bool
    defect: float


def verify_cptp(ops: np.ndarray, tol: float = CPTP_DEFECT_TOL) -> CptpReport:
    """Check the Kraus completeness relation sum_i k_i^dagger k_i = I."""
    ops = np.ascontiguousarray(ops, dtype=np.complex128)
    d = ops.shape[-1]
    comp = np.zeros((d, d), dtype=np.complex128)
    for op in ops:
        comp += op.conj().T @ op
    defect = float(np.linalg.norm(comp - np.eye(d)))
    return CptpReport(defect < tol, defect)


def apply(ch: Channel, rho: DensityMatrix) -> DensityMatrix:
    """Apply a channel to a state, absorbing roundoff drift.

    The raw output is re-symmetrized and trace-renormalized; drift beyond
    STEP_DRIFT_TOL in either is logged rather than silently absorbed.
    """
    if ch.dim != rho.dim:
        raise ValueError(f"dimension mismatch: channel {ch.dim}, state {rho.dim}")
    out = ch.apply_raw(rho.mat)
    tr = float(np.trace(out).real)
    drift = abs(tr - 1.0)
    hdrift = herm_defect(out)
    if drift > STEP_DRIFT_TOL or hdrift > STEP_DRIFT_TOL:
        logger.warning(
            "channel application drift: trace %.3e, hermiticity %.3e", drift, hdrift
        )
    out = hermitize(out) / tr
    return DensityMatrix.from_matrix(out, validate=False)


def depolarizing_channel(dim: int, p: float) -> DepolarizingChannel:
    """Global depolarizing channel with mixing probability p."""
    return DepolarizingChannel(dim=dim, p=p)


def haar_random_channel(
    dim: int, n_ops: int, rng: np.random.Generator, seed: int | None = None
) -> KrausChannel:
    """Random channel from the first dim columns of a Haar unitary.

    The (dim * n_ops) x dim column block of a Haar-random unitary is an
    isometry; its dim x dim row blocks are the Kraus operators, so the
    completeness relation holds to machine precision by construction.
    """
    if n_ops < 1:
        raise ValueError(f"n_ops must be >= 1, got {n_ops}")
    u = haar_unitary(dim * n_ops, rng)
    iso = u[:, :dim]
    ops = np.ascontiguousarray(iso.reshape(n_ops, dim, dim))
    return KrausChannel(dim=dim, ops=ops, family="haar_random", seed=seed)


@dataclass(frozen=True)
class LindbladSpec:
    """Generator data for one dissipative time step.

    `hamiltonian` is the Hermitian system term, `jump_ops` the collapse
    operators, `dt` the step length.
    """

    hamiltonian: np.ndarray
    jump_ops: tuple
    dt: float

    def __post_init__(self):
        h = as_cmatrix(self.hamiltonian)
        if herm_defect(h) > 1e-12:
            raise ValueError("hamiltonian must be Hermitian")
        jumps = tuple(as_cmatrix(j) for j in self.jump_ops)
        for j in jumps:
            if j.shape != h.shape:
                raise ValueError("jump operators must match hamiltonian shape")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jump_ops", jumps)


def lindblad_step_channel(spec: LindbladSpec) -> KrausChannel:
    """First-order Kraus discretization of one Lindblad step.

    Builds k_0 = I - i (H - (i/2) sum G^dagger G) dt and k_j = sqrt(dt) G_j,
    whose completeness defect is exactly dt^2 ||Ht^dagger Ht||_F, then
    projects the stacked operator matrix to the nearest exact isometry by
    polar decomposition. A raw defect at or above
    LINDBLAD_RAW_DEFECT_LIMIT means dt is too coarse and raises. Raw and
    projected defects are reported in the channel's `info`.
    """
    h = spec.hamiltonian
    d = h.shape[0]
    eye = np.eye(d, dtype=np.complex128)
    gsum = np.zeros((d, d), dtype=np.complex128)
    for g in spec.jump_ops:
        gsum += g.conj().T @ g
    h_eff = h - 0.5j * gsum
    ops = [eye - 1j * spec.dt * h_eff]
    ops += [np.sqrt(spec.dt) * g for g in spec.jump_ops]
    ops = np.ascontiguousarray(np.stack(ops))
    raw_defect = verify_cptp(ops, tol=np.inf).defect
    if raw_defect >= LINDBLAD_RAW_DEFECT_LIMIT:
        raise ValueError(
            f"raw completeness defect {raw_defect:.3e} >= "
            f"{LINDBLAD_RAW_DEFECT_LIMIT}; decrease dt"
        )
    k = ops.shape[0]
    stacked = ops.reshape(k * d, d)
    u, _, vh = np.linalg.svd(stacked, full_matrices=False)
    proj = np.ascontiguousarray((u @ vh).reshape(k, d, d))
    projected_defect = verify_cptp(proj, tol=np.inf).defect
    logger.info(
        "lindblad step: raw defect %.3e, projected defect %.3e",
        raw_defect,
        projected_defect,
    )
    return KrausChannel(
        dim=d,
        ops=proj,
        family="lindblad",
        info={"raw_defect": raw_defect, "projected_defect": projected_defect},
    )


def _complete_isometry(iso: np.ndarray) -> np.ndarray:
    """Extend an isometry to a full unitary by Gram-Schmidt.

    Candidate standard basis vectors are taken in index order and
    orthogonalized (twice, for numerical orthogonality) against the
    columns collected so far; the process is deterministic.
    """
    m, n = iso.shape
    cols = [iso[:, i] for i in range(n)]
    for idx in range(m):
        if len(cols) == m:
            break
        cand = np.zeros(m, dtype=np.complex128)
        cand[idx] = 1.0
        for _ in range(2):
            for c in cols:
                cand = cand - c * (c.conj() @ cand)
        norm = float(np.linalg.norm(cand))
        if norm > 1e-7:
            cols.append(cand / norm)
    if len(cols) != m:
        raise np.linalg.LinAlgError("failed to complete isometry to a unitary")
    return np.stack(cols, axis=1)


def stinespring_apply(ch: KrausChannel, rho: DensityMatrix) -> DensityMatrix:
    """Apply a channel through its unitary dilation.

    The stacked Kraus operators define an isometry into system (x)
    environment; it is completed to a unitary, applied to
    rho (x) |e0><e0|, and the environment is traced out. Agrees with the
    Kraus form up to roundoff, which makes it an independent oracle.
    """
    if ch.dim != rho.dim:
        raise ValueError(f"dimension mismatch: channel {ch.dim}, state {rho.dim}")
    d, k = ch.dim, ch.n_ops
    # row index (s, e) = s * k + e, system first
    iso = np.ascontiguousarray(np.transpose(ch.ops, (1, 0, 2)).reshape(d * k, d))
    u = _complete_isometry(iso)
    # |s> (x) |e0> lives at column s*k, so the isometry's columns must sit
    # there; the completion fills the rest in deterministic order
    src = np.empty(d * k, dtype=np.intp)
    sys_cols = np.arange(d) * k
    src[sys_cols] = np.arange(d)
    mask = np.ones(d * k, dtype=bool)
    mask[sys_cols] = False
    src[mask] = np.arange(d, d * k)
    u = u[:, src]
    e00 = np.zeros((k, k), dtype=np.complex128)
    e00[0, 0] = 1.0
    big = u @ kron(rho.mat, e00) @ u.conj().T
    out = partial_trace_env(big, d, k)
    tr = float(np.trace(out).real)
    return DensityMatrix.from_matrix(hermitize(out) / tr, validate=False)


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward noise description: family, length, and family parameters.

    `n_ops` is honored literally only for the haar_random family; for the
    other families it is recorded as metadata. The depolarizing ramp is
    p_t = p_max * t / length for t = 1..length.
    """

    family: str
    length: int
    n_ops: int = 4
    p_max: float = 0.8
    gamma: float = 0.1
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.family not in KNOWN_FAMILIES:
            raise ValueError(
                f"unknown family {self.family!r}; known: {KNOWN_FAMILIES}"
            )
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError(f"p_max must be in [0, 1], got {self.p_max}")


def _sigma_minus_ops(n_qubits: int, gamma: float) -> list[np.ndarray]:
    lower = np.array([[0, 1], [0, 0]], dtype=np.complex128)
    eye = np.eye(2, dtype=np.complex128)
    ops = []
    for q in range(n_qubits):
        op = np.array([[1.0]], dtype=np.complex128)
        for j in range(n_qubits):
            op = kron(op, lower if j == q else eye)
        ops.append(np.sqrt(gamma) * op)
    return ops


def build_forward_sequence(
    schedule: NoiseSchedule, dim: int, rng: np.random.Generator | None = None
) -> list[Channel]:
    """Materialize the forward channel sequence for one trajectory.

    Deterministic given the schedule seed; an explicit `rng` overrides it
    when the caller manages seed derivation itself.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if rng is None:
        rng = make_rng(schedule.seed)
    chans: list[Channel] = []
    if schedule.family == "depolarizing":
        for t in range(1, schedule.length + 1):
            chans.append(depolarizing_channel(dim, schedule.p_max * t / schedule.length))
    elif schedule.family == "haar_random":
        for _ in range(schedule.length):
            chans.append(haar_random_channel(dim, schedule.n_ops, rng))
    else:
        n_qubits = int(round(np.log2(dim)))
        if 2**n_qubits != dim:
            raise ValueError(f"lindblad family needs a qubit register, got dim {dim}")
        spec = LindbladSpec(
            hamiltonian=np.zeros((dim, dim), dtype=np.complex128),
            jump_ops=tuple(_sigma_minus_ops(n_qubits, schedule.gamma)),
            dt=schedule.dt,
        )
        step = lindblad_step_channel(spec)
        chans = [step] * schedule.length
    return chans


def channel_to_dict(ch: Channel) -> dict:
    """JSON-ready description with enough data for exact replay."""
    doc = {
        "schema_version": CHANNEL_SCHEMA_VERSION,
        "dim": ch.dim,
        "family": ch.family,
        "seed": ch.seed,
    }
    if isinstance(ch, DepolarizingChannel):
        doc["p"] = ch.p
    ops = ch.kraus_ops()
    doc["ops"] = [
        [[float(z.real), float(z.imag)] for z in op.ravel()] for op in ops
    ]
    return doc


def channel_from_dict(doc: dict) -> Channel:
    """Inverse of `channel_to_dict`."""
    if doc.get("schema_version") != CHANNEL_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported channel schema_version {doc.get('schema_version')!r}"
        )
    dim = int(doc["dim"])
    family = doc.get("family", "generic")
    if family == "depolarizing" and "p" in doc:
        return DepolarizingChannel(dim=dim, p=float(doc["p"]))
    ops = np.array(
        [
            np.array([complex(re, im) for re, im in op], dtype=np.complex128).reshape(
                dim, dim
            )
            for op in doc["ops"]
        ]
    )
    seed = doc.get("seed")
    return KrausChannel(
        dim=dim, ops=ops, family=family, seed=None if seed is None else int(seed)
    )


def save_channels(chans: Sequence[Channel], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([channel_to_dict(c) for c in chans], fh)


def load_channels(path: str) -> list[Channel]:
    with open(path, "r", encoding="utf-8") as fh:
        docs = json.load(fh)
    return [channel_from_dict(d) for d in docs]


__all__ = [
    "CPTP_DEFECT_TOL",
    "STEP_DRIFT_TOL",
    "KNOWN_FAMILIES",
    "KrausChannel",
    "DepolarizingChannel",
    "Channel",
    "CptpReport",
    "verify_cptp",
    "apply",
    "depolarizing_channel",
    "haar_random_channel",
    "LindbladSpec",
    "lindblad_step_channel",
    "stinespring_apply",
    "NoiseSchedule",
    "build_forward_sequence",
    "channel_to_dict",
    "channel_from_dict",
    "save_channels",
    "load_channels",
]
