"""Dense complex linear algebra primitives shared by all higher layers.

Everything operates on square complex128 numpy arrays. Randomness is
always drawn from an explicitly passed numpy Generator; `make_rng` and
`child_rng` build generators from integer seeds so that one root seed
deterministically fans out to independent streams.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import numpy.linalg as npl

COND_LIMIT = 1e12


class HermEig(NamedTuple):
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Generator seeded from a single integer."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent child stream identified by an integer path.

    Distinct keys give statistically independent streams; the same
    (seed, key) pair always gives the same stream.
    """
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def as_cmatrix(a: np.ndarray) -> np.ndarray:
    """Coerce to a square, finite, C-contiguous complex128 matrix."""
    m = np.ascontiguousarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise ValueError("matrix contains non-finite entries")
    return m


def hermitize(a: np.ndarray) -> np.ndarray:
    """Nearest Hermitian matrix, (A + A^dagger) / 2."""
    return (a + a.conj().T) * 0.5


def herm_defect(a: np.ndarray) -> float:
    """Frobenius distance to the Hermitian part."""
    return float(npl.norm(a - a.conj().T)) * 0.5


def herm_eig(a: np.ndarray) -> HermEig:
    """Eigendecomposition of a Hermitian matrix.

    The input is symmetrized before factoring, so tiny non-Hermitian
    noise is absorbed. Eigenvalues come back ascending, eigenvectors as
    columns, orthonormal to machine precision.
    """
    m = as_cmatrix(a)
    w, v = npl.eigh(hermitize(m))
    return HermEig(w, v)


def psd_sqrt(a: np.ndarray, clip_tol: float = 1e-9) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix.

    Eigenvalues in [-clip_tol, 0) are clipped to zero; anything below
    -clip_tol is a contract violation and raises.
    """
    w, v = herm_eig(a)
    if w[0] < -clip_tol:
        raise ValueError(
            f"matrix is not PSD: min eigenvalue {w[0]:.3e} < -{clip_tol:.1e}"
        )
    root = np.sqrt(np.maximum(w, 0.0))
    return hermitize((v * root) @ v.conj().T)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via Ginibre + QR with phase correction.

    The QR phases are fixed by the sign of diag(R) so the distribution
    is exactly Haar rather than QR-biased.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = npl.qr(g / np.sqrt(2.0))
    diag = np.diag(r)
    phases = diag / np.abs(diag)
    return np.ascontiguousarray(q * phases)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the first factor as the outer (system) index."""
    return np.kron(a, b)


def partial_trace_env(m: np.ndarray, sys_dim: int, env_dim: int) -> np.ndarray:
    """Trace out the trailing environment factor.

    `m` acts on system (x) environment with the system as the first
    tensor factor, i.e. composite row index s * env_dim + e.
    """
    mm = as_cmatrix(m)
    if mm.shape[0] != sys_dim * env_dim:
        raise ValueError(
            f"matrix of size {mm.shape[0]} does not factor as {sys_dim}x{env_dim}"
        )
    r = mm.reshape(sys_dim, env_dim, sys_dim, env_dim)
    return np.ascontiguousarray(np.einsum("iaja->ij", r))


def solve_small(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Linear solve for small dense systems, guarded against ill-conditioning."""
    m = as_cmatrix(a)
    cond = npl.cond(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise npl.LinAlgError(
            f"matrix is singular or ill-conditioned (cond {cond:.3e})"
        )
    return npl.solve(m, np.asarray(b, dtype=np.complex128))


__all__ = [
    "COND_LIMIT",
    "HermEig",
    "make_rng",
    "child_rng",
    "as_cmatrix",
    "hermitize",
    "herm_defect",
    "herm_eig",
    "psd_sqrt",
    "haar_unitary",
    "kron",
    "partial_trace_env",
    "solve_small",
]
