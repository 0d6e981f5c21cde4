"""Linear-algebra primitives: Hermitian handling, Haar draws, partial trace."""

import numpy as np
import pytest

from ccmqd.linalg import (
    as_cmatrix,
    child_rng,
    haar_unitary,
    herm_defect,
    herm_eig,
    hermitize,
    kron,
    make_rng,
    partial_trace_env,
    psd_sqrt,
    solve_small,
)
from tests.conftest import random_density


def test_as_cmatrix_rejects_nonsquare():
    with pytest.raises(ValueError):
        as_cmatrix(np.zeros((2, 3)))


def test_as_cmatrix_rejects_nonfinite():
    bad = np.array([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(ValueError):
        as_cmatrix(bad)


def test_hermitize_idempotent_and_symmetric(rng):
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = hermitize(a)
    assert herm_defect(h) < 1e-15
    np.testing.assert_allclose(hermitize(h), h)


def test_herm_eig_ascending(rng):
    m = random_density(6, rng)
    eig = herm_eig(m)
    assert np.all(np.diff(eig.eigenvalues) >= 0)
    rebuilt = (eig.eigenvectors * eig.eigenvalues) @ eig.eigenvectors.conj().T
    np.testing.assert_allclose(rebuilt, m, atol=1e-12)


def test_psd_sqrt_squares_back(rng):
    m = random_density(5, rng)
    r = psd_sqrt(m)
    np.testing.assert_allclose(r @ r, m, atol=1e-12)


def test_psd_sqrt_rejects_negative():
    m = np.diag([1.0, -0.5]).astype(complex)
    with pytest.raises(ValueError):
        psd_sqrt(m)


def test_psd_sqrt_clips_tiny_negative():
    m = np.diag([1.0, -1e-12]).astype(complex)
    r = psd_sqrt(m)
    assert r[1, 1].real == 0.0


def test_haar_unitary_is_unitary(rng):
    for dim in (2, 3, 5):
        u = haar_unitary(dim, rng)
        np.testing.assert_allclose(u @ u.conj().T, np.eye(dim), atol=1e-12)


def test_haar_unitary_first_entry_moment():
    # E|U_00|^2 = 1/dim for the Haar measure; 10^4 samples put three
    # standard errors near 0.009 at dim 2
    rng = make_rng(7)
    dim, n = 2, 10_000
    acc = 0.0
    for _ in range(n):
        u = haar_unitary(dim, rng)
        acc += abs(u[0, 0]) ** 2
    assert abs(acc / n - 1 / dim) < 0.009


def test_child_rng_streams_independent_and_reproducible():
    a1 = child_rng(42, 0).standard_normal(4)
    a2 = child_rng(42, 0).standard_normal(4)
    b = child_rng(42, 1).standard_normal(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)


def test_partial_trace_env_product_state(rng):
    sys = random_density(2, rng)
    env = random_density(3, rng)
    joint = kron(sys, env)
    np.testing.assert_allclose(partial_trace_env(joint, 2, 3), sys, atol=1e-12)


def test_partial_trace_env_preserves_trace(rng):
    joint = random_density(6, rng)
    out = partial_trace_env(joint, 2, 3)
    assert abs(np.trace(out) - 1.0) < 1e-12


def test_solve_small_matches_numpy(rng):
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)) + 4 * np.eye(4)
    b = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    np.testing.assert_allclose(solve_small(a, b), np.linalg.solve(a, b))


def test_solve_small_rejects_singular():
    a = np.zeros((3, 3), dtype=complex)
    with pytest.raises(np.linalg.LinAlgError):
        solve_small(a, np.eye(3, dtype=complex))
