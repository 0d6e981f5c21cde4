"""Hot numeric kernels, optionally JIT-compiled.

The backend is chosen once at import from the CCMQD_KERNELS environment
variable: "numba" compiles the kernels with numba.njit, "numpy" runs the
identical function bodies as plain Python/numpy, and "auto" (the default)
picks numba when it is importable. The uncompiled implementations stay
reachable through PYTHON_IMPLS so the two backends can be benchmarked
against each other in one process.

All kernels operate on C-contiguous complex128 arrays. Stacked Kraus
operators use the layout (K, d, d); a chain of L steps uses (L, K, d, d)
with index t-1 holding the operators of step t.
"""

from __future__ import annotations

import os

import numpy as np


def _resolve_backend() -> str:
    choice = os.environ.get("CCMQD_KERNELS", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            "CCMQD_KERNELS must be one of 'auto', 'numba', 'numpy', got %r" % choice
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


def _jit(fn):
    if BACKEND == "numba":
        from numba import njit

        return njit(cache=True)(fn)
    return fn


def _kraus_apply(ops, rho):
    """Apply sum_i ops[i] @ rho @ ops[i]^dagger.

    Args:
        ops: (K, d, d) complex operators.
        rho: (d, d) complex matrix.

    Returns:
        (d, d) complex matrix.
    """
    d = rho.shape[0]
    out = np.zeros((d, d), dtype=np.complex128)
    for i in range(ops.shape[0]):
        op = ops[i]
        out += op @ rho @ np.ascontiguousarray(op.conj().T)
    return out


def _backward_chain(blocks, rho_in):
    """Run the reversal chain, keeping every intermediate state.

    Args:
        blocks: (L, K, d, d) operators; blocks[t-1] holds step t, applied
            in the order t = L down to 1.
        rho_in: (d, d) input state.

    Returns:
        (L+1, d, d) states with states[t] the state after steps L..t+1
        have been applied; states[L] is rho_in and states[0] the output.
    """
    L = blocks.shape[0]
    d = rho_in.shape[0]
    states = np.empty((L + 1, d, d), dtype=np.complex128)
    states[L] = rho_in
    for t in range(L, 0, -1):
        acc = np.zeros((d, d), dtype=np.complex128)
        src = states[t]
        for i in range(blocks.shape[1]):
            op = blocks[t - 1, i]
            acc += op @ src @ np.ascontiguousarray(op.conj().T)
        states[t - 1] = acc
    return states


def _adjoint_chain(blocks, states, direct_cot):
    """Reverse-mode gradients of a scalar loss through the chain.

    The loss is assumed to read the chain states through Hermitian
    cotangents: direct_cot[t] = dL/d(states[t]) holding every other state
    fixed, in the pairing dL = Tr[W dX]. The returned G satisfies
    dL = 2 Re Tr[G[t-1, i]^dagger d(blocks[t-1, i])].

    Args:
        blocks: (L, K, d, d) operators.
        states: (L+1, d, d) chain states from _backward_chain.
        direct_cot: (L+1, d, d) Hermitian per-state cotangents.

    Returns:
        (L, K, d, d) gradient blocks.
    """
    L = blocks.shape[0]
    K = blocks.shape[1]
    d = states.shape[1]
    grads = np.empty((L, K, d, d), dtype=np.complex128)
    running = direct_cot[0].copy()
    for t in range(1, L + 1):
        src = states[t]
        nxt = direct_cot[t].copy()
        for i in range(K):
            op = blocks[t - 1, i]
            op_ct = np.ascontiguousarray(op.conj().T)
            grads[t - 1, i] = running @ op @ src
            nxt += op_ct @ running @ op
        running = nxt
    return grads


def _sqrt_factor_terms(r_factor, sigma, cutoff):
    """Overlap trace f = Tr sqrt(R sigma R) and its derivative in sigma.

    R is a Hermitian PSD square-root factor of the fixed reference state.
    Returns (f, W) with W = dF/dsigma for f, i.e. df = Tr[W dsigma],
    W = 0.5 * R (R sigma R)^{-1/2} R with eigenvalues below `cutoff`
    dropped from the pseudo-inverse.
    """
    m = r_factor @ sigma @ r_factor
    m = (m + np.ascontiguousarray(m.conj().T)) * 0.5
    w, v = np.linalg.eigh(m)
    d = m.shape[0]
    f = 0.0
    inv_sqrt = np.zeros(d, dtype=np.float64)
    for i in range(d):
        wi = w[i]
        if wi > 0.0:
            root = np.sqrt(wi)
            f += root
            if wi > cutoff:
                inv_sqrt[i] = 1.0 / root
    s_pinv = (v * inv_sqrt.astype(np.complex128)) @ np.ascontiguousarray(v.conj().T)
    w_mat = 0.5 * (r_factor @ s_pinv @ r_factor)
    w_mat = (w_mat + np.ascontiguousarray(w_mat.conj().T)) * 0.5
    return f, w_mat


def _cayley_step(kappa, grad, tau):
    """One curvilinear update keeping kappa^dagger kappa = I.

    Implements kappa' = kappa - tau * U (I + (tau/2) V^dagger U)^{-1}
    V^dagger kappa with U = [grad, kappa] and V = [kappa, -grad], the
    low-rank form of the Cayley transform of the skew-Hermitian generator
    A = grad kappa^dagger - kappa grad^dagger.
    """
    n = kappa.shape[1]
    u = np.concatenate((grad, kappa), axis=1)
    v = np.concatenate((kappa, -grad), axis=1)
    v_ct = np.ascontiguousarray(v.conj().T)
    b = v_ct @ u
    lhs = np.eye(2 * n, dtype=np.complex128) + (0.5 * tau) * b
    rhs = v_ct @ kappa
    x = np.linalg.solve(lhs, rhs)
    return kappa - tau * (u @ x)


PYTHON_IMPLS = {
    "kraus_apply": _kraus_apply,
    "backward_chain": _backward_chain,
    "adjoint_chain": _adjoint_chain,
    "sqrt_factor_terms": _sqrt_factor_terms,
    "cayley_step": _cayley_step,
}

kraus_apply = _jit(_kraus_apply)
backward_chain = _jit(_backward_chain)
adjoint_chain = _jit(_adjoint_chain)
sqrt_factor_terms = _jit(_sqrt_factor_terms)
cayley_step = _jit(_cayley_step)

JIT_IMPLS = {
    "kraus_apply": kraus_apply,
    "backward_chain": backward_chain,
    "adjoint_chain": adjoint_chain,
    "sqrt_factor_terms": sqrt_factor_terms,
    "cayley_step": cayley_step,
}

__all__ = [
    "BACKEND",
    "PYTHON_IMPLS",
    "JIT_IMPLS",
    "kraus_apply",
    "backward_chain",
    "adjoint_chain",
    "sqrt_factor_terms",
    "cayley_step",
]
