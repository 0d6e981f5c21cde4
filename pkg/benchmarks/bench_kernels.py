"""Times every hot kernel under the pure-numpy and jitted backends.

Run: python3 benchmarks/bench_kernels.py [--dim 8] [--steps 10] [--ops 10]
The jit column reads "n/a" when the package was imported with
CCMQD_KERNELS=numpy or numba is unavailable.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ccmqd._kernels import BACKEND, JIT_IMPLS, PYTHON_IMPLS
from ccmqd.linalg import make_rng
from ccmqd.stiefel import random_stiefel


def _inputs(dim: int, n_steps: int, n_ops: int, rng):
    blocks = np.stack(
        [random_stiefel(dim, n_ops, rng).kappa.reshape(n_ops, dim, dim) for _ in range(n_steps)]
    )
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    states = PYTHON_IMPLS["backward_chain"](blocks, rho)
    cot = np.stack([np.eye(dim, dtype=np.complex128)] * (n_steps + 1))
    kappa = blocks[0].reshape(n_ops * dim, dim)
    grad = rng.standard_normal(kappa.shape) + 1j * rng.standard_normal(kappa.shape)
    r_factor = np.eye(dim, dtype=np.complex128) / dim
    calls = {
        "kraus_apply": (blocks[0], rho),
        "backward_chain": (blocks, rho),
        "adjoint_chain": (blocks, states, cot),
        "sqrt_factor_terms": (r_factor, rho, 1e-10),
        "cayley_step": (kappa, grad, 0.05),
    }
    return calls


def _time_call(fn, args, repeats: int) -> float:
    fn(*args)  # warmup / compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--steps", type=int, default=10)
    parser.add_argument("--ops", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = make_rng(0)
    calls = _inputs(args.dim, args.steps, args.ops, rng)
    jit_available = JIT_IMPLS["kraus_apply"] is not PYTHON_IMPLS["kraus_apply"]

    print(f"backend={BACKEND} dim={args.dim} steps={args.steps} ops={args.ops}")
    print(f"{'kernel':<20} {'numpy (ms)':>12} {'jit (ms)':>12} {'speedup':>9}")
    for name, call_args in calls.items():
        t_py = _time_call(PYTHON_IMPLS[name], call_args, args.repeats) * 1e3
        if jit_available:
            t_jit = _time_call(JIT_IMPLS[name], call_args, args.repeats) * 1e3
            print(f"{name:<20} {t_py:>12.4f} {t_jit:>12.4f} {t_py / t_jit:>8.1f}x")
        else:
            print(f"{name:<20} {t_py:>12.4f} {'n/a':>12} {'n/a':>9}")


if __name__ == "__main__":
    main()
