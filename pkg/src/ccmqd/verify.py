"""Self-check suite covering the package's core mathematical contracts.

Each check draws randomized instances from a fixed seed, measures the
relevant defect, and passes only if every instance stays inside the
stated tolerance. `run_checks(full=False)` keeps trial counts small for
a fast gate; `full=True` runs the deep sweep.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .channels import (
    LindbladSpec,
    haar_random_channel,
    lindblad_step_channel,
    stinespring_apply,
    verify_cptp,
)
from .diffusion import run_forward
from .linalg import child_rng, haar_unitary
from .losses import LossSpec
from .states import DensityMatrix, fidelity, random_pure_state
from .stiefel import cayley_update, fd_oracle, init_backward, random_stiefel
from .training import (
    TrainConfig,
    config_from_dict,
    train_hqto,
    trajectory_for_seed,
)

VERIFY_SEED = 20240901

CPTP_DEFECT_LIMIT = 1e-9
TRACE_DRIFT_LIMIT = 1e-10
MIN_EIG_LIMIT = -1e-9
STINESPRING_LIMIT = 1e-9
GRADIENT_LIMIT = 1e-5
CAYLEY_DRIFT_LIMIT = 1e-8
FIDELITY_AXIOM_LIMIT = 1e-9
DT2_RATIO_BAND = 0.2
REGRESSION_FIDELITY_FLOOR = 0.99


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0


def _random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Full-rank random state from a Ginibre draw."""
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
    m = g @ g.conj().T
    return m / np.trace(m).real


def check_cptp_random_channels(full: bool) -> CheckResult:
    """Random channels satisfy completeness; outputs stay physical."""
    t0 = time.perf_counter()
    per_dim = 334 if full else 17
    rng = child_rng(VERIFY_SEED, 1)
    worst_defect = 0.0
    worst_drift = 0.0
    worst_eig = 0.0
    n = 0
    for dim in (2, 4, 8):
        for _ in range(per_dim):
            k = int(rng.integers(1, 7))
            ch = haar_random_channel(dim, k, rng)
            rep = verify_cptp(ch.ops, tol=CPTP_DEFECT_LIMIT)
            worst_defect = max(worst_defect, rep.defect)
            rho = _random_density(dim, rng)
            out = ch.apply_raw(rho)
            worst_drift = max(worst_drift, abs(float(np.trace(out).real) - 1.0))
            worst_eig = min(worst_eig, float(np.linalg.eigvalsh((out + out.conj().T) / 2)[0]))
            n += 1
    ok = (
        worst_defect < CPTP_DEFECT_LIMIT
        and worst_drift < TRACE_DRIFT_LIMIT
        and worst_eig >= MIN_EIG_LIMIT
    )
    return CheckResult(
        "cptp_random_channels",
        ok,
        f"{n} channels, dims 2/4/8: max completeness defect {worst_defect:.2e}, "
        f"max trace drift {worst_drift:.2e}, min output eigenvalue {worst_eig:.2e}",
        time.perf_counter() - t0,
    )


def check_stinespring_vs_kraus(full: bool) -> CheckResult:
    """Dilated unitary evolution and the operator sum agree."""
    t0 = time.perf_counter()
    n_pairs = 200 if full else 50
    rng = child_rng(VERIFY_SEED, 2)
    dims = (2, 3, 4)
    worst = 0.0
    for i in range(n_pairs):
        dim = dims[i % len(dims)]
        k = int(rng.integers(1, 5))
        ch = haar_random_channel(dim, k, rng)
        rho = DensityMatrix.from_matrix(_random_density(dim, rng))
        a = ch.apply_raw(rho.mat)
        b = stinespring_apply(ch, rho).mat
        worst = max(worst, float(np.linalg.norm(a - b)))
    ok = worst < STINESPRING_LIMIT
    return CheckResult(
        "stinespring_vs_kraus",
        ok,
        f"{n_pairs} channel/state pairs: max route disagreement {worst:.2e}",
        time.perf_counter() - t0,
    )


def check_gradient_fd(full: bool) -> CheckResult:
    """Analytic loss gradients match central finite differences.

    Forward channels draw at least dim+1 operators so every reference
    state is full rank; at rank-deficient references the fidelity's
    matrix square root is not differentiable and finite differences
    cannot probe the support-restricted gradient.
    """
    t0 = time.perf_counter()
    n_configs = 50 if full else 12
    rng = child_rng(VERIFY_SEED, 3)
    specs = [
        LossSpec(kind="sqco_step"),
        LossSpec(kind="hqto"),
        LossSpec(kind="pc", lam=0.7),
        LossSpec(kind="sqco_step", loss_form="neg_sqrt_F"),
        LossSpec(kind="hqto", loss_form="neg_sqrt_F"),
        LossSpec(kind="pc", lam=0.3, loss_form="neg_sqrt_F"),
    ]
    worst = 0.0
    for i in range(n_configs):
        n_qubits = 1 + i % 2
        dim = 2**n_qubits
        n_steps = 1 + int(rng.integers(0, 3))
        k_b = 1 + int(rng.integers(0, 3))
        target = random_pure_state(n_qubits, rng)
        channels = [
            haar_random_channel(dim, dim + int(rng.integers(1, 4)), rng)
            for _ in range(n_steps)
        ]
        traj = run_forward(target, channels)
        model = init_backward(n_steps, k_b, dim, rng)
        spec = specs[i % len(specs)]
        rep = fd_oracle(model, traj, spec)
        worst = max(worst, rep.max_rel_dev)
    ok = worst < GRADIENT_LIMIT
    return CheckResult(
        "gradient_fd",
        ok,
        f"{n_configs} configs at 1-2 qubits, all loss kinds and forms: "
        f"max relative deviation {worst:.2e}",
        time.perf_counter() - t0,
    )


def check_cayley_orthonormality(full: bool) -> CheckResult:
    """Cayley updates preserve isometry over long random walks."""
    t0 = time.perf_counter()
    n_updates = 1000 if full else 100
    rng = child_rng(VERIFY_SEED, 4)
    dim, n_ops = 4, 3
    point = random_stiefel(dim, n_ops, rng)
    worst = 0.0
    for _ in range(n_updates):
        g = rng.standard_normal(point.kappa.shape) + 1j * rng.standard_normal(
            point.kappa.shape
        )
        point = cayley_update(point, 0.05 * g, float(rng.uniform(0.01, 0.3)))
        worst = max(worst, point.defect())
    ok = worst < CAYLEY_DRIFT_LIMIT
    return CheckResult(
        "cayley_orthonormality",
        ok,
        f"{n_updates} random updates on one point: max isometry defect {worst:.2e}",
        time.perf_counter() - t0,
    )


def check_fidelity_axioms(full: bool) -> CheckResult:
    """Identity, symmetry, range, and the pure-state closed form."""
    t0 = time.perf_counter()
    n_pairs = 500 if full else 50
    rng = child_rng(VERIFY_SEED, 5)
    worst_sym = 0.0
    worst_self = 0.0
    worst_pure = 0.0
    worst_range = 0.0
    for i in range(n_pairs):
        dim = (2, 3, 4)[i % 3]
        a = DensityMatrix.from_matrix(_random_density(dim, rng))
        b = DensityMatrix.from_matrix(_random_density(dim, rng))
        fab = fidelity(a, b)
        fba = fidelity(b, a)
        worst_sym = max(worst_sym, abs(fab - fba))
        worst_self = max(worst_self, abs(fidelity(a, a) - 1.0))
        worst_range = max(worst_range, max(0.0, fab - 1.0), max(0.0, -fab))
        # pure-pure closed form |<psi|phi>|^2, orthogonal and generic
        u = haar_unitary(dim, rng)
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        for psi, phi in ((u[:, 0], u[:, 1]), (u[:, 0], v)):
            pa = DensityMatrix.from_matrix(np.outer(psi, psi.conj()))
            pb = DensityMatrix.from_matrix(np.outer(phi, phi.conj()))
            expected = abs(np.vdot(psi, phi)) ** 2
            worst_pure = max(worst_pure, abs(fidelity(pa, pb) - expected))
    ok = (
        worst_sym < FIDELITY_AXIOM_LIMIT
        and worst_self < FIDELITY_AXIOM_LIMIT
        and worst_pure < FIDELITY_AXIOM_LIMIT
        and worst_range == 0.0
    )
    return CheckResult(
        "fidelity_axioms",
        ok,
        f"{n_pairs} pairs: symmetry {worst_sym:.2e}, self-fidelity {worst_self:.2e}, "
        f"pure closed form {worst_pure:.2e}, range excess {worst_range:.2e}",
        time.perf_counter() - t0,
    )


def check_lindblad_dt2(full: bool) -> CheckResult:
    """Raw completeness defect of the discretized generator scales as dt^2."""
    t0 = time.perf_counter()
    rng = child_rng(VERIFY_SEED, 6)
    h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    # kept small so the coarsest step stays under the raw-defect guard
    ham = 0.3 * (h + h.conj().T) / 2
    jump = np.sqrt(0.1) * np.array([[0, 1], [0, 0]], dtype=complex)
    defects = []
    for dt in (0.1, 0.05, 0.025):
        ch = lindblad_step_channel(LindbladSpec(hamiltonian=ham, jump_ops=(jump,), dt=dt))
        defects.append(ch.info["raw_defect"])
    ratios = [defects[i] / defects[i + 1] for i in range(2)]
    ok = all(abs(r - 4.0) <= 4.0 * DT2_RATIO_BAND for r in ratios)
    return CheckResult(
        "lindblad_dt2",
        ok,
        f"dt halving defect ratios {ratios[0]:.3f}, {ratios[1]:.3f} (expect 4 within 20%)",
        time.perf_counter() - t0,
    )


def _load_fixture(name: str) -> dict:
    with resources.files("ccmqd.fixtures").joinpath(name).open() as fh:
        return json.load(fh)


def check_regression_nonmonotone(full: bool) -> CheckResult:
    """Stored config shows the endpoint/path trade-off during training.

    At least one intermediate step's fidelity curve must be non-monotone
    and end below its starting value while the final reconstruction
    fidelity stays above 0.99.
    """
    t0 = time.perf_counter()
    doc = _load_fixture("regression_nonmonotone.json")
    cfg = config_from_dict(doc["config"])
    seed = int(doc["seed"])
    traj = trajectory_for_seed(cfg, seed)
    _, rec = train_hqto(traj, cfg, child_rng(seed, 2))
    curves = np.asarray(rec.fidelity_curves)
    found = False
    for t in range(1, cfg.l_b):
        col = curves[:, t]
        diffs = np.diff(col)
        nonmono = bool((diffs > 1e-12).any() and (diffs < -1e-12).any())
        if nonmono and col[-1] < col[0]:
            found = True
            break
    ok = found and rec.final_fidelity > REGRESSION_FIDELITY_FLOOR
    return CheckResult(
        "regression_nonmonotone",
        ok,
        f"final fidelity {rec.final_fidelity:.4f}, "
        f"non-monotone intermediate step ending below start: {found}",
        time.perf_counter() - t0,
    )


ALL_CHECKS = (
    check_cptp_random_channels,
    check_stinespring_vs_kraus,
    check_gradient_fd,
    check_cayley_orthonormality,
    check_fidelity_axioms,
    check_lindblad_dt2,
    check_regression_nonmonotone,
)


def run_checks(full: bool = False) -> list[CheckResult]:
    return [chk(full) for chk in ALL_CHECKS]


__all__ = ["CheckResult", "run_checks", "ALL_CHECKS", "VERIFY_SEED"]
