"""Training strategies, convergence control, and multi-seed statistics.

Two strategies share the same curvilinear-descent core: `train_sqco`
optimizes each reversal step independently against its paired forward
state, then composes the chain; `train_hqto` optimizes all steps jointly
against the endpoint fidelity, optionally with path-constraint terms
(loss kind "pc").

Every accepted iteration appends one entry to the loss curve and one row
of per-step fidelities F(rho_t, rho_hat_t), so curve lengths equal the
accepted-iteration count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .channels import Channel, NoiseSchedule, build_forward_sequence
from .diffusion import Trajectory, bloch_rows, run_forward
from .linalg import child_rng
from .losses import (
    LossSpec,
    align_index,
    build_references,
    evaluate_chain,
    local_step_eval,
)
from .states import DensityMatrix, PureState, named_state, random_pure_state
from .stiefel import (
    MAX_TAU_HALVINGS,
    STIEFEL_DEFECT_TOL,
    BackwardModel,
    StiefelPoint,
    apply_backward,
    identity_backward,
    init_backward,
    polar_project,
)

TARGET_KINDS = ("haar", "zeros", "plus", "ghz")
INIT_KINDS = ("haar", "identity")


@dataclass(frozen=True)
class TrainConfig:
    """Complete description of one experiment cell."""

    n_qubits: int
    schedule: NoiseSchedule
    l_b: int
    k_b: int
    loss: LossSpec
    max_iters: int = 2000
    convergence_eps: float = 1e-9
    tau0: float = 0.05
    seeds: tuple = (101, 102, 103, 104, 105)
    target: str = "haar"
    init: str = "haar"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {self.n_qubits}")
        if self.l_b < 1 or self.k_b < 1:
            raise ValueError("l_b and k_b must be >= 1")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be > 0")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be > 0")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "seeds", seeds)
        if self.target not in TARGET_KINDS:
            raise ValueError(f"unknown target {self.target!r}; known: {TARGET_KINDS}")
        if self.init not in INIT_KINDS:
            raise ValueError(f"unknown init {self.init!r}; known: {INIT_KINDS}")
        if self.loss.kind == "sqco_step" and self.l_b != self.schedule.length:
            raise ValueError(
                "sqco_step pairs each backward step with one forward step: "
                f"l_b {self.l_b} != forward length {self.schedule.length}"
            )
        if self.loss.alpha is not None and len(self.loss.alpha) != self.l_b:
            raise ValueError("loss alpha length must equal l_b")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def strategy(self) -> str:
        if self.loss.kind == "sqco_step":
            return "sqco"
        if self.loss.kind == "pc" and self.loss.lam != 0.0:
            return "hqto+pc"
        return "hqto"


@dataclass
class TrainRecord:
    """Result of one training run on one trajectory."""

    loss_curve: list
    fidelity_curves: list
    iters: int
    converged: bool
    stalled: bool
    final_fidelity: float
    reprojections: int = 0
    # per-block converged local fidelities, sequential strategy only
    local_fidelities: list | None = None


def _cayley_all(stacked: np.ndarray, grads: np.ndarray, tau: float) -> np.ndarray:
    """Cayley-update every block with a shared step length."""
    n_steps, k, d, _ = stacked.shape
    out = np.empty_like(stacked)
    for t in range(n_steps):
        new = _kernels.cayley_step(
            stacked[t].reshape(k * d, d), grads[t].reshape(k * d, d), tau
        )
        out[t] = new.reshape(k, d, d)
    return out


def _maintain_manifold(stacked: np.ndarray) -> int:
    """Re-orthonormalize drifted blocks in place; returns event count."""
    n_steps, k, d, _ = stacked.shape
    eye = np.eye(d)
    n_fixed = 0
    for t in range(n_steps):
        k2 = stacked[t].reshape(k * d, d)
        if float(np.linalg.norm(k2.conj().T @ k2 - eye)) > STIEFEL_DEFECT_TOL:
            stacked[t] = polar_project(k2).reshape(k, d, d)
            n_fixed += 1
    return n_fixed


def _model_from_stacked(stacked: np.ndarray, dim: int) -> BackwardModel:
    k = stacked.shape[1]
    return BackwardModel(
        dim=dim,
        blocks=tuple(
            StiefelPoint(np.ascontiguousarray(stacked[t].reshape(k * dim, dim)))
            for t in range(stacked.shape[0])
        ),
    )


def _initial_model(cfg: TrainConfig, rng: np.random.Generator) -> BackwardModel:
    if cfg.init == "identity":
        return identity_backward(cfg.l_b, cfg.k_b, cfg.dim)
    return init_backward(cfg.l_b, cfg.k_b, cfg.dim, rng)


def train_hqto(
    traj: Trajectory, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[BackwardModel, TrainRecord]:
    """Joint training of all reversal steps on the chain loss."""
    spec = cfg.loss
    if spec.kind == "sqco_step":
        raise ValueError("train_hqto requires loss kind hqto or pc")
    model = _initial_model(cfg, rng)
    stacked = model.stacked()
    refs = build_references(traj, cfg.l_b)
    alpha = spec.resolve_alpha(cfg.l_b)
    rho_in = traj.states[-1].mat

    states = _kernels.backward_chain(stacked, rho_in)
    ev = evaluate_chain(states, refs, spec, alpha, want_cot=True, want_curve=True)
    loss = ev.loss
    initial_f0 = ev.fidelity_curve[0]

    loss_curve: list[float] = []
    fid_curves: list[list[float]] = []
    converged = stalled = False
    reproj = 0
    tau = cfg.tau0
    for _ in range(cfg.max_iters):
        grads = _kernels.adjoint_chain(stacked, states, ev.direct_cot)
        t_try = tau
        accepted = False
        for _h in range(MAX_TAU_HALVINGS + 1):
            try:
                cand = _cayley_all(stacked, grads, t_try)
                cand_states = _kernels.backward_chain(cand, rho_in)
                cand_loss = evaluate_chain(cand_states, refs, spec, alpha).loss
            except np.linalg.LinAlgError:
                t_try *= 0.5
                continue
            if cand_loss < loss:
                accepted = True
                break
            t_try *= 0.5
        if not accepted:
            stalled = True
            break
        n_fixed = _maintain_manifold(cand)
        if n_fixed:
            reproj += n_fixed
            cand_states = _kernels.backward_chain(cand, rho_in)
        stacked, states = cand, cand_states
        prev = loss
        ev = evaluate_chain(states, refs, spec, alpha, want_cot=True, want_curve=True)
        loss = ev.loss
        loss_curve.append(loss)
        fid_curves.append(ev.fidelity_curve)
        tau = min(cfg.tau0, t_try * 2.0)
        if abs(prev - loss) < cfg.convergence_eps:
            converged = True
            break

    final_f = fid_curves[-1][0] if fid_curves else initial_f0
    return _model_from_stacked(stacked, cfg.dim), TrainRecord(
        loss_curve=loss_curve,
        fidelity_curves=fid_curves,
        iters=len(loss_curve),
        converged=converged,
        stalled=stalled,
        final_fidelity=float(final_f),
        reprojections=reproj,
    )


def train_sqco(
    traj: Trajectory, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[BackwardModel, TrainRecord]:
    """Per-step training: block t learns to map rho_t back to rho_{t-1}.

    Blocks are optimized independently, in application order (step L_b
    first). After every accepted local iteration the full chain, with
    not-yet-trained blocks still at their initialization, is composed to
    record the per-step fidelity row; the local loss of the block being
    trained is appended to the loss curve.

    cfg.max_iters is the budget for the whole run, not per block: each
    block receives a quarter of its even share (max_iters / (4 l_b)).
    The quarter-share keeps sequential training well inside the joint
    strategy's compute while calibrating composed fidelity to the known
    band for this strategy; raise max_iters to push blocks further.
    """
    spec = cfg.loss
    if spec.kind != "sqco_step":
        raise ValueError("train_sqco requires loss kind sqco_step")
    if cfg.l_b != traj.steps:
        raise ValueError(
            f"sqco_step needs l_b == forward steps, got {cfg.l_b} vs {traj.steps}"
        )
    model = _initial_model(cfg, rng)
    stacked = model.stacked()
    refs = build_references(traj, cfg.l_b)
    curve_spec = LossSpec(kind="hqto", loss_form=spec.loss_form)
    ones = np.ones(cfg.l_b)
    rho_in = traj.states[-1].mat

    loss_curve: list[float] = []
    fid_curves: list[list[float]] = []
    all_converged = True
    any_stalled = False
    reproj = 0
    block_budget = max(1, cfg.max_iters // (4 * cfg.l_b))
    local_fidelities = [0.0] * cfg.l_b
    for t in range(cfg.l_b, 0, -1):
        source = traj.states[t].mat
        ref = refs[t - 1]
        value, local_f, grads = local_step_eval(
            stacked[t - 1], source, ref, spec.loss_form, want_grad=True
        )
        tau = cfg.tau0
        converged_t = False
        for _ in range(block_budget):
            t_try = tau
            accepted = False
            k, d = cfg.k_b, cfg.dim
            for _h in range(MAX_TAU_HALVINGS + 1):
                try:
                    cand = _kernels.cayley_step(
                        stacked[t - 1].reshape(k * d, d),
                        grads.reshape(k * d, d),
                        t_try,
                    ).reshape(k, d, d)
                    cand_value = local_step_eval(cand, source, ref, spec.loss_form)[0]
                except np.linalg.LinAlgError:
                    t_try *= 0.5
                    continue
                if cand_value < value:
                    accepted = True
                    break
                t_try *= 0.5
            if not accepted:
                any_stalled = True
                break
            stacked[t - 1] = cand
            reproj += _maintain_manifold(stacked[t - 1 : t])
            prev = value
            value, local_f, grads = local_step_eval(
                stacked[t - 1], source, ref, spec.loss_form, want_grad=True
            )
            loss_curve.append(value)
            chain_states = _kernels.backward_chain(stacked, rho_in)
            fid_curves.append(
                evaluate_chain(
                    chain_states, refs, curve_spec, ones, want_curve=True
                ).fidelity_curve
            )
            tau = min(cfg.tau0, t_try * 2.0)
            if abs(prev - value) < cfg.convergence_eps:
                converged_t = True
                break
        local_fidelities[t - 1] = float(local_f)
        all_converged = all_converged and converged_t

    chain_states = _kernels.backward_chain(stacked, rho_in)
    final_curve = evaluate_chain(
        chain_states, refs, curve_spec, ones, want_curve=True
    ).fidelity_curve
    return _model_from_stacked(stacked, cfg.dim), TrainRecord(
        loss_curve=loss_curve,
        fidelity_curves=fid_curves,
        iters=len(loss_curve),
        converged=all_converged,
        stalled=any_stalled,
        final_fidelity=float(final_curve[0]),
        reprojections=reproj,
        local_fidelities=local_fidelities,
    )


def pc_loss(
    traj: Trajectory, backward_states: Sequence[DensityMatrix], spec: LossSpec
) -> float:
    """Path-constrained loss over already-computed reversal states.

    `backward_states` is indexed like apply_backward's output: entry t
    pairs with the forward state at align_index(t).
    """
    if spec.kind != "pc":
        raise ValueError(f"pc_loss requires kind pc, got {spec.kind}")
    n_steps = len(backward_states) - 1
    if n_steps < 1:
        raise ValueError("backward_states must hold at least two states")
    refs = build_references(traj, n_steps)
    alpha = spec.resolve_alpha(n_steps)
    states = np.stack([s.mat for s in backward_states])
    return evaluate_chain(states, refs, spec, alpha).loss


def target_for_seed(cfg: TrainConfig, seed: int) -> PureState:
    if cfg.target == "haar":
        return random_pure_state(cfg.n_qubits, child_rng(seed, 0))
    return named_state(cfg.target, cfg.n_qubits)


def forward_channels_for_seed(cfg: TrainConfig, seed: int) -> list[Channel]:
    return build_forward_sequence(cfg.schedule, cfg.dim, rng=child_rng(seed, 1))


def trajectory_for_seed(cfg: TrainConfig, seed: int) -> Trajectory:
    return run_forward(target_for_seed(cfg, seed), forward_channels_for_seed(cfg, seed))


@dataclass
class SeedOutcome:
    """Everything recorded for one root seed."""

    seed: int
    final_fidelity: float = float("nan")
    iters: int = 0
    converged: bool = False
    stalled: bool = False
    error: str | None = None
    local_fidelities: list | None = None
    loss_curve: list = field(default_factory=list)
    fidelity_curves: list = field(default_factory=list)
    forward_purity: list = field(default_factory=list)
    forward_entropy_bits: list = field(default_factory=list)
    forward_fidelity_to_origin: list = field(default_factory=list)
    bloch_forward: list | None = None
    bloch_backward: list | None = None
    wall_time: float = 0.0


@dataclass
class RunResult:
    """Aggregate over the configured seeds."""

    config: TrainConfig
    outcomes: tuple
    mean_fidelity: float
    std_fidelity: float
    n_ok: int
    single_sample: bool
    partial: bool
    wall_time: float

    @property
    def strategy(self) -> str:
        return self.config.strategy


def _run_seed(cfg: TrainConfig, seed: int) -> SeedOutcome:
    t0 = time.perf_counter()
    traj = trajectory_for_seed(cfg, seed)
    model_rng = child_rng(seed, 2)
    if cfg.loss.kind == "sqco_step":
        model, rec = train_sqco(traj, cfg, model_rng)
    else:
        model, rec = train_hqto(traj, cfg, model_rng)
    out = SeedOutcome(
        seed=seed,
        final_fidelity=rec.final_fidelity,
        iters=rec.iters,
        converged=rec.converged,
        stalled=rec.stalled,
        local_fidelities=rec.local_fidelities,
        loss_curve=rec.loss_curve,
        fidelity_curves=rec.fidelity_curves,
        forward_purity=list(traj.purity),
        forward_entropy_bits=list(traj.entropy_bits),
        forward_fidelity_to_origin=list(traj.fidelity_to_origin),
        wall_time=time.perf_counter() - t0,
    )
    if cfg.dim == 2:
        back = apply_backward(model, traj.states[-1])
        out.bloch_forward = bloch_rows(traj.states)
        # ordered from the chain input down to the reconstruction
        out.bloch_backward = bloch_rows(list(reversed(back)))
    return out


def run_experiment(cfg: TrainConfig) -> RunResult:
    """Fresh target, channels, and init per seed; sample statistics over seeds."""
    t0 = time.perf_counter()
    outcomes = []
    for seed in cfg.seeds:
        try:
            outcomes.append(_run_seed(cfg, seed))
        except Exception as exc:  # noqa: BLE001 - seed aborts are recorded, not fatal
            outcomes.append(
                SeedOutcome(seed=seed, error=f"{type(exc).__name__}: {exc}")
            )
    ok = [o.final_fidelity for o in outcomes if o.error is None]
    mean = float(np.mean(ok)) if ok else float("nan")
    std = float(np.std(ok, ddof=1)) if len(ok) > 1 else 0.0
    return RunResult(
        config=cfg,
        outcomes=tuple(outcomes),
        mean_fidelity=mean,
        std_fidelity=std,
        n_ok=len(ok),
        single_sample=len(ok) == 1,
        partial=len(ok) < len(cfg.seeds),
        wall_time=time.perf_counter() - t0,
    )


def schedule_to_dict(s: NoiseSchedule) -> dict:
    return {
        "family": s.family,
        "length": s.length,
        "n_ops": s.n_ops,
        "p_max": s.p_max,
        "gamma": s.gamma,
        "dt": s.dt,
        "seed": s.seed,
    }


def schedule_from_dict(d: dict) -> NoiseSchedule:
    return NoiseSchedule(
        family=str(d["family"]),
        length=int(d["length"]),
        n_ops=int(d.get("n_ops", 4)),
        p_max=float(d.get("p_max", 0.8)),
        gamma=float(d.get("gamma", 0.1)),
        dt=float(d.get("dt", 0.1)),
        seed=int(d.get("seed", 0)),
    )


def loss_to_dict(s: LossSpec) -> dict:
    return {
        "kind": s.kind,
        "lambda": s.lam,
        "alpha": list(s.alpha) if s.alpha is not None else None,
        "loss_form": s.loss_form,
    }


def loss_from_dict(d: dict) -> LossSpec:
    alpha = d.get("alpha")
    return LossSpec(
        kind=str(d["kind"]),
        lam=float(d.get("lambda", 0.0)),
        alpha=None if alpha is None else tuple(alpha),
        loss_form=str(d.get("loss_form", "one_minus_F")),
    )


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "n_qubits": cfg.n_qubits,
        "schedule": schedule_to_dict(cfg.schedule),
        "l_b": cfg.l_b,
        "k_b": cfg.k_b,
        "loss": loss_to_dict(cfg.loss),
        "max_iters": cfg.max_iters,
        "convergence_eps": cfg.convergence_eps,
        "tau0": cfg.tau0,
        "seeds": list(cfg.seeds),
        "target": cfg.target,
        "init": cfg.init,
    }


def config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(
        n_qubits=int(d["n_qubits"]),
        schedule=schedule_from_dict(d["schedule"]),
        l_b=int(d["l_b"]),
        k_b=int(d["k_b"]),
        loss=loss_from_dict(d["loss"]),
        max_iters=int(d.get("max_iters", 2000)),
        convergence_eps=float(d.get("convergence_eps", 1e-9)),
        tau0=float(d.get("tau0", 0.05)),
        seeds=tuple(d["seeds"]),
        target=str(d.get("target", "haar")),
        init=str(d.get("init", "haar")),
    )


def result_to_dict(res: RunResult, include_curves: bool = True) -> dict:
    doc = {
        "config": config_to_dict(res.config),
        "strategy": res.strategy,
        "mean_fidelity": res.mean_fidelity,
        "std_fidelity": res.std_fidelity,
        "n_ok": res.n_ok,
        "single_sample": res.single_sample,
        "partial": res.partial,
        "wall_time": res.wall_time,
        "seeds": [],
    }
    for o in res.outcomes:
        row = {
            "seed": o.seed,
            "final_fidelity": o.final_fidelity,
            "iters": o.iters,
            "converged": o.converged,
            "stalled": o.stalled,
            "error": o.error,
            "local_fidelities": o.local_fidelities,
            "forward_purity": o.forward_purity,
            "forward_entropy_bits": o.forward_entropy_bits,
            "forward_fidelity_to_origin": o.forward_fidelity_to_origin,
            "bloch_forward": o.bloch_forward,
            "bloch_backward": o.bloch_backward,
            "wall_time": o.wall_time,
        }
        if include_curves:
            row["loss_curve"] = o.loss_curve
            row["fidelity_curves"] = o.fidelity_curves
        doc["seeds"].append(row)
    return doc


def result_from_dict(doc: dict) -> RunResult:
    cfg = config_from_dict(doc["config"])
    outcomes = []
    for row in doc["seeds"]:
        outcomes.append(
            SeedOutcome(
                seed=int(row["seed"]),
                final_fidelity=float(row["final_fidelity"]),
                iters=int(row["iters"]),
                converged=bool(row["converged"]),
                stalled=bool(row["stalled"]),
                error=row.get("error"),
                local_fidelities=row.get("local_fidelities"),
                loss_curve=row.get("loss_curve", []),
                fidelity_curves=row.get("fidelity_curves", []),
                forward_purity=row.get("forward_purity", []),
                forward_entropy_bits=row.get("forward_entropy_bits", []),
                forward_fidelity_to_origin=row.get("forward_fidelity_to_origin", []),
                bloch_forward=row.get("bloch_forward"),
                bloch_backward=row.get("bloch_backward"),
                wall_time=float(row.get("wall_time", 0.0)),
            )
        )
    return RunResult(
        config=cfg,
        outcomes=tuple(outcomes),
        mean_fidelity=float(doc["mean_fidelity"]),
        std_fidelity=float(doc["std_fidelity"]),
        n_ok=int(doc["n_ok"]),
        single_sample=bool(doc["single_sample"]),
        partial=bool(doc["partial"]),
        wall_time=float(doc["wall_time"]),
    )


__all__ = [
    "TARGET_KINDS",
    "INIT_KINDS",
    "LossSpec",
    "align_index",
    "TrainConfig",
    "TrainRecord",
    "train_hqto",
    "train_sqco",
    "pc_loss",
    "target_for_seed",
    "forward_channels_for_seed",
    "trajectory_for_seed",
    "SeedOutcome",
    "RunResult",
    "run_experiment",
    "schedule_to_dict",
    "schedule_from_dict",
    "loss_to_dict",
    "loss_from_dict",
    "config_to_dict",
    "config_from_dict",
    "result_to_dict",
    "result_from_dict",
]
