"""Channel-constrained Markovian quantum diffusion.

Forward diffusion pushes density matrices toward the maximally mixed
state through fixed Kraus channels; a trainable backward chain of Kraus
channels, optimized on the Stiefel manifold, learns to reverse it.
"""

from .channels import (
    DepolarizingChannel,
    KrausChannel,
    LindbladSpec,
    NoiseSchedule,
    apply,
    build_forward_sequence,
    depolarizing_channel,
    haar_random_channel,
    lindblad_step_channel,
    load_channels,
    save_channels,
    stinespring_apply,
    verify_cptp,
)
from .diffusion import Trajectory, near_mixed_check, run_forward
from .losses import LossSpec, align_index
from .states import (
    DensityMatrix,
    PureState,
    bloch_vector,
    fidelity,
    named_state,
    purity,
    random_pure_state,
    von_neumann_entropy,
)
from .stiefel import (
    BackwardModel,
    StiefelPoint,
    apply_backward,
    cayley_update,
    fd_oracle,
    identity_backward,
    init_backward,
    load_checkpoint,
    loss_gradient,
    save_checkpoint,
)
from .training import (
    RunResult,
    SeedOutcome,
    TrainConfig,
    TrainRecord,
    pc_loss,
    run_experiment,
    train_hqto,
    train_sqco,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "PureState",
    "DensityMatrix",
    "fidelity",
    "purity",
    "von_neumann_entropy",
    "bloch_vector",
    "random_pure_state",
    "named_state",
    "KrausChannel",
    "DepolarizingChannel",
    "LindbladSpec",
    "NoiseSchedule",
    "verify_cptp",
    "apply",
    "stinespring_apply",
    "depolarizing_channel",
    "haar_random_channel",
    "lindblad_step_channel",
    "build_forward_sequence",
    "save_channels",
    "load_channels",
    "Trajectory",
    "run_forward",
    "near_mixed_check",
    "LossSpec",
    "align_index",
    "StiefelPoint",
    "BackwardModel",
    "init_backward",
    "identity_backward",
    "apply_backward",
    "cayley_update",
    "loss_gradient",
    "fd_oracle",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "TrainRecord",
    "train_sqco",
    "train_hqto",
    "pc_loss",
    "SeedOutcome",
    "RunResult",
    "run_experiment",
]
