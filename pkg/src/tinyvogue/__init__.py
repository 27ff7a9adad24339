"""tinyvogue: a desk-scale GRPO trainer with visual-uncertainty-guided
exploration (dual-branch rollouts, symmetric-KL uncertainty bonuses,
annealed branch sampling) over a tiny image-conditioned policy on
synthetic verifiable tasks."""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    Tape,
    Tensor,
    apply_primitive,
    backward,
    check_gradients,
    constant,
    param,
    primitive_kinds,
    zero_grads,
)
from .errors import (  # noqa: F401
    CheckpointError,
    ConfigError,
    ContractError,
    NumericError,
    OracleError,
    ShapeError,
    TapeReuseError,
    TinyvogueError,
)
from .optim import AdamW, AdamWState, adamw_step  # noqa: F401
from .rng import MIXER_NAME, RngStream, draw  # noqa: F401
from .augment import AugmentSpec, apply_named_transform, perturb  # noqa: F401
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint  # noqa: F401
from .config import (  # noqa: F401
    EvalConfig,
    GrpoConfig,
    OptimConfig,
    RunConfig,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
)
from .evalkit import EvalReport, evaluate_suite, pass_at_k  # noqa: F401
from .grpo import (  # noqa: F401
    clipped_surrogate,
    grpo_train_step,
    normalize_advantages,
    token_ratios,
)
from .harness import (  # noqa: F401
    compare_algorithms,
    plot_runs,
    run_ablation,
    run_training,
)
from .policy import PolicyConfig, Response, init_policy, sample_response  # noqa: F401
from .tasks import EnvConfig, RewardBreakdown, TaskInstance, generate_task, verify  # noqa: F401
from .vogue import (  # noqa: F401
    ShapingConfig,
    TrainState,
    TrainStreams,
    anneal_p,
    forward_kl,
    init_state,
    select_branch,
    symmetric_kl,
    visual_uncertainty,
    vogue_train_step,
)
