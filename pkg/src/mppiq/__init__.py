"""Sampling-based MPC with a learned terminal soft Q-function.

An MPPI-style planner drives both online control and the generation of
fitted-Q value targets; plans stored in the replay buffer warm-start the
target computation so its cost is amortized across training.
"""

from .buffer import ReplayBuffer, Transition
from .ensemble import DynamicsEnsemble, ExactModel, ensemble_train_step, sample_member
from .envs import LqrSolution, env_reset, env_step, get_env, solve_lqr
from .nets import (
    GradientBundle,
    MlpParams,
    OptimizerState,
    backward,
    forward,
    init_mlp,
    optimizer_step,
)
from .planner import (
    PlannerConfig,
    PlanResult,
    compute_weights,
    plan,
    plan_batch,
    rollout_costs,
    shift_plan,
    update_controls,
    zero_plan,
)
from .softq import (
    SoftQFunction,
    build_targets,
    discrete_soft_value_oracle,
    q_update,
    q_value,
)
from .trainer import (
    Agent,
    TrainConfig,
    evaluate,
    load_checkpoint,
    random_policy_baseline,
    run_sps_benchmark,
    run_training,
    save_checkpoint,
)

__version__ = "0.1.0"
