"""Adaptive-basis actor-critic learners with exact small-MDP oracles."""

__version__ = "0.1.0"

from .algorithms import (
    Checkpoint,
    EstimatorBank,
    LearnerState,
    TransitionSample,
    abbe_step,
    abpbe_estimator_step,
    abpbe_step,
    abtd_step,
    average_reward_step,
    load_checkpoint,
    save_checkpoint,
    td_error,
)
from .basis import CosineBasis, RbfBasis, eval_feature_jacobian, eval_features, feature_matrix
from .environments import (
    BlockRbfPolicy,
    GarnetInstance,
    GarnetSpec,
    MountainCarParams,
    MountainCarState,
    generate_ergodic_garnet,
    generate_garnet,
    garnet_actor_features,
    mountain_car_reset,
    mountain_car_step,
    sample_trajectory,
)
from .errors import *  # noqa: F401,F403
from .mdp import (
    FiniteMdp,
    SoftmaxPolicy,
    bellman_apply,
    exact_objectives,
    exact_policy_gradient,
    induced_chain,
    mean_squared_td_error,
    projection_matrix,
    td_matrices,
)
from .runner import GarnetLearner, MountainCarLearner, SarsaLearner
from .schedule import StepSchedule, default_schedule, validate_schedule
