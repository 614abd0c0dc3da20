from motionlab.experts.behaviors import (
    BehaviorSpec,
    KnotTrack,
    builtin_behaviors,
    TRAIN_BEHAVIOR_NAMES,
    VALIDATION_BEHAVIOR_NAMES,
)
from motionlab.experts.rollouts import Episode, expert_action, generate_rollout, build_dataset

__all__ = [
    "BehaviorSpec",
    "KnotTrack",
    "builtin_behaviors",
    "TRAIN_BEHAVIOR_NAMES",
    "VALIDATION_BEHAVIOR_NAMES",
    "Episode",
    "expert_action",
    "generate_rollout",
    "build_dataset",
]
