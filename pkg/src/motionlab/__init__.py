"""Desk-scale motion-learning pipeline: a planar biped simulator, scripted
experts that generate rollout datasets, an autoregressive sequence model with
its own gradient engine, pretrain/fine-tune training loops, motion-completion
rollouts, and a motion-prediction metric suite.
"""

__version__ = "0.1.0"

from motionlab.errors import (
    MotionLabError,
    LimitViolationError,
    NumericError,
    FormatError,
    DimensionError,
)

__all__ = [
    "MotionLabError",
    "LimitViolationError",
    "NumericError",
    "FormatError",
    "DimensionError",
]
