from motionlab.gptcore.autodiff import Tensor
from motionlab.gptcore.discretize import Discretizer
from motionlab.gptcore.model import ModelConfig, init_params, forward, loss_and_grads, swap_head
from motionlab.gptcore.checkpoint import ModelCheckpoint, save_checkpoint, load_checkpoint

__all__ = [
    "Tensor",
    "Discretizer",
    "ModelConfig",
    "init_params",
    "forward",
    "loss_and_grads",
    "swap_head",
    "ModelCheckpoint",
    "save_checkpoint",
    "load_checkpoint",
]
