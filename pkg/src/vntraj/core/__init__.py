"""Dense float64 tensors with reverse-mode gradients, Adam, and checkpoints."""

from vntraj.core.checkpoint import CheckpointError, load as load_checkpoint, save as save_checkpoint
from vntraj.core.params import LrSchedule, ParamStore, adam_step, backward, lr_at
from vntraj.core.tensor import NumericalError, Tensor

__all__ = [
    "CheckpointError",
    "LrSchedule",
    "NumericalError",
    "ParamStore",
    "Tensor",
    "adam_step",
    "backward",
    "load_checkpoint",
    "lr_at",
    "save_checkpoint",
]
