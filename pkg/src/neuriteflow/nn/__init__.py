from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import Mlp, mlp_forward
from .optim import AdamState, LrSchedule, adam_step
from .tensor import Tensor, concat, csr_matmul

__all__ = [
    "Tensor",
    "concat",
    "csr_matmul",
    "Mlp",
    "mlp_forward",
    "AdamState",
    "LrSchedule",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]
