from . import autodiff as ad
from .autodiff import Tape, Tensor, grad, value_and_grad
from .nn import Mlp, init_mlp, mlp_forward
from .optim import AdamState, adam_init, adam_step, optimizer_step
from .rng import Rng, derive_seed, rng_normal, rng_uniform

__all__ = [
    "ad",
    "Tape",
    "Tensor",
    "grad",
    "value_and_grad",
    "Mlp",
    "init_mlp",
    "mlp_forward",
    "AdamState",
    "adam_init",
    "adam_step",
    "optimizer_step",
    "Rng",
    "derive_seed",
    "rng_normal",
    "rng_uniform",
]
