"""SGD with momentum and coupled weight decay.

Update rule, per parameter:

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

Weight decay enters the velocity together with the gradient (classic
heavy-ball convention).  Velocities start at zero on first use and are keyed
by parameter name so they can travel inside checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autograd import Tensor
from .errors import ContractError


@dataclass
class SgdState:
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def drop(self, name: str) -> None:
        self.velocity.pop(name, None)


def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: SgdState) -> None:
    """Apply one update in place to every named parameter."""
    for name, param in params.items():
        if name not in grads:
            raise ContractError(f"missing gradient for parameter {name!r}")
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.data.shape:
            raise ContractError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name!r} of shape {param.data.shape}"
            )
        vel = state.velocity.get(name)
        if vel is None:
            vel = np.zeros_like(param.data)
        vel = state.momentum * vel + grad + state.weight_decay * param.data
        state.velocity[name] = vel
        param.data = param.data - state.lr * vel
        if not np.all(np.isfinite(param.data)):
            raise ValueError(f"parameter {name!r} became non-finite after update")
