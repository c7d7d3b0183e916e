"""
Minibatch SGD with Nesterov momentum.

Update rule, applied elementwise to every parameter array p with gradient g
and velocity v (the form used by common deep-learning frameworks):

    v <- mu * v - lr * g
    p <- p + mu * v - lr * g

With mu = 0 this is plain SGD (p <- p - lr * g). Parameters and velocities
are updated in place; each state owns one scratch buffer per parameter so a
step allocates nothing.
"""
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from utils.errors import InvalidArgumentError


@dataclass
class OptimizerState:
    """Velocity buffers (one per parameter array) plus step hyperparameters."""
    velocity: List[np.ndarray]
    learning_rate: float
    momentum: float
    scratch: List[np.ndarray] = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def zeros_like(
        cls,
        params: Sequence[np.ndarray],
        learning_rate: float,
        momentum: float,
    ) -> "OptimizerState":
        return cls(
            velocity=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            momentum=momentum,
        )

    def _buffers(self) -> List[np.ndarray]:
        if len(self.scratch) != len(self.velocity) or any(
            s.shape != v.shape or s.dtype != v.dtype for s, v in zip(self.scratch, self.velocity)
        ):
            self.scratch = [np.empty_like(v) for v in self.velocity]
        return self.scratch


def sgd_nesterov_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
) -> tuple[Sequence[np.ndarray], OptimizerState]:
    """Apply one Nesterov step in place; returns (params, state) for chaining."""
    if not (len(params) == len(grads) == len(state.velocity)):
        raise InvalidArgumentError(
            f"got {len(params)} params, {len(grads)} grads, {len(state.velocity)} velocities"
        )
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if not (p.shape == g.shape == v.shape):
            raise InvalidArgumentError(
                f"parameter {i}: shapes param {p.shape}, grad {g.shape}, velocity {v.shape} differ"
            )

    lr, mu = state.learning_rate, state.momentum
    for p, g, v, buf in zip(params, grads, state.velocity, state._buffers()):
        np.multiply(g, lr, out=buf, casting="unsafe")   # buf = lr * g
        v *= mu
        v -= buf
        p -= buf
        np.multiply(v, mu, out=buf)
        p += buf
    return params, state
