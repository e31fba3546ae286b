"""
Stochastic gradient descent with momentum and a step learning-rate schedule.
"""

from typing import List, Sequence

import numpy as np

from .errors import GradientError
from .tensor import Tensor


class SGD:
    """
    SGD with heavy-ball momentum.

    ``v <- momentum * v + grad``, then ``p <- p - lr * v``; gradients are
    cleared after every step.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.9):
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float = -1.0) -> None:
        rate = self.lr if lr < 0 else lr
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise GradientError(
                f"{len(missing)} parameter(s) have no gradient, first index {missing[0]}"
            )
        for p, v in zip(self.params, self.velocity):
            assert p.grad is not None
            v *= self.momentum
            v += p.grad
            p.data = p.data - rate * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class StepSchedule:
    """
    Base learning rate multiplied by ``factor`` at each decay point.

    Decay points are fractions of the total iteration count.
    """

    def __init__(
        self,
        base_lr: float,
        total: int,
        decay_points: Sequence[float] = (0.75, 0.92),
        factor: float = 0.1,
    ):
        self.base_lr = base_lr
        self.milestones = [int(round(f * total)) for f in decay_points]
        self.factor = factor

    def __call__(self, iteration: int) -> float:
        passed = sum(1 for m in self.milestones if iteration >= m)
        return self.base_lr * self.factor**passed
