"""AdamW with decoupled weight decay and the one-cycle learning-rate schedule."""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from semfusion.config import ONE_CYCLE_DIV_END, ONE_CYCLE_DIV_START
from semfusion.errors import OptimizerError, ScheduleError
from semfusion.tensor import Tensor


class OneCycleSchedule(BaseModel):
    """Linear warmup from max_lr/25 to max_lr, then cosine decay to max_lr/1e4."""

    model_config = ConfigDict(frozen=True)

    max_lr: float = Field(gt=0)
    total_steps: int = Field(gt=0)
    warmup_fraction: float = Field(default=0.3, gt=0, lt=1)

    @property
    def initial_lr(self) -> float:
        return self.max_lr / ONE_CYCLE_DIV_START

    @property
    def final_lr(self) -> float:
        return self.max_lr / ONE_CYCLE_DIV_END

    @property
    def warmup_steps(self) -> int:
        return min(self.total_steps, max(1, round(self.warmup_fraction * self.total_steps)))


def one_cycle_lr(schedule: OneCycleSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ScheduleError(f"step {step} outside [0, {schedule.total_steps}]")
    peak = schedule.max_lr
    warmup = schedule.warmup_steps
    if step == 0:
        return schedule.initial_lr
    if step <= warmup:
        remaining = (warmup - step) / warmup
        return peak - (peak - schedule.initial_lr) * remaining
    progress = (step - warmup) / (schedule.total_steps - warmup)
    return schedule.final_lr + (peak - schedule.final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: List[np.ndarray] = field(default_factory=list)
    exp_avg_sq: List[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamWState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """
    One AdamW update, in place on ``params[i].data``.

    Decay is applied to the weights before the adaptive step, scaled by lr.
    A ``None`` gradient is treated as zero.
    """
    if not lr > 0:
        raise OptimizerError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise OptimizerError(f"{len(params)} params but {len(grads)} gradients")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p.data) for p in params]
        state.exp_avg_sq = [np.zeros_like(p.data) for p in params]

    beta1, beta2 = betas
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step

    for i, param in enumerate(params):
        grad = np.zeros_like(param.data) if grads[i] is None else grads[i]
        param.data *= 1.0 - lr * weight_decay
        state.exp_avg[i] = beta1 * state.exp_avg[i] + (1.0 - beta1) * grad
        state.exp_avg_sq[i] = beta2 * state.exp_avg_sq[i] + (1.0 - beta2) * grad * grad
        denom = np.sqrt(state.exp_avg_sq[i] / bias2) + eps
        param.data -= lr * (state.exp_avg[i] / bias1) / denom


class AdamW:
    """Optimizer over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self, lr: float) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr,
                   self.betas, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None
