"""Positive-threshold step schedule and warmup + cosine learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class LambdaSchedule:
    initial: float = 0.95
    step_decrement: float = 0.05
    decay_epochs: tuple[int, ...] = (2, 15)  # 1-indexed; new value applies from the next epoch
    floor: float = -1.0

    def __post_init__(self):
        if not 0 < self.initial <= 1:
            raise ValueError(f"initial lambda must lie in (0, 1], got {self.initial}")
        if not self.step_decrement > 0:
            raise ValueError("step_decrement must be positive")
        object.__setattr__(self, "decay_epochs", tuple(sorted(self.decay_epochs)))


def default_decay_epochs(total_epochs: int) -> tuple[int, ...]:
    """Boundaries at 2/30 and 15/30 of the run, rounded half up."""
    return tuple(max(1, math.floor(total_epochs * f + 0.5)) for f in (2 / 30, 15 / 30))


def lambda_at_epoch(sched: LambdaSchedule, epoch: int) -> float:
    if epoch < 1:
        raise ValueError("epochs are 1-indexed")
    drops = sum(1 for b in sched.decay_epochs if b < epoch)
    return max(sched.initial - sched.step_decrement * drops, sched.floor)


@dataclass(frozen=True)
class LrSchedule:
    init_lr: float = 4e-6
    max_lr: float = 1.6e-3
    warmup_epochs: int = 2
    total_epochs: int = 30
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0 < self.init_lr <= self.max_lr:
            raise ValueError("need 0 < init_lr <= max_lr")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")


def lr_at_step(sched: LrSchedule, step: int, steps_per_epoch: int) -> float:
    """Linear warmup from ``init_lr`` reaching ``max_lr`` at the first
    post-warmup step, then cosine decay reaching ``min_lr`` on the final
    step of the run."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = sched.warmup_epochs * steps_per_epoch
    last = sched.total_epochs * steps_per_epoch - 1
    if step < warmup:
        return sched.init_lr + (sched.max_lr - sched.init_lr) * step / warmup
    progress = min(1.0, (step - warmup) / max(last - warmup, 1))
    return sched.min_lr + 0.5 * (sched.max_lr - sched.min_lr) * (1.0 + math.cos(math.pi * progress))

