"""The four epoch-indexed KL-weight schedules.

constant1      beta = 1 everywhere.
constant0      linear ramp 1 -> 0 over the first warmup_epochs, then 0.
dyn_plateau0   sawtooth: beta hits 1 every cycle_length epochs and descends
               linearly to 0; the descent shortens as training progresses, so
               the zero plateau inside each cycle grows. After tail_start the
               schedule is constant 0.
dyn_plateau1   identical to dyn_plateau0 before tail_start, constant 1 after.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

SCHEDULE_KINDS = ("constant1", "constant0", "dyn_plateau0", "dyn_plateau1")


@dataclass(frozen=True)
class BetaSchedule:
    kind: str
    total_epochs: int
    warmup_epochs: int = 1000     # constant0 ramp length
    cycle_length: int = 80        # dynamic kinds: spacing of the beta=1 anchors
    tail_start: int | None = None  # dynamic kinds: default total - total//8
    min_descent: int = 4          # floor on the per-cycle descent length

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if self.warmup_epochs < 1 or self.cycle_length < 1 or self.min_descent < 1:
            raise ConfigError("schedule counts must be >= 1")
        if self.tail_start is not None and not 0 <= self.tail_start <= self.total_epochs:
            raise ConfigError(
                f"tail_start {self.tail_start} outside [0, {self.total_epochs}]"
            )

    @property
    def resolved_tail_start(self) -> int:
        if self.tail_start is not None:
            return self.tail_start
        return self.total_epochs - self.total_epochs // 8

    def descent_length(self, cycle: int) -> int:
        """Epochs the beta value needs to reach 0 in the given cycle."""
        n_cycles = max(1, self.resolved_tail_start // self.cycle_length)
        shrunk = math.floor(self.cycle_length * (1.0 - cycle / n_cycles) + 0.5)
        return max(self.min_descent, shrunk)


def beta_at(schedule: BetaSchedule, epoch: int) -> float:
    """beta for one epoch; piecewise linear, always in [0, 1]."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    if schedule.kind == "constant1":
        return 1.0
    if schedule.kind == "constant0":
        if epoch >= schedule.warmup_epochs:
            return 0.0
        return 1.0 - epoch / schedule.warmup_epochs
    # dynamic kinds
    tail = schedule.resolved_tail_start
    if epoch >= tail:
        return 0.0 if schedule.kind == "dyn_plateau0" else 1.0
    cycle, pos = divmod(epoch, schedule.cycle_length)
    return max(0.0, 1.0 - pos / schedule.descent_length(cycle))


def schedule_table(schedule: BetaSchedule, stride: int) -> list[tuple[int, float]]:
    """Sampled (epoch, beta) trace for persistence and plotting."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return [(e, beta_at(schedule, e)) for e in range(0, schedule.total_epochs, stride)]
