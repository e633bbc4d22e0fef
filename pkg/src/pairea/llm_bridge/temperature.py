"""Adaptive sampling temperature driven by stagnation."""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class TemperatureState:
    """Temperature rises by ``step`` for every ``interval`` generations without
    improvement of the best tour, up to ``cap``; an improvement resets it."""

    base: float = 1.0
    stagnation: int = 0
    step: float = 0.05
    interval: int = 20
    cap: float = 2.0

    @property
    def current(self) -> float:
        return min(self.cap, self.base + self.step * (self.stagnation // self.interval))


def advance_temperature(state: TemperatureState, improved: bool) -> TemperatureState:
    return replace(state, stagnation=0 if improved else state.stagnation + 1)
