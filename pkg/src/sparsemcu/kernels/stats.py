from __future__ import annotations

from dataclasses import dataclass


@dataclass
class OpCounter:
    """Work counters a kernel adds to: multiply-accumulates and exp evaluations."""

    macs: int = 0
    exp_calls: int = 0

    def add(self, macs: int = 0, exp_calls: int = 0) -> None:
        self.macs += int(macs)
        self.exp_calls += int(exp_calls)
