"""Wall-clock accumulators for named phases."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager


class PhaseClock:
    """Sums ``perf_counter`` time per phase name. Phases must not nest."""

    def __init__(self):
        self.totals: dict[str, float] = defaultdict(float)
        self.counts: dict[str, int] = defaultdict(int)

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - start
            self.counts[name] += 1

    def total(self) -> float:
        return float(sum(self.totals.values()))


class NullClock(PhaseClock):
    @contextmanager
    def phase(self, name: str):
        yield
