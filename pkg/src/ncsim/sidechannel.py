"""Flush+Reload receiver over the simulated L1D."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .isa import ORACLE_STRIDE, ORACLE_VA
from .pipeline import Core
from .vmem import PAGE_MASK

SLOTS = 256
# Physical line used for calibration; never mapped by the scenarios.
SCRATCH_PADDR = 0xFFFF_F000


class CalibrationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleArray:
    base: int = ORACLE_VA
    stride: int = ORACLE_STRIDE
    slots: int = SLOTS
    context: int = 0

    def __post_init__(self):
        if self.base & PAGE_MASK:
            raise ValueError("oracle base must be page aligned")
        if self.stride % 4096:
            raise ValueError("oracle stride must be a whole number of pages")

    def slot_vaddr(self, i: int) -> int:
        return self.base + i * self.stride

    def map_into(self, core: Core, first_phys_page: int) -> None:
        for i in range(self.slots):
            core.map_page(self.context, self.slot_vaddr(i), first_phys_page + i * (self.stride // 4096))

    def paddrs(self, core: Core) -> list[int]:
        return [core.translate(self.context, self.slot_vaddr(i)) for i in range(self.slots)]


@dataclass
class SignalHistogram:
    latencies: list[int]
    threshold: int
    order: list[int] = field(default_factory=list)

    @property
    def hot_slots(self) -> list[int]:
        return [i for i, lat in enumerate(self.latencies) if lat < self.threshold]

    def to_csv(self) -> str:
        hot = set(self.hot_slots)
        rows = ["slot,latency,is_hot"]
        rows += [f"{i},{lat},{int(i in hot)}" for i, lat in enumerate(self.latencies)]
        return "\n".join(rows) + "\n"


def flush_oracle(core: Core, oracle: OracleArray = OracleArray(),
                 paddrs: Optional[list[int]] = None) -> None:
    """``paddrs`` may carry ``oracle.paddrs(core)`` precomputed by a caller that loops."""
    core.cache.flush_lines(paddrs if paddrs is not None else oracle.paddrs(core))


def probe_order(seed: int, slots: int = SLOTS) -> list[int]:
    order = list(range(slots))
    random.Random(seed).shuffle(order)
    return order


def reload_and_classify(core: Core, oracle: OracleArray = OracleArray(),
                        threshold: Optional[int] = None, seed: int = 0,
                        paddrs: Optional[list[int]] = None) -> SignalHistogram:
    """Time every slot in a seeded random order, flushing each line right after
    its probe so that probing cannot evict a slot still waiting to be timed."""
    if threshold is None:
        threshold = calibrate_threshold(core)
    order = probe_order(seed, oracle.slots)
    if paddrs is None:
        paddrs = oracle.paddrs(core)
    timed = core.cache.reload_lines([paddrs[i] for i in order])
    latencies = [0] * oracle.slots
    for i, (lat, _) in zip(order, timed):
        latencies[i] = lat
    return SignalHistogram(latencies, threshold, order)


def calibrate_threshold(core: Core, samples: int = 1000) -> int:
    """Midpoint between the slowest hit and the fastest miss on a scratch line.

    When the two samples overlap but their means differ, the midpoint of the
    means is used instead.
    """
    cache = core.cache
    hits, misses = [], []
    for _ in range(samples):
        cache.flush_line(SCRATCH_PADDR)
        misses.append(cache.access(SCRATCH_PADDR)[0])
        hits.append(cache.access(SCRATCH_PADDR)[0])
    cache.flush_line(SCRATCH_PADDR)
    if max(hits) < min(misses):
        return (max(hits) + min(misses) + 1) // 2
    mean_hit = sum(hits) / len(hits)
    mean_miss = sum(misses) / len(misses)
    if mean_hit >= mean_miss:
        raise CalibrationFailed(
            f"hit and miss latencies are indistinguishable (mean {mean_hit:.1f} vs {mean_miss:.1f})")
    return int(round((mean_hit + mean_miss) / 2))


@dataclass(frozen=True)
class Decoded:
    value: Optional[int]
    votes: int
    rounds: int

    @property
    def confidence(self) -> float:
        return self.votes / self.rounds if self.rounds else 0.0


def majority_decode(histograms: Iterable[SignalHistogram]) -> Decoded:
    """Per-slot hit counting across rounds; ties go to the lowest slot index."""
    counts: Counter = Counter()
    rounds = 0
    for h in histograms:
        rounds += 1
        counts.update(h.hot_slots)
    if not counts:
        return Decoded(None, 0, rounds)
    best = max(counts.values())
    value = min(slot for slot, c in counts.items() if c == best)
    return Decoded(value, best, rounds)
