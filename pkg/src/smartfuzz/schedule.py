"""Power schedule, deferred parsing and seed selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .cracker import crack

HALF = Fraction(1, 2)


@dataclass(frozen=True)
class ScheduleConfig:
    max_energy: int = 1024
    defer_epsilon: float = 60.0

    def __post_init__(self):
        if self.max_energy < 2:
            raise ValueError("max_energy must be at least 2")
        if not self.defer_epsilon > 0:
            raise ValueError("defer_epsilon must be positive")


@dataclass
class SeedEntry:
    id: int
    data: bytes
    exec_time: float = 1.0  # microseconds
    depth: int = 0
    found_at: float = 0.0
    fuzz_rounds: int = 0
    cracked: Optional[tuple] = None  # (VirtualStructure, Fraction)

    @property
    def vs(self):
        return None if self.cracked is None else self.cracked[0]

    @property
    def validity(self) -> Optional[Fraction]:
        return None if self.cracked is None else self.cracked[1]


@dataclass
class CampaignClock:
    now: float = 0.0
    last_new_path_at: float = 0.0

    @property
    def since_new_path(self) -> float:
        return max(0.0, self.now - self.last_new_path_at)


@dataclass
class CorpusStats:
    avg_exec_time: float
    avg_len: float


def _clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def base_energy(seed: SeedEntry, stats: CorpusStats, cfg: ScheduleConfig = ScheduleConfig()) -> int:
    """Favor fast, small and deep seeds, scaled around 100."""
    speed = _clamp(stats.avg_exec_time / seed.exec_time, 0.1, 10.0) if seed.exec_time > 0 else 10.0
    size = _clamp(stats.avg_len / len(seed.data), 0.25, 4.0) if seed.data else 4.0
    depth = 1.0 + 0.1 * min(seed.depth, 10)
    score = math.floor(100.0 * speed * size * depth + 0.5)
    return int(_clamp(score, 1, cfg.max_energy))


def validity_energy(p: int, v: Optional[Fraction], cfg: ScheduleConfig = ScheduleConfig()) -> int:
    """Double the energy of seeds that are at least half valid, capped at U.

    ``v`` is None for seeds that were never cracked; they keep ``p``.
    """
    if v is None or v < HALF:
        return p
    if 2 * p <= cfg.max_energy:
        return 2 * p
    return cfg.max_energy


def deferred_parse_probability(t: float, epsilon: float) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return min(max(t, 0.0) / epsilon, 1.0)


def maybe_crack(seed: SeedEntry, clock: CampaignClock, cfg: ScheduleConfig, rng, spec) -> SeedEntry:
    """Crack ``seed`` with probability min(t/eps, 1); results are cached for good."""
    if seed.cracked is not None or spec is None:
        return seed
    prob = deferred_parse_probability(clock.since_new_path, cfg.defer_epsilon)
    if prob > 0 and rng.random() < prob:
        seed.cracked = crack(spec, seed.data)
    return seed


@dataclass
class SeedQueue:
    """Corpus in insertion order with a round-robin cursor."""

    entries: list = field(default_factory=list)
    cursor: int = 0

    def add(self, entry: SeedEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def choose_next(queue: SeedQueue) -> SeedEntry:
    if not queue.entries:
        raise IndexError("empty seed queue")
    entry = queue.entries[queue.cursor % len(queue.entries)]
    queue.cursor = queue.cursor % len(queue.entries) + 1
    return entry
