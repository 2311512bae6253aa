"""Edge coverage maps, hit-count buckets, novelty detection and corpus minimization.

Maps follow the AFL layout: 64 KiB of saturating 8-bit counters indexed by
``(prev_loc >> 1) ^ cur_loc``. Because in-process targets touch only a handful
of cells per run, every map also remembers which cells it touched so that
bucketing and novelty checks never scan the full array.
"""

from __future__ import annotations

import enum
from typing import Iterable, Optional

MAP_SIZE = 1 << 16


def _bucket(count: int) -> int:
    if count == 0:
        return 0
    if count <= 2:
        return count
    if count == 3:
        return 4
    if count <= 7:
        return 8
    if count <= 15:
        return 16
    if count <= 31:
        return 32
    if count <= 127:
        return 64
    return 128


COUNT_CLASS = bytes(_bucket(i) for i in range(256))


class CoverageMap:
    __slots__ = ("cells", "touched")

    def __init__(self):
        self.cells = bytearray(MAP_SIZE)
        self.touched = []

    @classmethod
    def from_counts(cls, counts: dict) -> "CoverageMap":
        m = cls()
        for cell, n in counts.items():
            if n:
                m.cells[cell] = min(n, 255)
                m.touched.append(cell)
        return m

    def reset(self) -> None:
        cells = self.cells
        for i in self.touched:
            cells[i] = 0
        self.touched = []

    def items(self):
        """(cell, value) for every nonzero cell, in first-touch order."""
        cells = self.cells
        return [(i, cells[i]) for i in self.touched if cells[i]]

    def pairs(self) -> frozenset:
        return frozenset(self.items())

    def __len__(self) -> int:
        return sum(1 for i in self.touched if self.cells[i])


def record_edge(cov: CoverageMap, prev_loc: int, cur_loc: int) -> None:
    idx = ((prev_loc >> 1) ^ cur_loc) & (MAP_SIZE - 1)
    v = cov.cells[idx]
    if v == 0:
        cov.touched.append(idx)
        cov.cells[idx] = 1
    elif v < 255:
        cov.cells[idx] = v + 1


class Tracer:
    """Edge reporter handed to targets; ``hit(loc)`` records prev -> loc."""

    __slots__ = ("map", "prev", "events")

    def __init__(self, cov: Optional[CoverageMap] = None):
        self.map = cov if cov is not None else CoverageMap()
        self.prev = 0
        self.events = 0

    def hit(self, loc: int) -> None:
        cov = self.map
        idx = ((self.prev >> 1) ^ loc) & 0xFFFF
        v = cov.cells[idx]
        if v == 0:
            cov.touched.append(idx)
            cov.cells[idx] = 1
        elif v < 255:
            cov.cells[idx] = v + 1
        self.prev = loc
        self.events += 1


def classify_counts(cov: CoverageMap) -> CoverageMap:
    """Return a new map with raw hit counts replaced by their bucket."""
    out = CoverageMap()
    src, dst = cov.cells, out.cells
    for i in cov.touched:
        v = src[i]
        if v:
            dst[i] = COUNT_CLASS[v]
            out.touched.append(i)
    return out


class Novelty(enum.IntEnum):
    NONE = 0
    NEW_BUCKET = 1
    NEW_EDGE = 2


class VirginMap:
    """Global record of (cell, bucket) observations not seen yet."""

    __slots__ = ("cells", "edges_seen")

    def __init__(self):
        self.cells = bytearray(b"\xff" * MAP_SIZE)
        self.edges_seen = 0

    def density_pct(self) -> float:
        return 100.0 * self.edges_seen / MAP_SIZE

    def copy(self) -> "VirginMap":
        v = VirginMap()
        v.cells[:] = self.cells
        v.edges_seen = self.edges_seen
        return v


def has_new_bits(virgin: VirginMap, bucketed: CoverageMap) -> Novelty:
    """Compare a bucketed trace with the virgin map and clear what it covers."""
    result = Novelty.NONE
    vcells, cells = virgin.cells, bucketed.cells
    for i in bucketed.touched:
        b = cells[i]
        v = vcells[i]
        if b & v:
            if v == 0xFF:
                result = Novelty.NEW_EDGE
                virgin.edges_seen += 1
            elif result == Novelty.NONE:
                result = Novelty.NEW_BUCKET
            vcells[i] = v & ~b & 0xFF
    return result


def cmin(executions: Iterable, lengths: Optional[dict] = None) -> list:
    """Greedy set cover over (cell, bucket) pairs.

    ``executions`` holds ``(input_id, bucketed_map)`` pairs; a map may also be
    given directly as a set of pairs. Each step keeps the input covering the
    most still-uncovered pairs, preferring shorter inputs and then lower ids.
    """
    lengths = lengths or {}
    cover = {}
    for input_id, m in executions:
        pairs = m.pairs() if isinstance(m, CoverageMap) else frozenset(m)
        cover[input_id] = cover.get(input_id, frozenset()) | pairs
    remaining = set().union(*cover.values()) if cover else set()
    chosen = []
    candidates = dict(cover)
    while remaining:
        best = min(
            candidates,
            key=lambda k: (-len(candidates[k] & remaining), lengths.get(k, 0), k),
        )
        gain = candidates.pop(best) & remaining
        if not gain:
            break
        chosen.append(best)
        remaining -= gain
    return chosen
