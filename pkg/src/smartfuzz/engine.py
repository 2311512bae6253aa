"""The fuzzing campaign loop, execution harness, crash triage and statistics.

Campaigns run on a virtual clock by default: every execution advances time by
a modeled cost that depends on how much work the target reported, and every
crack adds the modeled cost of parsing. That makes a campaign with a fixed
rng seed reproduce bit for bit, timestamps included. Pass ``clock="wall"`` to
measure real time instead.
"""

from __future__ import annotations

import json
import logging
import os
import random
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .coverage import CoverageMap, Tracer, VirginMap, classify_counts, has_new_bits
from .format_spec import FormatSpec, load_spec, resolve_inheritance, validate_spec
from .mutation import MutationConfig, load_dictionary, stack_mutations
from .schedule import (
    CampaignClock,
    CorpusStats,
    ScheduleConfig,
    SeedEntry,
    SeedQueue,
    base_energy,
    choose_next,
    maybe_crack,
    validity_energy,
)
from .targets import Crash, default_registry, loc

log = logging.getLogger(__name__)

Corpus = SeedQueue

# modeled costs, in microseconds
EXEC_BASE_US = 20.0
EXEC_EVENT_US = 1.0
EXEC_BYTE_US = 0.01
CRACK_BASE_US = 5000.0
CRACK_BYTE_US = 20.0
HANG_US = 100_000.0

PLOT_INTERVAL = 5
PLOT_COLUMNS = ("unix_time", "paths_total", "pending_total", "map_density_pct",
                "unique_crashes", "max_depth", "execs_done", "execs_per_sec")

ABORT_STACK = (loc("harness:target_raised"),)


class CampaignError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# execution


@dataclass
class ExecResult:
    coverage: CoverageMap  # bucketed
    outcome: Optional[Crash]
    exec_time: float  # microseconds, modeled or measured
    events: int = 0

    @property
    def crashed(self) -> bool:
        return self.outcome is not None


def modeled_exec_us(events: int, size: int) -> float:
    return EXEC_BASE_US + EXEC_EVENT_US * events + EXEC_BYTE_US * size


def modeled_crack_us(size: int) -> float:
    return CRACK_BASE_US + CRACK_BYTE_US * size


def execute(target: Callable, data: bytes, clock: str = "virtual",
            cov: Optional[CoverageMap] = None) -> ExecResult:
    """Run ``target`` on ``data`` with a fresh trace and bucket the hit counts.

    An exception escaping the target is reported as an ``abort`` crash with a
    one-frame stack, so execution itself never fails.
    """
    if cov is None:
        cov = CoverageMap()
    else:
        cov.reset()
    tracer = Tracer(cov)
    t0 = time.perf_counter()
    try:
        outcome = target(data, tracer)
    except Exception as exc:  # noqa: BLE001 - any target failure is a crash
        outcome = Crash("abort:" + type(exc).__name__, ABORT_STACK, "abort")
    wall_us = (time.perf_counter() - t0) * 1e6
    spent = wall_us if clock == "wall" else modeled_exec_us(tracer.events, len(data))
    return ExecResult(classify_counts(cov), outcome, spent, tracer.events)


# ---------------------------------------------------------------------------
# crash triage

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def triage_crash(outcome: Crash) -> int:
    """Bucket key: FNV-1a over the stack's location ids, 4 little-endian bytes each."""
    if outcome is None or not outcome.stack:
        raise ValueError("only crashes with a stack can be triaged")
    return fnv1a_64(b"".join(struct.pack("<I", f & 0xFFFFFFFF) for f in outcome.stack))


@dataclass
class CrashBucket:
    key: int
    input: bytes
    site: str
    kind: str
    stack: tuple
    count: int = 1
    first_exec: int = 0

    def to_dict(self) -> dict:
        return {"key": f"{self.key:016x}", "site": self.site, "kind": self.kind,
                "stack": list(self.stack), "count": self.count, "first_exec": self.first_exec,
                "input_len": len(self.input)}


class CrashStore:
    """One representative input per distinct crash stack."""

    def __init__(self):
        self.buckets = {}

    def add(self, outcome: Crash, data: bytes, exec_no: int = 0) -> bool:
        key = triage_crash(outcome)
        bucket = self.buckets.get(key)
        if bucket is not None:
            bucket.count += 1
            return False
        self.buckets[key] = CrashBucket(key, bytes(data), outcome.site, outcome.kind,
                                        tuple(outcome.stack), 1, exec_no)
        return True

    def sites(self) -> set:
        return {b.site for b in self.buckets.values()}

    def __len__(self) -> int:
        return len(self.buckets)


# ---------------------------------------------------------------------------
# campaign


@dataclass
class CampaignConfig:
    target: Any = "wav"  # registered name or a callable
    seeds: Any = None  # directory, list of paths, or list of bytes
    out_dir: Optional[str] = None
    spec: Any = None  # FormatSpec, path, or None for bit-level-only mode
    dictionary: Any = ()  # tokens or a dictionary file path
    rng_seed: int = 0
    timeout_secs: Optional[float] = None  # on the campaign clock
    max_execs: Optional[int] = None
    wall_limit_secs: Optional[float] = None  # safety stop in real seconds
    max_energy: int = 1024
    defer_epsilon: float = 60.0
    structural_ratio: float = 0.5
    max_stack: int = 64
    restrict_to_mutable: float = 0.9
    clock: str = "virtual"  # or "wall"
    stop_when_sites: Sequence = ()


@dataclass
class CampaignStats:
    paths_total: int = 0
    pending_total: int = 0
    execs_done: int = 0
    unique_crashes: int = 0
    hangs: int = 0
    cracks: int = 0
    max_depth: int = 0
    map_density_pct: float = 0.0
    elapsed_secs: float = 0.0
    stop_reason: str = ""
    crash_sites: dict = field(default_factory=dict)  # site -> exec number when first seen
    rows: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _load_seeds(seeds) -> list:
    if seeds is None:
        raise CampaignError("no seeds given")
    if isinstance(seeds, (str, os.PathLike)):
        root = Path(seeds)
        if not root.is_dir():
            raise CampaignError(f"seed directory {root} is not readable")
        paths = sorted(p for p in root.iterdir() if p.is_file())
        try:
            out = [p.read_bytes() for p in paths]
        except OSError as exc:
            raise CampaignError(f"cannot read seed: {exc}") from exc
    else:
        out = []
        for s in seeds:
            out.append(bytes(s) if isinstance(s, (bytes, bytearray)) else Path(s).read_bytes())
    if not out:
        raise CampaignError("the seed corpus is empty")
    return out


def _load_spec(spec) -> Optional[FormatSpec]:
    if spec is None:
        return None
    if not isinstance(spec, FormatSpec):
        try:
            spec = load_spec(spec)
        except (OSError, ValueError) as exc:
            raise CampaignError(f"invalid spec: {exc}") from exc
    try:
        spec = resolve_inheritance(spec)
    except ValueError as exc:
        raise CampaignError(f"invalid spec: {exc}") from exc
    problems = validate_spec(spec)
    if problems:
        raise CampaignError("invalid spec: " + "; ".join(problems))
    return spec


def _resolve_target(target) -> Callable:
    if callable(target):
        return target
    try:
        return default_registry().get(target)
    except KeyError as exc:
        raise CampaignError(str(exc.args[0])) from exc


def _target_name(target) -> str:
    return target if isinstance(target, str) else getattr(target, "__name__", "custom")


class Campaign:
    """State of one single-threaded fuzzing campaign."""

    def __init__(self, config: CampaignConfig):
        self.config = config
        if config.clock not in ("virtual", "wall"):
            raise CampaignError("clock must be 'virtual' or 'wall'")
        self.target = _resolve_target(config.target)
        self.spec = _load_spec(config.spec)
        self.seeds = _load_seeds(config.seeds)
        tokens = config.dictionary
        if isinstance(tokens, (str, os.PathLike)):
            try:
                tokens = load_dictionary(tokens)
            except (OSError, ValueError) as exc:
                raise CampaignError(f"cannot load dictionary: {exc}") from exc
        try:
            self.sched = ScheduleConfig(config.max_energy, config.defer_epsilon)
            self.mcfg = MutationConfig(
                max_stack=config.max_stack,
                structural_ratio=config.structural_ratio if self.spec is not None else 0.0,
                restrict_to_mutable=config.restrict_to_mutable,
                dictionary=tuple(tokens),
            )
        except ValueError as exc:
            raise CampaignError(str(exc)) from exc
        self.rng = random.Random(config.rng_seed)
        self.queue = SeedQueue()
        self.virgin = VirginMap()
        self.crashes = CrashStore()
        self.clock = CampaignClock()
        self.stats = CampaignStats()
        self.donors = []
        self._cov = CoverageMap()
        self._sum_exec = 0.0
        self._sum_len = 0
        self._wall_start = time.monotonic()
        self._last_row = None
        self._plot = None
        self._out = Path(config.out_dir) if config.out_dir else None

    # -- outputs -----------------------------------------------------------

    def _open_outputs(self) -> None:
        if self._out is None:
            return
        try:
            (self._out / "queue").mkdir(parents=True, exist_ok=True)
            (self._out / "crashes").mkdir(exist_ok=True)
            self._plot = open(self._out / "plot_data", "w", newline="")
            self._plot.write(",".join(PLOT_COLUMNS) + "\n")
        except OSError as exc:
            raise CampaignError(f"cannot create output directory: {exc}") from exc

    def _write(self, path: Path, data: bytes) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as exc:
            raise CampaignError(f"cannot write {path}: {exc}") from exc

    def _stamp(self) -> int:
        if self.config.clock == "wall":
            return int(time.time())
        return int(self.clock.now)

    def _row(self) -> None:
        s = self.stats
        now = self._stamp()
        self._last_row = now
        s.rows += 1
        if self._plot is None:
            return
        rate = s.execs_done / self.clock.now if self.clock.now > 0 else 0.0
        row = (now, len(self.queue), self._pending(), f"{self.virgin.density_pct():.2f}",
               len(self.crashes), s.max_depth, s.execs_done, f"{rate:.2f}")
        try:
            self._plot.write(",".join(str(x) for x in row) + "\n")
        except OSError as exc:
            raise CampaignError(f"cannot write plot_data: {exc}") from exc

    def _pending(self) -> int:
        return sum(1 for e in self.queue if e.fuzz_rounds == 0)

    # -- bookkeeping ---------------------------------------------------------

    def _advance(self, us: float) -> None:
        if self.config.clock == "wall":
            self.clock.now = time.monotonic() - self._wall_start
        else:
            self.clock.now += us / 1e6

    def _add_entry(self, data: bytes, exec_time: float, depth: int) -> SeedEntry:
        entry = SeedEntry(len(self.queue), data, exec_time, depth, self.clock.now)
        self.queue.add(entry)
        self._sum_exec += exec_time
        self._sum_len += len(data)
        self.stats.max_depth = max(self.stats.max_depth, depth)
        if self._out is not None:
            self._write(self._out / "queue" / f"{entry.id:06d}", data)
        return entry

    def _record_crash(self, outcome: Crash, data: bytes) -> bool:
        fresh = self.crashes.add(outcome, data, self.stats.execs_done)
        if fresh:
            self.stats.crash_sites.setdefault(outcome.site, self.stats.execs_done)
            if self._out is not None:
                key = triage_crash(outcome)
                self._write(self._out / "crashes" / f"{key:016x}" / "input", data)
        return fresh

    def _corpus_stats(self) -> CorpusStats:
        n = len(self.queue)
        return CorpusStats(self._sum_exec / n, self._sum_len / n)

    def _run(self, data: bytes) -> ExecResult:
        res = execute(self.target, data, self.config.clock, self._cov)
        self.stats.execs_done += 1
        self._advance(res.exec_time)
        return res

    def _stop_reason(self) -> Optional[str]:
        cfg, s = self.config, self.stats
        if cfg.max_execs is not None and s.execs_done >= cfg.max_execs:
            return "max_execs"
        if cfg.timeout_secs is not None and self.clock.now >= cfg.timeout_secs:
            return "timeout"
        if cfg.stop_when_sites and set(cfg.stop_when_sites) <= set(s.crash_sites):
            return "sites_found"
        if cfg.wall_limit_secs is not None and s.execs_done % 64 == 0 \
                and time.monotonic() - self._wall_start >= cfg.wall_limit_secs:
            return "wall_limit"
        return None

    # -- the loop ------------------------------------------------------------

    def dry_run(self) -> None:
        for data in self.seeds:
            res = self._run(data)
            if res.crashed:
                log.warning("seed of %d bytes crashes the target (%s)", len(data), res.outcome.site)
                self._record_crash(res.outcome, data)
                continue
            has_new_bits(self.virgin, res.coverage)
            self._add_entry(data, res.exec_time, 0)
        self.clock.last_new_path_at = self.clock.now

    def fuzz_one(self) -> Optional[str]:
        entry = choose_next(self.queue)
        if self.spec is not None and entry.cracked is None:
            maybe_crack(entry, self.clock, self.sched, self.rng, self.spec)
            if entry.cracked is not None:
                self.stats.cracks += 1
                self._advance(modeled_crack_us(len(entry.data)))
                self.donors.append((entry.data, entry.vs))
        energy = base_energy(entry, self._corpus_stats(), self.sched)
        if self.spec is not None and entry.cracked is not None:
            energy = validity_energy(energy, entry.validity, self.sched)
        entry.fuzz_rounds += 1
        seed = (entry.data, entry.vs)
        for _ in range(energy):
            mutant = stack_mutations(seed, self.donors, self.rng, self.mcfg)
            res = self._run(mutant.data)
            if res.exec_time > HANG_US:
                self.stats.hangs += 1
            elif res.crashed:
                if self._record_crash(res.outcome, mutant.data):
                    self._row()
            elif has_new_bits(self.virgin, res.coverage):
                self._add_entry(mutant.data, res.exec_time, entry.depth + 1)
                self.clock.last_new_path_at = self.clock.now
                self._row()
            if self._stamp() - self._last_row >= PLOT_INTERVAL:
                self._row()
            reason = self._stop_reason()
            if reason:
                return reason
        return self._stop_reason()

    def run(self) -> CampaignStats:
        self._open_outputs()
        try:
            self.dry_run()
            self._row()
            reason = self._stop_reason()
            if reason is None and not len(self.queue):
                # nothing to fuzz: idle out the time budget
                log.warning("every seed crashes the target; the queue is empty")
                if self.config.clock == "virtual" and self.config.timeout_secs is not None:
                    self.clock.now = max(self.clock.now, float(self.config.timeout_secs))
                reason = "empty_queue"
            try:
                while reason is None:
                    reason = self.fuzz_one()
            except KeyboardInterrupt:
                reason = "interrupted"
            self.stats.stop_reason = reason
            self._finish()
            self._row()
        finally:
            if self._plot is not None:
                self._plot.close()
        self._write_summary()
        return self.stats

    def _finish(self) -> None:
        s = self.stats
        s.paths_total = len(self.queue)
        s.pending_total = self._pending()
        s.unique_crashes = len(self.crashes)
        s.map_density_pct = round(self.virgin.density_pct(), 4)
        s.elapsed_secs = round(self.clock.now, 6)

    def _write_summary(self) -> None:
        if self._out is None:
            return
        cfg = self.config
        doc = {
            "target": _target_name(cfg.target),
            "mode": "smart" if self.spec is not None else "bit-level",
            "rng_seed": cfg.rng_seed,
            "clock": cfg.clock,
            "stats": self.stats.to_dict(),
            "crashes": [b.to_dict() for b in sorted(self.crashes.buckets.values(), key=lambda b: b.key)],
        }
        if cfg.clock == "wall":
            doc["wall_secs"] = round(time.monotonic() - self._wall_start, 3)
        try:
            with open(self._out / "campaign.json", "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise CampaignError(f"cannot write campaign.json: {exc}") from exc


def run_campaign(config: CampaignConfig) -> CampaignStats:
    """Run a campaign to its stop condition and return the final statistics."""
    if config.timeout_secs is None and config.max_execs is None and config.wall_limit_secs is None:
        log.info("no stop condition set; the campaign runs until interrupted")
    return Campaign(config).run()
