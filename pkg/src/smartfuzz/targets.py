"""In-process toy targets that report their own edges and plant WAV-style bugs.

A target is a callable ``target(data, tracer) -> Optional[Crash]``. It reports
every parse decision through ``tracer.hit(loc)`` and returns a :class:`Crash`
for a planted bug or None for a normal exit.

The WAV parser here is deliberately separate from the cracker: it walks
chunks the way a media tool's loader would, with the loader's bugs.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

CRASH_KINDS = ("overflow-write", "overflow-read", "div-by-zero", "assert", "abort")


def loc(name: str) -> int:
    """Stable 16-bit location id for a named program point."""
    return zlib.crc32(name.encode()) & 0xFFFF


@dataclass(frozen=True)
class Crash:
    site: str
    stack: tuple
    kind: str

    def __post_init__(self):
        if not self.stack:
            raise ValueError("a crash needs a non-empty stack")
        if self.kind not in CRASH_KINDS:
            raise ValueError(f"unknown crash kind {self.kind!r}")


def _stack(*frames: str) -> tuple:
    return tuple(loc(f) for f in frames)


CRASHES = {
    "double_fmt": Crash("double_fmt", _stack("main", "load_wav", "unpack_init", "store_float_samples"),
                        "overflow-write"),
    "neg_copy": Crash("neg_copy", _stack("main", "load_wav", "skip_unknown_chunk", "copy_bytes"),
                      "overflow-write"),
    "div_zero": Crash("div_zero", _stack("main", "load_wav", "open_stream", "compute_duration"),
                      "div-by-zero"),
}

KNOWN_OPTIONAL = {
    b"fact": "fact", b"LIST": "list", b"cue ": "cue", b"smpl": "smpl", b"inst": "inst",
    b"plst": "plst", b"slnt": "slnt", b"wavl": "wavl", b"ltxt": "ltxt", b"labl": "labl",
    b"note": "note", b"bext": "bext", b"PEAK": "peak", b"JUNK": "junk_known",
}

INFO_TAGS = {b"INAM", b"IART", b"ICMT", b"ICOP", b"ICRD", b"ISFT", b"IGNR", b"IPRD"}
ADTL_TAGS = {b"labl", b"note", b"ltxt"}

# precomputed location ids
L_ENTRY = loc("wav:entry")
L_SHORT = loc("wav:short")
L_NO_RIFF = loc("wav:no_riff")
L_NO_WAVE = loc("wav:no_wave")
L_HEADER = loc("wav:header_ok")
L_RIFF_EXACT = loc("wav:riff_size_exact")
L_RIFF_OFF = loc("wav:riff_size_off")
L_TOO_MANY = loc("wav:too_many_chunks")
L_TRUNC_HDR = loc("wav:truncated_chunk_header")
L_FMT = loc("wav:fmt")
L_FMT_SHORT = loc("wav:fmt_short")
L_FMT_EXT = loc("wav:fmt_extended")
L_FMT_AGAIN = loc("wav:fmt_again")
L_BAD_FLOAT = loc("wav:bad_float_bits")
L_NO_CHANNELS = loc("wav:no_channels")
L_BAD_ALIGN = loc("wav:bad_align")
L_FLOAT_ON = loc("wav:float_mode")
L_PCM = loc("wav:pcm_mode")
L_WIDE_PCM = loc("wav:wide_pcm_after_float")
L_DATA = loc("wav:data")
L_DATA_NO_FMT = loc("wav:data_without_fmt")
L_DATA_TRUNC = loc("wav:data_truncated")
L_DATA_FULL = loc("wav:data_complete")
L_DATA_ODD = loc("wav:data_odd")
L_DATA_PARTIAL = loc("wav:partial_frame")
L_UNKNOWN = loc("wav:unknown_chunk")
L_DONE_NO_DATA = loc("wav:no_data")
L_OPTIONAL_TRUNC = loc("wav:optional_truncated")


def _class(value: int, edges: tuple) -> int:
    for i, e in enumerate(edges):
        if value <= e:
            return i
    return len(edges)


def _hit_class(h, name: str, value: int, edges: tuple) -> None:
    h(loc(f"{name}:{_class(value, edges)}"))


def _read_samples(h, body: bytes, width: int, is_float: bool) -> None:
    """Classify the first few samples the way a converter would branch on them."""
    count = min(len(body) // width, 8) if width else 0
    for i in range(count):
        raw = body[i * width:(i + 1) * width]
        if is_float and width == 4:
            (x,) = struct.unpack("<f", raw)
            if x != x:
                h(loc("sample:float_nan"))
            elif abs(x) > 1.0:
                h(loc("sample:float_clip"))
            elif x == 0.0:
                h(loc("sample:float_zero"))
            else:
                h(loc("sample:float_in_range"))
            continue
        v = int.from_bytes(raw, "little", signed=width > 1)
        if width == 1:
            v -= 128
        top = (1 << (8 * width - 1)) - 1
        if v == 0:
            h(loc(f"sample:{width}:zero"))
        elif v >= top or v <= -top - 1:
            h(loc(f"sample:{width}:extreme"))
        elif v > 0:
            h(loc(f"sample:{width}:pos"))
        else:
            h(loc(f"sample:{width}:neg"))


def _parse_list(h, body: bytes) -> None:
    kind = body[:4]
    if kind not in (b"INFO", b"adtl"):
        h(loc("list:other"))
        return
    label = kind.decode("latin-1")
    h(loc(f"list:{label}"))
    pos, items = 4, 0
    while pos + 8 <= len(body) and items < 16:
        sub = body[pos:pos + 4]
        size = int.from_bytes(body[pos + 4:pos + 8], "little")
        items += 1
        known = INFO_TAGS if kind == b"INFO" else ADTL_TAGS
        h(loc(f"list:{label}:{sub.decode('latin-1') if sub in known else 'other'}"))
        if pos + 8 + size > len(body):
            h(loc(f"list:{label}:truncated"))
            return
        text = body[pos + 8:pos + 8 + size]
        if kind == b"INFO":
            h(loc("list:INFO:terminated" if text.endswith(b"\0") else "list:INFO:unterminated"))
        pos += 8 + size + (size & 1)
    _hit_class(h, f"list:{label}:items", items, (0, 1, 3))


def _parse_cue(h, body: bytes, meta: dict) -> None:
    count = int.from_bytes(body[:4], "little")
    _hit_class(h, "cue:points", count, (0, 1, 4, 64))
    points = []
    for i in range(min(count, 8)):
        rec = body[4 + 24 * i:4 + 24 * (i + 1)]
        if len(rec) < 24:
            h(loc("cue:short_table"))
            break
        ident, position, fcc, _, _, offset = struct.unpack("<II4sIII", rec)
        h(loc("cue:fcc_data" if fcc == b"data" else "cue:fcc_other"))
        points.append((ident, offset))
    if len({p[0] for p in points}) != len(points):
        h(loc("cue:duplicate_id"))
    meta["cue"] = points


def _parse_smpl(h, body: bytes, meta: dict) -> None:
    if len(body) < 36:
        h(loc("smpl:short"))
        return
    fields = struct.unpack_from("<9I", body)
    _hit_class(h, "smpl:unity_note", fields[3], (59, 60, 127))
    loops = fields[7]
    _hit_class(h, "smpl:loops", loops, (0, 1, 4))
    found = []
    for i in range(min(loops, 8)):
        rec = body[36 + 24 * i:36 + 24 * (i + 1)]
        if len(rec) < 24:
            h(loc("smpl:short_loop_table"))
            break
        _, kind, start, end, _, _ = struct.unpack("<6I", rec)
        h(loc(f"smpl:loop_kind:{min(kind, 3)}"))
        h(loc("smpl:loop_ordered" if start < end else "smpl:loop_inverted"))
        found.append((start, end))
    meta["loops"] = found


def _parse_inst(h, body: bytes) -> None:
    if len(body) < 7:
        h(loc("inst:short"))
        return
    note, _, gain, low_note, high_note, low_vel, high_vel = struct.unpack("<BbbBBBB", body[:7])
    h(loc("inst:note_range_ok" if low_note <= note <= high_note else "inst:note_outside"))
    h(loc("inst:vel_range_ok" if low_vel <= high_vel else "inst:vel_inverted"))
    _hit_class(h, "inst:gain", gain + 128, (127, 128))


def _cross_check(h, meta: dict, frames: Optional[int]) -> None:
    """Metadata consistency checks done once the whole file was read."""
    if frames is None:
        return
    if "fact" in meta:
        f = meta["fact"]
        h(loc("check:fact_eq" if f == frames else "check:fact_lt" if f < frames else "check:fact_gt"))
    for _, offset in meta.get("cue", ()):
        h(loc("check:cue_inside" if offset < frames else "check:cue_outside"))
    for start, end in meta.get("loops", ()):
        h(loc("check:loop_inside" if end <= frames else "check:loop_outside"))


def wav_target(data: bytes, tracer) -> Optional[Crash]:
    h = tracer.hit
    h(L_ENTRY)
    n = len(data)
    if n < 12:
        h(L_SHORT)
        return None
    if data[:4] != b"RIFF":
        h(L_NO_RIFF)
        return None
    if data[8:12] != b"WAVE":
        h(L_NO_WAVE)
        return None
    h(L_HEADER)
    riff_size = int.from_bytes(data[4:8], "little")
    h(L_RIFF_EXACT if riff_size == n - 8 else L_RIFF_OFF)

    pos = 12
    fmt = None
    fmt_count = 0
    data_count = 0
    float_mode = False
    double_fmt = False
    frames = None
    meta = {}
    seen = 0
    while pos + 8 <= n:
        seen += 1
        if seen > 64:
            h(L_TOO_MANY)
            return None
        ckid = data[pos:pos + 4]
        size = int.from_bytes(data[pos + 4:pos + 8], "little")
        body_at = pos + 8

        if ckid == b"fmt ":
            h(L_FMT)
            fmt_count += 1
            h(loc(f"fmt:count:{min(fmt_count, 4)}"))
            if size < 16 or body_at + 16 > n:
                h(L_FMT_SHORT)
                return None
            if size > 16:
                h(L_FMT_EXT)
            tag, channels, rate, _, align, bits = struct.unpack_from("<HHIIHH", data, body_at)
            h(loc(f"fmt:tag:{tag if tag in (1, 3, 0xFFFE) else 'other'}"))
            _hit_class(h, "fmt:channels", channels, (0, 1, 2, 8))
            _hit_class(h, "fmt:bits", bits, (0, 7, 8, 16, 24, 32))
            _hit_class(h, "fmt:rate", rate, (0, 7999, 48000, 192000))
            if fmt_count > 1:
                h(L_FMT_AGAIN)
            # sanity checks of the loader; an unsupported header ends the load
            if tag == 3 and bits != 32:
                h(L_BAD_FLOAT)
                return None
            if channels == 0:
                h(L_NO_CHANNELS)
                return None
            if align // channels < (bits + 7) // 8:
                h(L_BAD_ALIGN)
                return None
            if tag == 3:
                h(L_FLOAT_ON)
                float_mode = True
            else:
                h(L_PCM)
                # the float flag from an earlier header is never cleared, so a
                # narrow PCM layout later gets 4-byte float stores per sample
                if float_mode:
                    if align // channels < 4:
                        double_fmt = True
                    else:
                        h(L_WIDE_PCM)
            fmt = (tag, channels, rate, align, bits)

        elif ckid == b"data":
            h(L_DATA)
            data_count += 1
            h(loc(f"data:count:{min(data_count, 3)}"))
            if fmt is None:
                h(L_DATA_NO_FMT)
                return None
            if double_fmt:
                return CRASHES["double_fmt"]
            tag, channels, rate, align, bits = fmt
            if rate == 0:
                return CRASHES["div_zero"]
            avail = min(size, n - body_at)
            h(L_DATA_FULL if avail == size else L_DATA_TRUNC)
            if size & 1:
                h(L_DATA_ODD)
            if align and avail % align:
                h(L_DATA_PARTIAL)
            frames = avail // align if align else 0
            _hit_class(h, "data:frames", frames, (0, 1, 4, 64, 4096))
            _hit_class(h, "data:seconds", frames // rate, (0, 1, 60))
            if data_count == 1:
                width = align // channels
                _read_samples(h, data[body_at:body_at + avail], width, tag == 3 or float_mode)

        elif ckid in KNOWN_OPTIONAL:
            name = KNOWN_OPTIONAL[ckid]
            h(loc(f"chunk:{name}"))
            if body_at + size > n:
                h(L_OPTIONAL_TRUNC)
                break
            body = data[body_at:body_at + size]
            if ckid == b"fact":
                if size >= 4:
                    meta["fact"] = int.from_bytes(body[:4], "little")
                else:
                    h(loc("fact:short"))
            elif ckid == b"LIST":
                if size >= 4:
                    _parse_list(h, body)
                else:
                    h(loc("list:short"))
            elif ckid == b"cue ":
                if size >= 4:
                    _parse_cue(h, body, meta)
                else:
                    h(loc("cue:short"))
            elif ckid == b"smpl":
                _parse_smpl(h, body, meta)
            elif ckid == b"inst":
                _parse_inst(h, body)
            else:
                _hit_class(h, f"chunk:{name}:size", size, (0, 4, 36, 256))

        else:
            h(L_UNKNOWN)
            # the loader computes the bytes to skip in a signed int
            if size >= 0x80000000:
                return CRASHES["neg_copy"]
            _hit_class(h, "unknown:size", size, (0, 8, 256, 65536))
            if body_at + size > n:
                h(L_OPTIONAL_TRUNC)
                break

        pos = body_at + size + (size & 1)

    if pos < n:
        h(L_TRUNC_HDR)
    if frames is None:
        h(L_DONE_NO_DATA)
    _cross_check(h, meta, frames)
    return None


L_RIFF_HDR_FAIL = loc("riff_info:header_fail")
L_RIFF_HDR_OK = loc("riff_info:header_ok")
MAX_DISTINCT_IDS = 16


def riff_info_target(data: bytes, tracer) -> Optional[Crash]:
    """Report one edge per distinct chunk id in a RIFF file; never crashes."""
    if len(data) < 12 or data[:4] != b"RIFF":
        tracer.hit(L_RIFF_HDR_FAIL)
        return None
    tracer.hit(L_RIFF_HDR_OK)
    seen = set()
    pos = 12
    while pos + 8 <= len(data) and len(seen) < MAX_DISTINCT_IDS:
        ckid = bytes(data[pos:pos + 4])
        if ckid not in seen:
            seen.add(ckid)
            tracer.hit(loc("riff_info:id:" + ckid.hex()))
        size = int.from_bytes(data[pos + 4:pos + 8], "little")
        pos += 8 + size + (size & 1)
    return None


Target = Callable[..., Optional[Crash]]


class TargetRegistry:
    """Named target callbacks; names are unique."""

    def __init__(self):
        self._targets = {}

    def register(self, name: str, target: Target) -> None:
        if name in self._targets:
            raise ValueError(f"target {name!r} is already registered")
        if not callable(target):
            raise TypeError("a target must be callable")
        self._targets[name] = target

    def get(self, name: str) -> Target:
        try:
            return self._targets[name]
        except KeyError:
            raise KeyError(f"unknown target {name!r}; known: {', '.join(sorted(self._targets))}") from None

    def names(self) -> list:
        return sorted(self._targets)

    def __contains__(self, name) -> bool:
        return name in self._targets

    def __len__(self) -> int:
        return len(self._targets)


def register_builtin_targets(registry: TargetRegistry) -> TargetRegistry:
    registry.register("wav", wav_target)
    registry.register("riff_info", riff_info_target)
    return registry


def default_registry() -> TargetRegistry:
    return register_builtin_targets(TargetRegistry())
