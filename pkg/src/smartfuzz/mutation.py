"""Bit-level, dictionary and structural mutation operators, plus havoc-style stacking.

Every operator first draws a fully concrete :class:`MutationOp` (offsets and
the exact bytes written) and then applies it. Applying an op to a file that
carries a virtual structure also revises the structure; a byte deletion that
would cut through a chunk boundary is refused so the caller can re-roll.
Because ops are concrete, an ``op_log`` can be replayed bit for bit.
"""

from __future__ import annotations

import codecs
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .vstruct import (
    UNPARSED,
    VirtualStructure,
    delete_in_place,
    insert_in_place,
    splice_in_place,
)

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = INTERESTING_8 + (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = INTERESTING_16 + (
    -2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647)
INTERESTING = {1: INTERESTING_8, 2: INTERESTING_16, 4: INTERESTING_32}

ARITH_MAX = 35
MAX_FILE = 1 << 16
MAX_TRIES = 8

BIT_OPS = ("bitflip", "byteflip", "arith", "interesting", "random_byte",
           "block_delete", "block_insert", "block_overwrite")
DICT_OPS = ("dict_insert", "dict_overwrite")
SMART_OPS = ("smart_delete", "smart_add", "smart_splice")


@dataclass(frozen=True)
class MutationConfig:
    max_stack: int = 64
    structural_ratio: float = 0.5
    restrict_to_mutable: float = 0.9
    dictionary: tuple = ()
    size_fixup: bool = True

    def __post_init__(self):
        if self.max_stack < 2 or self.max_stack > 64 or self.max_stack & (self.max_stack - 1):
            raise ValueError("max_stack must be a power of two between 2 and 64")
        for name in ("structural_ratio", "restrict_to_mutable"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "dictionary", tuple(bytes(t) for t in self.dictionary if t))


@dataclass(frozen=True)
class MutationOp:
    kind: str
    effect: str  # overwrite | insert | delete | smart_delete | smart_add | smart_splice
    offset: int = -1
    length: int = 0
    payload: bytes = b""
    node: int = -1
    donor: int = -1
    donor_node: int = -1

    def describe(self) -> str:
        if self.effect == "smart_delete":
            return f"{self.kind} node={self.node}"
        if self.effect in ("smart_add", "smart_splice"):
            return f"{self.kind} node={self.node} donor={self.donor}:{self.donor_node}"
        if self.effect == "delete":
            return f"{self.kind} @{self.offset} -{self.length}"
        sign = "+" if self.effect == "insert" else "="
        return f"{self.kind} @{self.offset} {sign}{self.payload.hex()}"


@dataclass
class Mutant:
    data: bytes
    vs: Optional[VirtualStructure]
    op_log: list = field(default_factory=list)


class Rejected(Exception):
    """The op cannot be translated onto the virtual structure."""


# ---------------------------------------------------------------------------
# dictionaries

_DICT_LINE = re.compile(r'^\s*(?:[A-Za-z0-9_]+(?:@\d+)?\s*=\s*)?"(.*)"\s*$')


def parse_dictionary(text: str) -> list:
    """AFL-style dictionary: one quoted token per line, ``\\xNN`` escapes."""
    tokens = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _DICT_LINE.match(stripped)
        if not m:
            raise ValueError(f"dictionary line {lineno}: expected a quoted token")
        value, _ = codecs.escape_decode(m.group(1).encode("latin-1"))
        if value:
            tokens.append(value)
    return tokens


def load_dictionary(path) -> list:
    with open(path, encoding="latin-1") as fh:
        return parse_dictionary(fh.read())


# ---------------------------------------------------------------------------
# structure translation for byte-level edits


def crosses_chunk_boundary(vs: VirtualStructure, offset: int, length: int) -> bool:
    """True if deleting [offset, offset+length) would cut a chunk apart."""
    lo, hi = offset, offset + length - 1
    for node, _ in vs.with_parents():
        if node.end < lo or node.start > hi:
            continue
        if node.start <= lo and node.end >= hi and (node.start, node.end) != (lo, hi):
            continue
        return True
    return False


def _covered(vs: VirtualStructure, lo: int, hi: int) -> bool:
    """Whether every byte in [lo, hi] lies in an attribute or the unparsed tail."""
    spans = [(a.start, a.end) for a in vs.attributes()]
    un = vs.unparsed
    if un is not None:
        spans.append((un.start, un.end))
    spans.sort()
    need = lo
    for s, e in spans:
        if e < need:
            continue
        if s > need:
            return False
        need = e + 1
        if need > hi:
            return True
    return need > hi


def _size_fields(vs: VirtualStructure):
    for n in vs.nodes():
        names = {k.attr for k in n.links}
        for a in n.attributes:
            if a.name in names:
                yield a


def _translate_delete(vs: VirtualStructure, lo: int, length: int) -> Optional[VirtualStructure]:
    if crosses_chunk_boundary(vs, lo, length):
        raise Rejected("deletion crosses a chunk boundary")
    hi = lo + length - 1
    for a in _size_fields(vs):
        # a size field must keep its width so that fixup can rewrite it
        if lo <= a.end and hi >= a.start and not (lo <= a.start and hi >= a.end):
            raise Rejected("deletion would resize a size field")
    if not _covered(vs, lo, hi):
        return None

    def ms(s):
        return s if s < lo else (s - length if s > hi else lo)

    def me(e):
        return e if e < lo else (e - length if e > hi else lo - 1)

    for n in vs.nodes():
        n.start, n.end = ms(n.start), me(n.end)
        for k in n.links:
            k.start = ms(k.start)
            k.end = max(me(k.end), k.start - 1)
        kept = []
        for a in n.attributes:
            a.start, a.end = ms(a.start), me(a.end)
            if a.start <= a.end:
                kept.append(a)
        if len(kept) != len(n.attributes):
            gone = {a.name for a in n.attributes} - {a.name for a in kept}
            n.attributes = kept
            n.links = [k for k in n.links if k.attr not in gone]
    vs.root.start = 0
    vs.file_len -= length
    return vs


def _translate_insert(vs: VirtualStructure, at: int, length: int) -> Optional[VirtualStructure]:
    if any(a.start < at <= a.end for a in _size_fields(vs)):
        raise Rejected("insertion would resize a size field")
    if at < vs.file_len and not _covered(vs, at, at):
        return None
    root = vs.root
    for n in vs.nodes():
        if n is root:
            n.end += length
        elif n.start >= at:
            n.start += length
            n.end += length
        elif n.end >= at:
            n.end += length
        for k in n.links:
            if k.start >= at:
                k.start += length
                k.end += length
            elif k.end >= at:
                k.end += length
        for a in n.attributes:
            if a.start >= at:
                a.start += length
                a.end += length
            elif a.end >= at:
                a.end += length
    vs.file_len += length
    return vs


# ---------------------------------------------------------------------------
# applying concrete ops


def apply_op(buf: bytearray, vs: Optional[VirtualStructure], op: MutationOp,
             donor_pool: Sequence = (), size_fixup: bool = True) -> Optional[VirtualStructure]:
    """Apply ``op`` in place; returns the revised structure (None if dropped).

    Raises :class:`Rejected` without touching anything if a deletion would
    cross a chunk boundary or an edit would change the width of a size field.
    """
    eff = op.effect
    if eff == "overwrite":
        buf[op.offset:op.offset + len(op.payload)] = op.payload
        return vs
    if eff == "insert":
        if vs is not None:
            vs = _translate_insert(vs, op.offset, len(op.payload))
        buf[op.offset:op.offset] = op.payload
        return vs
    if eff == "delete":
        if vs is not None:
            vs = _translate_delete(vs, op.offset, op.length)
        del buf[op.offset:op.offset + op.length]
        return vs
    if vs is None:
        raise Rejected("structural op without a virtual structure")
    if eff == "smart_delete":
        delete_in_place(buf, vs, op.node, size_fixup)
    elif eff == "smart_add":
        d_data, d_vs = donor_pool[op.donor]
        insert_in_place(buf, vs, op.node, d_data, d_vs, op.donor_node, size_fixup)
    elif eff == "smart_splice":
        d_data, d_vs = donor_pool[op.donor]
        splice_in_place(buf, vs, op.node, d_data, d_vs, op.donor_node, size_fixup)
    else:
        raise ValueError(f"unknown op effect {eff!r}")
    return vs


# ---------------------------------------------------------------------------
# drawing bit-level ops


def _below(rng, k: int) -> int:
    """Uniform integer in [0, k); cheaper than ``randrange`` on the hot path."""
    return int(rng.random() * k)


def _between(rng, lo: int, hi: int) -> int:
    return lo + int(rng.random() * (hi - lo + 1))


def _block_len(rng, limit: int) -> int:
    r = rng.random()
    if r < 0.7:
        lo, hi = 1, 32
    elif r < 0.9:
        lo, hi = 32, 128
    else:
        lo, hi = 128, 1500
    hi = min(hi, limit)
    lo = min(lo, hi)
    return _between(rng, lo, hi)


def _mutable_spans(vs: Optional[VirtualStructure]) -> list:
    if vs is None:
        return []
    return [(a.start, a.end) for a in vs.attributes() if a.mutable]


def _site(n: int, width: int, spans: list, rng, cfg: MutationConfig) -> int:
    """Start of a ``width``-byte window, preferably inside a mutable attribute."""
    if spans and rng.random() < cfg.restrict_to_mutable:
        s, e = spans[_below(rng, len(spans))]
        hi = min(e - width + 1, n - width)
        if hi >= s:
            return _between(rng, s, hi)
        return max(0, min(s, n - width))
    return _below(rng, n - width + 1)


def _gap(n: int, spans: list, rng, cfg: MutationConfig) -> int:
    """Insertion point in [0, n]."""
    if spans and rng.random() < cfg.restrict_to_mutable:
        s, e = spans[_below(rng, len(spans))]
        return _between(rng, s, e)
    return _below(rng, n + 1)


def _width(rng, n: int) -> int:
    choices = [w for w in (1, 2, 4) if w <= n]
    return choices[_below(rng, len(choices))]


def draw_bit_op(buf: bytearray, vs: Optional[VirtualStructure], rng, cfg: MutationConfig,
                kind: Optional[str] = None, spans: Optional[list] = None) -> Optional[MutationOp]:
    """Pick (or use ``kind``) a bit-level operator and concretize it against ``buf``.

    ``spans`` may pass precomputed mutable attribute ranges of ``vs``.
    Returns None when the operator does not fit the current buffer.
    """
    n = len(buf)
    if kind is None:
        ops = BIT_OPS + DICT_OPS if cfg.dictionary else BIT_OPS
        kind = ops[_below(rng, len(ops))]
    if spans is None:
        spans = _mutable_spans(vs)

    if n == 0:
        if kind in ("block_insert", "dict_insert"):
            fill = bytes([_below(rng, 256)]) * _block_len(rng, 32)
            return MutationOp("block_insert", "insert", 0, payload=fill)
        return None

    if kind == "bitflip":
        bits = (1, 2, 4)[_below(rng, 3)]
        pos = _site(n, 1, spans, rng, cfg)
        first = pos * 8 + _below(rng, 8)
        last = min(first + bits, n * 8) - 1
        lo, hi = first // 8, last // 8
        chunk = bytearray(buf[lo:hi + 1])
        for b in range(first, last + 1):
            chunk[b // 8 - lo] ^= 0x80 >> (b % 8)
        return MutationOp(kind, "overwrite", lo, len(chunk), bytes(chunk))

    if kind == "byteflip":
        w = _width(rng, n)
        pos = _site(n, w, spans, rng, cfg)
        return MutationOp(kind, "overwrite", pos, w, bytes(x ^ 0xFF for x in buf[pos:pos + w]))

    if kind in ("arith", "interesting"):
        w = _width(rng, n)
        endian = "little" if w == 1 or rng.random() < 0.5 else "big"
        pos = _site(n, w, spans, rng, cfg)
        if kind == "arith":
            d = _between(rng, 1, ARITH_MAX) * (1 if rng.random() < 0.5 else -1)
            value = (int.from_bytes(buf[pos:pos + w], endian) + d) % (1 << (8 * w))
            payload = value.to_bytes(w, endian)
        else:
            table = INTERESTING[w]
            payload = table[_below(rng, len(table))].to_bytes(w, endian, signed=True)
        return MutationOp(kind, "overwrite", pos, w, payload)

    if kind == "random_byte":
        pos = _site(n, 1, spans, rng, cfg)
        return MutationOp(kind, "overwrite", pos, 1, bytes([buf[pos] ^ (1 + _below(rng, 255))]))

    if kind == "block_delete":
        if n < 2:
            return None
        size = _block_len(rng, n - 1)
        pos = _site(n, size, spans, rng, cfg)
        return MutationOp(kind, "delete", pos, size)

    if kind == "block_insert":
        if n >= MAX_FILE:
            return None
        size = _block_len(rng, min(MAX_FILE - n, 1500))
        if size <= n and rng.random() < 0.75:
            src = _below(rng, n - size + 1)
            payload = bytes(buf[src:src + size])
        else:
            fill = _below(rng, 256) if rng.random() < 0.5 else buf[_below(rng, n)]
            payload = bytes([fill]) * size
        return MutationOp(kind, "insert", _gap(n, spans, rng, cfg), size, payload)

    if kind == "block_overwrite":
        if n < 2:
            return None
        size = _block_len(rng, n - 1)
        dst = _site(n, size, spans, rng, cfg)
        if rng.random() < 0.75:
            src = _below(rng, n - size + 1)
            payload = bytes(buf[src:src + size])
        else:
            fill = _below(rng, 256) if rng.random() < 0.5 else buf[_below(rng, n)]
            payload = bytes([fill]) * size
        return MutationOp(kind, "overwrite", dst, size, payload)

    if kind in DICT_OPS:
        if not cfg.dictionary:
            return None
        token = cfg.dictionary[_below(rng, len(cfg.dictionary))]
        if kind == "dict_insert":
            if n + len(token) > MAX_FILE:
                return None
            return MutationOp(kind, "insert", _gap(n, spans, rng, cfg), len(token), token)
        if len(token) > n:
            return None
        return MutationOp(kind, "overwrite", _site(n, len(token), spans, rng, cfg), len(token), token)

    raise ValueError(f"unknown bit-level operator {kind!r}")


class _SpanCache:
    """Mutable attribute ranges, recomputed only after the structure moved."""

    __slots__ = ("spans",)

    def __init__(self):
        self.spans = None

    def get(self, vs):
        if self.spans is None:
            self.spans = _mutable_spans(vs)
        return self.spans


def _bit_step(buf, vs, rng, cfg, kind=None, cache=None):
    """Draw and apply one bit-level op with re-rolls; returns (op or None, vs)."""
    cache = cache or _SpanCache()
    for _ in range(MAX_TRIES):
        op = draw_bit_op(buf, vs, rng, cfg, kind, cache.get(vs))
        if op is None:
            continue
        try:
            vs = apply_op(buf, vs, op)
        except Rejected:
            continue
        if op.effect != "overwrite":
            cache.spans = None
        return op, vs
    return None, vs


# ---------------------------------------------------------------------------
# structural ops


def _chunks(vs: VirtualStructure, allow_unparsed: bool) -> list:
    return [(c, p) for c, p in vs.with_parents() if allow_unparsed or c.type != UNPARSED]


def draw_structural_op(buf, vs: VirtualStructure, donor_pool: Sequence, rng,
                       kind: str) -> Optional[MutationOp]:
    if kind == "smart_delete":
        # never delete the whole file
        cands = [(c, p) for c, p in _chunks(vs, allow_unparsed=True) if c.length < len(buf)]
        if not cands:
            return None
        node, _ = cands[rng.randrange(len(cands))]
        return MutationOp(kind, kind, node=node.id)

    own = _chunks(vs, allow_unparsed=False)
    if not own or not donor_pool:
        return None
    for _ in range(MAX_TRIES):
        c1, p1 = own[rng.randrange(len(own))]
        di = rng.randrange(len(donor_pool))
        d_data, d_vs = donor_pool[di]
        if d_vs is None:
            continue
        if kind == "smart_add":
            cands = [c for c, p in _chunks(d_vs, False) if p.type == p1.type]
        else:
            cands = [c for c, _ in _chunks(d_vs, False) if c.type == c1.type]
        if not cands:
            continue
        c2 = cands[rng.randrange(len(cands))]
        growth = c2.length - (0 if kind == "smart_add" else c1.length)
        if len(buf) + growth > MAX_FILE:
            continue
        return MutationOp(kind, kind, node=c1.id, donor=di, donor_node=c2.id)
    return None


def _structural_step(buf, vs, donor_pool, rng, cfg):
    first = rng.randrange(len(SMART_OPS))
    for k in range(len(SMART_OPS)):
        op = draw_structural_op(buf, vs, donor_pool, rng, SMART_OPS[(first + k) % len(SMART_OPS)])
        if op is not None:
            return op, apply_op(buf, vs, op, donor_pool, cfg.size_fixup)
    return None, vs


# ---------------------------------------------------------------------------
# public entry points


def bit_level_mutate(data: bytes, vs: Optional[VirtualStructure], rng,
                     cfg: MutationConfig = MutationConfig(), kind: Optional[str] = None) -> Mutant:
    """One bit-level or dictionary mutation; the inputs are left untouched."""
    buf = bytearray(data)
    work = None if vs is None else vs.clone()
    op, work = _bit_step(buf, work, rng, cfg, kind)
    if op is None:
        return Mutant(bytes(data), None if vs is None else vs.clone(), [])
    return Mutant(bytes(buf), work, [op])


def structural_mutate(seed: tuple, donor_pool: Sequence, rng,
                      cfg: MutationConfig = MutationConfig(), kind: Optional[str] = None) -> Mutant:
    """One chunk-level deletion, addition or splice on a cracked seed."""
    data, vs = seed
    buf, work = bytearray(data), vs.clone()
    if kind is None:
        op, work = _structural_step(buf, work, donor_pool, rng, cfg)
    else:
        op = draw_structural_op(buf, work, donor_pool, rng, kind)
        if op is not None:
            work = apply_op(buf, work, op, donor_pool, cfg.size_fixup)
    if op is None:
        return Mutant(bytes(data), vs.clone(), [])
    return Mutant(bytes(buf), work, [op])


def stack_mutations(seed: tuple, donor_pool: Sequence, rng,
                    cfg: MutationConfig = MutationConfig()) -> Mutant:
    """Apply 2..max_stack randomly chosen operators to a copy of the seed."""
    data, vs = seed
    n = 1 << rng.randint(1, int(math.log2(cfg.max_stack)))
    buf = bytearray(data)
    work = None if vs is None else vs.clone()
    log = []
    cache = _SpanCache()
    for _ in range(n):
        if work is not None and donor_pool and cfg.structural_ratio > 0 \
                and rng.random() < cfg.structural_ratio:
            op, work = _structural_step(buf, work, donor_pool, rng, cfg)
            cache.spans = None
        else:
            op, work = _bit_step(buf, work, rng, cfg, cache=cache)
        if op is not None:
            log.append(op)
    return Mutant(bytes(buf), work, log)


def replay(seed: tuple, donor_pool: Sequence, op_log: Sequence,
           size_fixup: bool = True, on_step=None) -> Mutant:
    """Re-apply a recorded op log. ``on_step(op, data, vs)`` sees each pre-state."""
    data, vs = seed
    buf = bytearray(data)
    work = None if vs is None else vs.clone()
    for op in op_log:
        if on_step is not None:
            on_step(op, bytes(buf), work)
        work = apply_op(buf, work, op, donor_pool, size_fixup)
    return Mutant(bytes(buf), work, list(op_log))
