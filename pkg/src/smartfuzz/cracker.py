"""Decompose a byte sequence into a virtual structure using a format spec.

Cracking never fails: when the root model stops matching, whatever parsed so
far is kept and the rest of the file hangs under the root as one unparsed
chunk. The parsed fraction of the file is its degree of validity.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional

from .format_spec import (
    BlobField,
    BlockField,
    ChoiceField,
    FormatSpec,
    NumberField,
    PaddingField,
    StringField,
    resolve_inheritance,
)
from .vstruct import UNPARSED, AttributeNode, ChunkNode, SizeLink, VirtualStructure

MAX_DEPTH = 64


class _Mismatch(Exception):
    pass


class _Cracker:
    def __init__(self, spec: FormatSpec, data: bytes):
        self.spec = spec
        self.data = data
        self.diagnostics = []

    def model(self, name: str, start: int, limit: int, depth: int) -> ChunkNode:
        if depth > MAX_DEPTH:
            raise _Mismatch
        node = ChunkNode(-1, name, start, start - 1)
        end = self.fields(self.spec.model(name).fields, node, start, limit, depth)
        if end == start:
            raise _Mismatch
        node.end = end - 1
        return node

    def fields(self, fields, node: ChunkNode, cur: int, limit: int, depth: int) -> int:
        data = self.data
        sizes = {}
        for f in fields:
            region = sizes.pop(f.name, None)
            region_limit = limit
            if region is not None:
                size, link = region
                if size > limit - cur:
                    self.diagnostics.append(
                        f"{node.type}.{f.name}: size {size} clamped to {limit - cur} at offset {cur}")
                    size = limit - cur
                region_limit = cur + size
                link.start, link.end = cur, cur + size - 1
                node.links.append(link)

            if isinstance(f, StringField):
                n = f.length if region is None else region_limit - cur
                if n <= 0 or cur + n > region_limit:
                    raise _Mismatch
                if f.token and data[cur:cur + n] != f.value:
                    raise _Mismatch
                node.attributes.append(AttributeNode(f.name, cur, cur + n - 1, not f.token))
                cur += n
            elif isinstance(f, NumberField):
                n = f.size_bits // 8
                if cur + n > region_limit:
                    raise _Mismatch
                if f.size_of is not None:
                    value = int.from_bytes(data[cur:cur + n], f.endian)
                    sizes[f.size_of] = (value, SizeLink(f.name, 0, -1, f.size_bits, f.endian))
                node.attributes.append(AttributeNode(f.name, cur, cur + n - 1, f.size_of is None))
                cur += n
            elif isinstance(f, BlobField):
                if region_limit > cur:
                    node.attributes.append(AttributeNode(f.name, cur, region_limit - 1, True))
                cur = region_limit
            elif isinstance(f, BlockField):
                if f.ref is not None:
                    child = self.model(f.ref, cur, region_limit, depth + 1)
                    node.children.append(child)
                    cur = child.end + 1
                else:
                    cur = self.fields(f.fields, node, cur, region_limit, depth)
            elif isinstance(f, ChoiceField):
                cur = self.choice(f, node, cur, region_limit, depth)
            elif isinstance(f, PaddingField):
                align = max(1, f.alignment_bits // 8)
                pad = min(-(cur - node.start) % align, region_limit - cur)
                if pad > 0:
                    node.attributes.append(AttributeNode(f.name, cur, cur + pad - 1, True))
                    cur += pad
            if region is not None:
                cur = region_limit
        return cur

    def choice(self, f: ChoiceField, node: ChunkNode, cur: int, limit: int, depth: int) -> int:
        count = 0
        while count < f.max_occurs and cur < limit:
            for opt in f.options:
                try:
                    child = self.model(opt.ref, cur, limit, depth + 1)
                except _Mismatch:
                    continue
                node.children.append(child)
                cur = child.end + 1
                count += 1
                break
            else:
                break
        return cur


def _number(vs: VirtualStructure) -> None:
    i = 0
    for n in vs.nodes():
        n.id = i
        i += 1
    vs.next_id = i


def crack_with_diagnostics(spec: FormatSpec, data: bytes):
    """Like :func:`crack` but also returns clamp diagnostics."""
    if not spec.is_resolved:
        spec = resolve_inheritance(spec)
    data = bytes(data)
    size = len(data)
    if size == 0:
        return VirtualStructure(0, None), Fraction(0), []

    cr = _Cracker(spec, data)
    root = ChunkNode(-1, spec.root, 0, size - 1)
    try:
        cur = cr.fields(spec.model(spec.root).fields, root, 0, size, 0)
    except _Mismatch:
        # keep what parsed before the failing field
        cur = 0
        for item in root.attributes + root.children:
            cur = max(cur, item.end + 1)
        root.links = [k for k in root.links if k.end < cur]
    if cur < size:
        root.children.append(ChunkNode(-1, UNPARSED, cur, size - 1))
    vs = VirtualStructure(size, root)
    _number(vs)
    return vs, validity(vs), cr.diagnostics


def crack(spec: FormatSpec, data: bytes):
    """Parse ``data`` against ``spec``; returns (VirtualStructure, validity)."""
    vs, v, _ = crack_with_diagnostics(spec, data)
    return vs, v


def validity(vs: VirtualStructure) -> Fraction:
    """Fraction of the file covered by parsed content, as an exact rational."""
    if vs.file_len == 0:
        return Fraction(0)
    un: Optional[ChunkNode] = vs.unparsed
    missing = 0 if un is None else un.end - un.start + 1
    return Fraction(vs.file_len - missing, vs.file_len)
