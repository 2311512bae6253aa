"""Virtual structure of a file and edits that keep it in sync with the bytes.

A virtual structure is a tree laid over a byte buffer. Internal nodes are
chunks, leaves are attributes, and every node carries inclusive start/end
indices. Structural edits (chunk deletion, addition after a sibling, splicing)
rewrite the buffer and revise the indices of every affected node in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional

UNPARSED = "<unparsed>"


class EditError(ValueError):
    """A structural edit whose preconditions do not hold."""


@dataclass(eq=False)
class AttributeNode:
    name: str
    start: int
    end: int
    mutable: bool = True

    def clone(self, shift: int = 0) -> "AttributeNode":
        return AttributeNode(self.name, self.start + shift, self.end + shift, self.mutable)

    def same_as(self, other) -> bool:
        return (self.name, self.start, self.end, self.mutable) == (
            other.name, other.start, other.end, other.mutable)


@dataclass(eq=False)
class SizeLink:
    """A number attribute that encodes the byte length of the region [start, end]."""

    attr: str
    start: int
    end: int
    size_bits: int
    endian: str = "little"

    def clone(self, shift: int = 0) -> "SizeLink":
        return SizeLink(self.attr, self.start + shift, self.end + shift, self.size_bits, self.endian)


@dataclass(eq=False)
class ChunkNode:
    id: int
    type: str
    start: int
    end: int
    children: List["ChunkNode"] = field(default_factory=list)
    attributes: List[AttributeNode] = field(default_factory=list)
    links: List[SizeLink] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def walk(self) -> Iterator["ChunkNode"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def clone(self, shift: int = 0) -> "ChunkNode":
        return ChunkNode(
            self.id, self.type, self.start + shift, self.end + shift,
            [c.clone(shift) for c in self.children],
            [a.clone(shift) for a in self.attributes],
            [k.clone(shift) for k in self.links],
        )

    def same_as(self, other: "ChunkNode", ignore_end: bool = False) -> bool:
        """Structural equality (ids, types, ranges, attributes)."""
        if (self.id, self.type, self.start) != (other.id, other.type, other.start):
            return False
        if not ignore_end and self.end != other.end:
            return False
        if len(self.attributes) != len(other.attributes) or len(self.children) != len(other.children):
            return False
        if not all(a.same_as(b) for a, b in zip(self.attributes, other.attributes)):
            return False
        return all(a.same_as(b) for a, b in zip(self.children, other.children))


@dataclass(eq=False)
class VirtualStructure:
    file_len: int
    root: Optional[ChunkNode]
    next_id: int = 0

    @property
    def unparsed(self) -> Optional[ChunkNode]:
        if self.root is not None and self.root.children and self.root.children[-1].type == UNPARSED:
            return self.root.children[-1]
        return None

    def nodes(self) -> Iterator[ChunkNode]:
        if self.root is not None:
            yield from self.root.walk()

    def find(self, node_id: int) -> Optional[ChunkNode]:
        for n in self.nodes():
            if n.id == node_id:
                return n
        return None

    def parent_of(self, node_id: int) -> Optional[ChunkNode]:
        for n in self.nodes():
            for c in n.children:
                if c.id == node_id:
                    return n
        return None

    def with_parents(self):
        """Yield (node, parent) for every non-root chunk, pre-order."""
        if self.root is None:
            return
        stack = [(c, self.root) for c in reversed(self.root.children)]
        while stack:
            node, parent = stack.pop()
            yield node, parent
            stack.extend((c, node) for c in reversed(node.children))

    def path_to(self, node_id: int) -> Optional[list]:
        """Chunks from the root down to node_id (inclusive)."""
        if self.root is None:
            return None
        stack = [(self.root, [self.root])]
        while stack:
            node, path = stack.pop()
            if node.id == node_id:
                return path
            stack.extend((c, path + [c]) for c in node.children)
        return None

    def attributes(self) -> Iterator[AttributeNode]:
        for n in self.nodes():
            yield from n.attributes

    def clone(self) -> "VirtualStructure":
        return VirtualStructure(self.file_len, None if self.root is None else self.root.clone(), self.next_id)

    def same_as(self, other: "VirtualStructure") -> bool:
        if self.file_len != other.file_len:
            return False
        if self.root is None or other.root is None:
            return self.root is other.root
        return self.root.same_as(other.root)

    # presentation -----------------------------------------------------

    def to_dict(self) -> dict:
        def node(n: ChunkNode) -> dict:
            return {
                "id": n.id, "type": n.type, "start": n.start, "end": n.end,
                "attributes": [
                    {"name": a.name, "start": a.start, "end": a.end, "mutable": a.mutable}
                    for a in n.attributes
                ],
                "children": [node(c) for c in n.children],
            }
        return {"file_len": self.file_len, "root": None if self.root is None else node(self.root)}

    def render(self) -> str:
        lines = []

        def visit(n: ChunkNode, depth: int):
            pad = "  " * depth
            lines.append(f"{pad}{n.type} #{n.id} [{n.start},{n.end}]")
            for a in n.attributes:
                flag = "" if a.mutable else " (immutable)"
                lines.append(f"{pad}  .{a.name} [{a.start},{a.end}]{flag}")
            for c in n.children:
                visit(c, depth + 1)

        if self.root is None:
            return "(empty)"
        visit(self.root, 0)
        return "\n".join(lines)


@dataclass
class EditResult:
    data: bytes
    vs: VirtualStructure
    delta: int


# ---------------------------------------------------------------------------
# index revision


def _revise(vs: VirtualStructure, ancestors: list, anchor: ChunkNode, after: int, delta: int) -> None:
    """Shift everything that starts at or after ``after`` by ``delta`` and
    stretch the ancestors (and their size-linked regions enclosing ``anchor``)."""
    grow = {id(a) for a in ancestors}
    for n in vs.nodes():
        if id(n) in grow:
            n.end += delta
            for k in n.links:
                if k.start <= anchor.start and k.end >= anchor.end:
                    k.end += delta
                elif k.start >= after:
                    k.start += delta
                    k.end += delta
        elif n.start >= after:
            n.start += delta
            n.end += delta
            for k in n.links:
                k.start += delta
                k.end += delta
        for a in n.attributes:
            if a.start >= after:
                a.start += delta
                a.end += delta
    vs.file_len += delta


def _fixup_sizes(buf: bytearray, ancestors: list, anchor_range: tuple) -> None:
    lo, hi = anchor_range
    for n in ancestors:
        for k in n.links:
            if not (k.start <= lo and k.end >= hi):
                continue
            attr = next((a for a in n.attributes if a.name == k.attr), None)
            width = k.size_bits // 8
            if attr is None or attr.end - attr.start + 1 != width:
                continue
            value = (k.end - k.start + 1) & ((1 << k.size_bits) - 1)
            buf[attr.start:attr.end + 1] = value.to_bytes(width, k.endian)


def _renumber(node: ChunkNode, vs: VirtualStructure) -> None:
    for n in node.walk():
        n.id = vs.next_id
        vs.next_id += 1


def _locate(vs: VirtualStructure, node_id: int, what: str) -> list:
    path = vs.path_to(node_id)
    if path is None:
        raise EditError(f"{what} {node_id} not found")
    if len(path) == 1:
        raise EditError(f"{what} {node_id} is the root chunk")
    return path


def _donor(vs: VirtualStructure, node_id: int) -> tuple:
    path = vs.path_to(node_id) if vs is not None else None
    if path is None or len(path) == 1:
        raise EditError(f"donor {node_id} must be a non-root chunk")
    return path[-1], path[-2]


# in-place variants; the public functions below copy their inputs first


def delete_in_place(buf: bytearray, vs: VirtualStructure, node_id: int, size_fixup: bool = True) -> int:
    path = _locate(vs, node_id, "chunk")
    node, parent = path[-1], path[-2]
    length = node.length
    del buf[node.start:node.end + 1]
    parent.children.remove(node)
    ancestors = path[:-1]
    _revise(vs, ancestors, node, node.end + 1, -length)
    if size_fixup:
        _fixup_sizes(buf, ancestors, (node.start, node.start - 1))
    return -length


def insert_in_place(buf: bytearray, vs: VirtualStructure, anchor_id: int,
                    donor_data: bytes, donor_vs: VirtualStructure, donor_id: int,
                    size_fixup: bool = True) -> int:
    path = _locate(vs, anchor_id, "anchor")
    anchor, parent = path[-1], path[-2]
    donor, donor_parent = _donor(donor_vs, donor_id)
    if anchor.type == UNPARSED or donor.type == UNPARSED:
        raise EditError("the unparsed remainder cannot take part in chunk addition")
    if parent.type != donor_parent.type:
        raise EditError(f"parent type mismatch: {parent.type} vs {donor_parent.type}")
    piece = bytes(donor_data[donor.start:donor.end + 1])
    at = anchor.end + 1
    ancestors = path[:-1]
    _revise(vs, ancestors, anchor, at, len(piece))
    buf[at:at] = piece
    fresh = donor.clone(at - donor.start)
    _renumber(fresh, vs)
    parent.children.insert(parent.children.index(anchor) + 1, fresh)
    if size_fixup:
        _fixup_sizes(buf, ancestors, (fresh.start, fresh.end))
    return len(piece)


def splice_in_place(buf: bytearray, vs: VirtualStructure, victim_id: int,
                    donor_data: bytes, donor_vs: VirtualStructure, donor_id: int,
                    size_fixup: bool = True) -> int:
    path = _locate(vs, victim_id, "victim")
    victim, parent = path[-1], path[-2]
    donor, _ = _donor(donor_vs, donor_id)
    if victim.type != donor.type:
        raise EditError(f"type mismatch: {victim.type} vs {donor.type}")
    if victim.type == UNPARSED:
        raise EditError("the unparsed remainder cannot be spliced")
    piece = bytes(donor_data[donor.start:donor.end + 1])
    delta = len(piece) - victim.length
    start, old_end = victim.start, victim.end
    ancestors = path[:-1]
    idx = parent.children.index(victim)
    del parent.children[idx]
    _revise(vs, ancestors, victim, old_end + 1, delta)
    buf[start:old_end + 1] = piece
    fresh = donor.clone(start - donor.start)
    _renumber(fresh, vs)
    parent.children.insert(idx, fresh)
    if size_fixup:
        _fixup_sizes(buf, ancestors, (fresh.start, fresh.end))
    return delta


def delete_range_as_chunk(data: bytes, vs: VirtualStructure, node_id: int,
                          size_fixup: bool = True) -> EditResult:
    """Remove a whole chunk from the file and from the tree."""
    buf, out = bytearray(data), vs.clone()
    delta = delete_in_place(buf, out, node_id, size_fixup)
    return EditResult(bytes(buf), out, delta)


def insert_chunk_after(data1: bytes, vs1: VirtualStructure, anchor_id: int,
                       data2: bytes, vs2: VirtualStructure, donor_id: int,
                       size_fixup: bool = True) -> EditResult:
    """Copy chunk ``donor_id`` of the second file right after ``anchor_id``.

    Both chunks must hang under parents of the same type. The donor may come
    from the same file.
    """
    buf, out = bytearray(data1), vs1.clone()
    delta = insert_in_place(buf, out, anchor_id, data2, vs2, donor_id, size_fixup)
    return EditResult(bytes(buf), out, delta)


def splice_chunk(data1: bytes, vs1: VirtualStructure, victim_id: int,
                 data2: bytes, vs2: VirtualStructure, donor_id: int,
                 size_fixup: bool = True) -> EditResult:
    """Replace a chunk with a same-typed chunk taken from a donor file."""
    buf, out = bytearray(data1), vs1.clone()
    delta = splice_in_place(buf, out, victim_id, data2, vs2, donor_id, size_fixup)
    return EditResult(bytes(buf), out, delta)


# ---------------------------------------------------------------------------
# consistency


def check_consistency(data: bytes, vs: VirtualStructure) -> list:
    """List every violated index invariant; empty means the tree fits the bytes."""
    out = []
    n_bytes = len(data)
    if vs.file_len != n_bytes:
        out.append(f"file_len {vs.file_len} != {n_bytes} bytes")
    root = vs.root
    if root is None:
        if n_bytes:
            out.append("non-empty file without root chunk")
        return out
    if root.start != 0 or root.end != n_bytes - 1:
        out.append(f"root #{root.id} spans [{root.start},{root.end}], file is [0,{n_bytes - 1}]")

    seen_ids = set()
    for node in root.walk():
        tag = f"{node.type}#{node.id}"
        if node.id in seen_ids:
            out.append(f"duplicate node id {node.id}")
        seen_ids.add(node.id)
        if node.start > node.end:
            out.append(f"{tag}: start {node.start} > end {node.end}")
        if node is not root:
            for c in node.children:
                if c.type == UNPARSED:
                    out.append(f"{c.type}#{c.id}: unparsed chunk below the root")

        items = []
        for a in node.attributes:
            label = f"{tag}.{a.name}"
            if a.start > a.end:
                out.append(f"{label}: start {a.start} > end {a.end}")
            items.append((a.start, a.end, label))
        for c in node.children:
            items.append((c.start, c.end, f"{c.type}#{c.id}"))
        for s, e, label in items:
            if s < node.start or e > node.end:
                out.append(f"{label} [{s},{e}] outside {tag} [{node.start},{node.end}]")
        for lst in (node.attributes, node.children):
            starts = [x.start for x in lst]
            if starts != sorted(starts):
                out.append(f"{tag}: members out of order")
        items.sort()
        for (s1, e1, l1), (s2, e2, l2) in zip(items, items[1:]):
            if s2 <= e1:
                out.append(f"overlap between {l1} [{s1},{e1}] and {l2} [{s2},{e2}]")
        for k in node.links:
            if k.start < node.start or k.end > node.end or k.end < k.start - 1:
                out.append(f"{tag}: size region of {k.attr} [{k.start},{k.end}] out of bounds")

    for i, c in enumerate(root.children):
        if c.type == UNPARSED and i != len(root.children) - 1:
            out.append(f"unparsed chunk #{c.id} is not the last child of the root")
    un = vs.unparsed
    if un is not None:
        tail = max([a.end for a in root.attributes] + [c.end for c in root.children[:-1]] + [-1])
        if tail >= un.start:
            out.append(f"unparsed chunk #{un.id} is followed by parsed content")
    return out
