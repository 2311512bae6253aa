import random

import pytest
from hypothesis import given, settings, strategies as st

from smartfuzz.cracker import crack
from smartfuzz.vstruct import (
    UNPARSED,
    AttributeNode,
    ChunkNode,
    EditError,
    VirtualStructure,
    check_consistency,
    delete_range_as_chunk,
    insert_chunk_after,
    splice_chunk,
)

import wavbuild


def spans(vs):
    return [(n.type, n.start, n.end) for n in vs.nodes()]


def u32(data, off):
    return int.from_bytes(data[off:off + 4], "little")


def test_delete_fmt(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    res = delete_range_as_chunk(minimal, vs, 1)
    assert len(res.data) == 28 and res.delta == -24
    assert res.vs.root.end == 27
    assert [(c.type, c.start, c.end) for c in res.vs.root.children] == [("ChunkData", 12, 27)]
    assert res.data[12:] == minimal[36:]
    assert u32(res.data, 4) == 20  # RIFF size rewritten
    assert check_consistency(res.data, res.vs) == []


def test_delete_data(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    res = delete_range_as_chunk(minimal, vs, 2)
    assert len(res.data) == 36 and res.vs.root.end == 35
    fmt = res.vs.root.children[0]
    assert (fmt.start, fmt.end) == (12, 35)
    assert res.data[:4] == minimal[:4] and res.data[8:36] == minimal[8:36]


def test_delete_root_rejected(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    before = vs.clone()
    with pytest.raises(EditError):
        delete_range_as_chunk(minimal, vs, 0)
    with pytest.raises(EditError):
        delete_range_as_chunk(minimal, vs, 99)
    assert vs.same_as(before)


def test_insert_second_fmt(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    res = insert_chunk_after(minimal, vs, 1, minimal, vs, 1)
    assert len(res.data) == 76 and res.delta == 24
    kids = [(c.type, c.start, c.end) for c in res.vs.root.children]
    assert kids == [("ChunkFmt", 12, 35), ("ChunkFmt", 36, 59), ("ChunkData", 60, 75)]
    assert res.data[36:60] == minimal[12:36]
    assert u32(res.data, 4) == 68
    assert check_consistency(res.data, res.vs) == []
    # ids stay unique and the copy gets fresh ones
    ids = [n.id for n in res.vs.nodes()]
    assert len(ids) == len(set(ids))


def test_insert_second_data(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    res = insert_chunk_after(minimal, vs, 2, minimal, vs, 2)
    assert [c.type for c in res.vs.root.children] == ["ChunkFmt", "ChunkData", "ChunkData"]
    assert len(list(res.vs.nodes())) == len(list(vs.nodes())) + 1


def test_insert_parent_type_mismatch(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    # donor under a ChunkFmt parent
    donor = VirtualStructure(52, ChunkNode(0, "Wav", 0, 51, children=[
        ChunkNode(1, "ChunkFmt", 12, 35, children=[ChunkNode(2, "Inner", 20, 23)])]), 3)
    with pytest.raises(EditError, match="parent type"):
        insert_chunk_after(minimal, vs, 1, minimal, donor, 2)
    with pytest.raises(EditError):
        insert_chunk_after(minimal, vs, 0, minimal, vs, 1)


def test_splice_same_length(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    other = wavbuild.wav(wavbuild.fmt(channels=2, rate=44100), wavbuild.data(bytes(8)))
    ovs, _ = crack(wav_spec, other)
    res = splice_chunk(minimal, vs, 1, other, ovs, 1)
    assert len(res.data) == len(minimal) and res.delta == 0
    assert spans(res.vs) == spans(vs)
    assert res.data[12:36] == other[12:36] and res.data != minimal


def test_splice_longer_data(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    other = wavbuild.wav(wavbuild.fmt(), wavbuild.data(bytes(16)))
    ovs, _ = crack(wav_spec, other)
    res = splice_chunk(minimal, vs, 2, other, ovs, 2)
    assert len(res.data) == 60 and res.vs.root.end == 59 and res.delta == 8
    assert check_consistency(res.data, res.vs) == []


def test_splice_type_mismatch(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    with pytest.raises(EditError, match="type mismatch"):
        splice_chunk(minimal, vs, 1, minimal, vs, 2)


def test_fresh_crack_consistent(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    assert check_consistency(minimal, vs) == []


def test_overlap_names_both_nodes():
    root = ChunkNode(0, "R", 0, 19, children=[ChunkNode(1, "A", 0, 9), ChunkNode(2, "B", 5, 19)])
    diags = check_consistency(bytes(20), VirtualStructure(20, root, 3))
    assert len(diags) == 1
    assert "A#1" in diags[0] and "B#2" in diags[0]


def test_unparsed_must_be_last():
    root = ChunkNode(0, "R", 0, 19, children=[ChunkNode(1, UNPARSED, 0, 9), ChunkNode(2, "B", 10, 19)])
    diags = check_consistency(bytes(20), VirtualStructure(20, root, 3))
    assert any("not the last child" in d for d in diags)


def test_attribute_outside_parent():
    root = ChunkNode(0, "R", 0, 9, attributes=[AttributeNode("a", 8, 12, True)])
    assert check_consistency(bytes(10), VirtualStructure(10, root, 1))


def random_edit(rng, data, vs, pool, fixup=True):
    kinds = ["delete", "add", "splice"]
    rng.shuffle(kinds)
    chunks = list(vs.with_parents())
    for kind in kinds:
        if kind == "delete":
            cands = [c for c, _ in chunks if c.length < len(data)]
            if cands:
                return delete_range_as_chunk(data, vs, rng.choice(cands).id, fixup)
            continue
        d_data, d_vs = rng.choice(pool)
        own = [(c, p) for c, p in chunks if c.type != UNPARSED]
        donors = [(c, p) for c, p in d_vs.with_parents() if c.type != UNPARSED]
        if kind == "add":
            pairs = [(a, d) for a, pa in own for d, pd in donors if pa.type == pd.type]
            if pairs:
                a, d = rng.choice(pairs)
                return insert_chunk_after(data, vs, a.id, d_data, d_vs, d.id, fixup)
        else:
            pairs = [(a, d) for a, _ in own for d, _ in donors if a.type == d.type]
            if pairs:
                a, d = rng.choice(pairs)
                return splice_chunk(data, vs, a.id, d_data, d_vs, d.id, fixup)
    return None


def test_sixty_four_stacked_edits_stay_consistent(wav_spec, minimal, fixture_files):
    pool = [(d, crack(wav_spec, d)[0]) for d in fixture_files.values()]
    rng = random.Random(5)
    for trial in range(20):
        data, vs = minimal, crack(wav_spec, minimal)[0]
        for _ in range(64):
            res = random_edit(rng, data, vs, pool)
            if res is None:
                break
            assert len(res.data) == len(data) + res.delta
            data, vs = res.data, res.vs
            assert check_consistency(data, vs) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_edit_properties(wav_spec, fixture_files, seed):
    rng = random.Random(seed)
    names = sorted(fixture_files)
    data = fixture_files[rng.choice(names)]
    vs, _ = crack(wav_spec, data)
    pool = [(d, crack(wav_spec, d)[0]) for d in fixture_files.values()]
    before = vs.clone()
    res = random_edit(rng, data, vs, pool)
    assert vs.same_as(before)  # input untouched
    assert check_consistency(res.data, res.vs) == []
    assert len(res.data) == len(data) + res.delta


def test_insert_then_delete_restores_without_fixup(wav_spec, fixture_files):
    for data in fixture_files.values():
        vs, _ = crack(wav_spec, data)
        for anchor, parent in list(vs.with_parents()):
            if parent is not vs.root:
                continue
            ins = insert_chunk_after(data, vs, anchor.id, data, vs, anchor.id, size_fixup=False)
            copy = next(c for c in ins.vs.root.children if c.start == anchor.end + 1)
            back = delete_range_as_chunk(ins.data, ins.vs, copy.id, size_fixup=False)
            assert back.data == data


def test_prefix_untouched(wav_spec, fixture_files):
    for data in fixture_files.values():
        vs, _ = crack(wav_spec, data)
        for node, parent in list(vs.with_parents()):
            if parent is not vs.root:
                continue
            res = delete_range_as_chunk(data, vs, node.id, size_fixup=False)
            assert res.data[:node.start] == data[:node.start]
            assert spans(res.vs)[0][1:] == (0, len(res.data) - 1)
            keep = [x for x in spans(vs) if not (node.start <= x[1] and x[2] <= node.end)]
            expect = [(t, a - node.length if a > node.end else a, b - node.length if b >= node.end else b)
                      for t, a, b in keep]
            got = spans(res.vs)
            assert got == expect
