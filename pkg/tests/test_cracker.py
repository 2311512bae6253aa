from fractions import Fraction

from hypothesis import given, settings, strategies as st

from smartfuzz.cracker import crack, crack_with_diagnostics, validity
from smartfuzz.vstruct import UNPARSED, VirtualStructure, ChunkNode, check_consistency

import wavbuild


def layout(fields, start):
    """Offset-summing oracle: name -> inclusive (start, end) for consecutive fields."""
    out, cur = {}, start
    for name, width in fields:
        out[name] = (cur, cur + width - 1)
        cur += width
    return out, cur


def expected_minimal_tree():
    header, cur = layout([("ckID", 4), ("cksize", 4), ("WAVE", 4)], 0)
    fmt_attrs, fmt_end = layout([("ckID", 4), ("cksize", 4), ("wFormatTag", 2), ("nChannels", 2),
                                 ("nSampleRate", 4), ("nAvgBytesPerSec", 4), ("nBlockAlign", 2),
                                 ("nBitsPerSample", 2)], cur)
    data_attrs, data_end = layout([("ckID", 4), ("cksize", 4), ("Data", 8)], fmt_end)
    return {
        "root": ("Wav", 0, data_end - 1, header),
        "fmt": ("ChunkFmt", cur, fmt_end - 1, fmt_attrs),
        "data": ("ChunkData", fmt_end, data_end - 1, data_attrs),
    }


def attrs(node):
    return {a.name: (a.start, a.end) for a in node.attributes}


def test_minimal_wave_tree(wav_spec, minimal):
    assert len(minimal) == 52
    vs, v = crack(wav_spec, minimal)
    exp = expected_minimal_tree()
    root = vs.root
    assert (root.type, root.start, root.end) == exp["root"][:3] == ("Wav", 0, 51)
    assert attrs(root) == exp["root"][3]
    fmt, data = root.children
    assert (fmt.type, fmt.start, fmt.end) == exp["fmt"][:3] == ("ChunkFmt", 12, 35)
    assert attrs(fmt) == exp["fmt"][3] and len(fmt.attributes) == 8
    assert (data.type, data.start, data.end) == exp["data"][:3] == ("ChunkData", 36, 51)
    assert attrs(data) == exp["data"][3]
    assert v == 1 and vs.unparsed is None
    assert [n.id for n in vs.nodes()] == [0, 1, 2]


def test_mutability_flags(wav_spec, minimal):
    vs, _ = crack(wav_spec, minimal)
    fmt = vs.root.children[0]
    flags = {a.name: a.mutable for a in fmt.attributes}
    assert flags["ckID"] is False and flags["cksize"] is False
    assert all(flags[k] for k in ("wFormatTag", "nChannels", "nSampleRate", "nBitsPerSample"))


def test_partial_validity_sixty_five_percent(wav_spec):
    # 130 bytes of well-formed RIFF followed by 70 bytes outside the RIFF extent
    good = wavbuild.wav(wavbuild.fmt(), wavbuild.data(bytes(86)))
    data = good + b"junk" + bytes(66)
    assert len(data) == 200
    vs, v = crack(wav_spec, data)
    assert v == Fraction(13, 20)
    assert float(v) == 0.65
    un = vs.unparsed
    assert (un.start, un.end) == (130, 199)
    assert check_consistency(data, vs) == []


def test_oversized_data_size_clamps_without_losing_validity(wav_spec):
    data = wavbuild.wav(wavbuild.fmt(), wavbuild.chunk(b"data", bytes(20), size=500))
    vs, v, notes = crack_with_diagnostics(wav_spec, data)
    assert v == 1
    assert any("clamped" in n for n in notes)
    assert vs.root.children[-1].end == len(data) - 1


def test_token_mismatch_at_start(wav_spec):
    data = b"XXXX" * 25
    vs, v = crack(wav_spec, data)
    assert v == 0
    assert [c.type for c in vs.root.children] == [UNPARSED]
    assert (vs.unparsed.start, vs.unparsed.end) == (0, 99)


def test_empty_file(wav_spec):
    vs, v = crack(wav_spec, b"")
    assert v == 0 and vs.file_len == 0 and vs.root is None


def test_validity_examples():
    def vs_with_unparsed(n, k):
        root = ChunkNode(0, "R", 0, n - 1)
        if k:
            root.children.append(ChunkNode(1, UNPARSED, n - k, n - 1))
        return VirtualStructure(n, root)
    assert validity(vs_with_unparsed(52, 0)) == 1
    assert validity(vs_with_unparsed(100, 35)) == Fraction(65, 100)
    assert validity(vs_with_unparsed(100, 100)) == 0
    assert validity(VirtualStructure(0, None)) == 0


def test_padding_aligns_odd_chunks(wav_spec):
    data = wavbuild.wav(wavbuild.fmt(), wavbuild.chunk(b"abcd", b"xyz"), wavbuild.data(bytes(4)))
    vs, v = crack(wav_spec, data)
    assert v == 1
    other = vs.root.children[1]
    assert other.type == "Chunk"
    assert attrs(other)["Padding"] == (other.end, other.end)


def test_optional_chunks_recognized(wav_spec, fixture_files):
    for name, data in fixture_files.items():
        vs, v = crack(wav_spec, data)
        assert v == 1, name
        assert check_consistency(data, vs) == []
    vs, _ = crack(wav_spec, fixture_files["float_cue.wav"])
    assert [c.type for c in vs.root.children] == ["ChunkFmt", "ChunkFact", "ChunkCue", "ChunkData"]


def coverage_partition(vs):
    """Every byte in exactly one attribute, slack, or unparsed; counts attribute claims."""
    claims = [0] * vs.file_len
    for a in vs.attributes():
        for i in range(a.start, a.end + 1):
            claims[i] += 1
    if vs.unparsed is not None:
        for i in range(vs.unparsed.start, vs.unparsed.end + 1):
            claims[i] += 1
    return claims


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=120))
def test_crack_arbitrary_bytes_is_consistent(wav_spec, data):
    vs, v = crack(wav_spec, data)
    assert check_consistency(data, vs) == []
    assert 0 <= v <= 1
    assert all(c <= 1 for c in coverage_partition(vs))
    again, v2 = crack(wav_spec, data)
    assert again.same_as(vs) and v2 == v


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=1, max_size=40))
def test_prefix_preserved_under_garbage(wav_spec, garbage):
    base = wavbuild.minimal()
    vs1, _ = crack(wav_spec, base)
    vs2, v2 = crack(wav_spec, base + garbage)
    assert v2 <= 1
    for a, b in zip(vs1.root.children, vs2.root.children):
        assert a.same_as(b)
