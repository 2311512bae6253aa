"""Hand assembly of RIFF/WAVE files for fixtures and tests."""

import struct


def chunk(ckid: bytes, body: bytes, size=None) -> bytes:
    """A RIFF chunk; ``size`` overrides the header's cksize field."""
    n = len(body) if size is None else size
    pad = b"\0" if len(body) % 2 else b""
    return ckid + struct.pack("<I", n) + body + pad


def fmt(tag=1, channels=1, rate=8000, bits=16, align=None, avg=None) -> bytes:
    if align is None:
        align = channels * ((bits + 7) // 8)
    if avg is None:
        avg = rate * align
    return chunk(b"fmt ", struct.pack("<HHIIHH", tag, channels, rate, avg, align, bits))


def data(samples: bytes) -> bytes:
    return chunk(b"data", samples)


def wav(*chunks: bytes, riff_size=None) -> bytes:
    body = b"WAVE" + b"".join(chunks)
    n = len(body) if riff_size is None else riff_size
    return b"RIFF" + struct.pack("<I", n) + body


def minimal() -> bytes:
    """52 bytes: header, one 16-bit PCM fmt chunk, 8 bytes of samples."""
    return wav(fmt(), data(struct.pack("<4h", 0, 1000, -1000, 32767)))


def float_seed() -> bytes:
    samples = struct.pack("<8f", 0.0, 0.25, -0.25, 0.5, -0.5, 0.75, -0.75, 0.125)
    return wav(fmt(tag=3, bits=32, align=4), data(samples))


def pcm_seed() -> bytes:
    return wav(fmt(tag=1, bits=16, align=2), data(struct.pack("<8h", 0, 100, -100, 2000, -2000, 30000, -30000, 1)))


def double_fmt_poc() -> bytes:
    first = fmt(tag=3, bits=32, align=4)
    second = fmt(tag=1, channels=1, bits=1, align=1)
    return wav(first, second, data(bytes(8)))


def neg_copy_poc() -> bytes:
    return wav(fmt(), chunk(b"junk", bytes(8), size=0x80000000), data(bytes(8)))


def div_zero_poc() -> bytes:
    return wav(fmt(rate=0, avg=0), data(bytes(8)))


def fact(frames: int) -> bytes:
    return chunk(b"fact", struct.pack("<I", frames))


def info_list(**tags) -> bytes:
    body = b"INFO" + b"".join(chunk(k.encode().ljust(4)[:4], v.encode() + b"\0") for k, v in tags.items())
    return chunk(b"LIST", body)


def cue(points: int) -> bytes:
    body = struct.pack("<I", points) + b"".join(
        struct.pack("<II4sIII", i + 1, i * 100, b"data", 0, 0, i * 100) for i in range(points))
    return chunk(b"cue ", body)


def smpl(loops: int = 1) -> bytes:
    head = struct.pack("<9I", 0, 0, 125000, 60, 0, 0, 0, loops, 0)
    return chunk(b"smpl", head + b"".join(struct.pack("<6I", i, 0, 0, 100, 0, 0) for i in range(loops)))


def inst() -> bytes:
    return chunk(b"inst", bytes([60, 0, 0, 0, 127, 1, 127]))


def corpus() -> dict:
    """Varied, fully valid files that exercise the optional chunk kinds."""
    s16 = struct.pack("<8h", 0, 100, -100, 2000, -2000, 30000, -30000, 1)
    return {
        "minimal.wav": minimal(),
        "pcm_meta.wav": wav(fmt(), fact(8), info_list(INAM="tone", IART="x"), data(s16)),
        "float_cue.wav": wav(fmt(tag=3, bits=32, align=4), fact(4), cue(2),
                             data(struct.pack("<4f", 0.0, 0.5, -0.5, 1.0))),
        "u8_stereo_smpl.wav": wav(fmt(channels=2, bits=8, rate=22050), smpl(1), inst(),
                                  data(bytes([128, 128, 0, 255, 140, 100]))),
        "s24_list.wav": wav(fmt(bits=24, rate=48000), info_list(ICMT="c"), cue(1),
                            data(bytes(range(12)))),
    }
