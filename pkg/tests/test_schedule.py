import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from smartfuzz.cracker import crack
from smartfuzz.schedule import (
    CampaignClock,
    CorpusStats,
    ScheduleConfig,
    SeedEntry,
    SeedQueue,
    base_energy,
    choose_next,
    deferred_parse_probability,
    maybe_crack,
    validity_energy,
)

AVG = CorpusStats(avg_exec_time=100.0, avg_len=200.0)


def seed_of(exec_time, length, depth=0):
    return SeedEntry(0, bytes(length), exec_time=exec_time, depth=depth)


def test_config_bounds():
    with pytest.raises(ValueError):
        ScheduleConfig(max_energy=1)
    with pytest.raises(ValueError):
        ScheduleConfig(defer_epsilon=0)
    cfg = ScheduleConfig()
    assert cfg.max_energy == 1024 and cfg.defer_epsilon == 60.0


def test_base_energy_examples():
    assert base_energy(seed_of(100.0, 200), AVG) == 100
    assert base_energy(seed_of(50.0, 100), AVG) == 400
    assert base_energy(seed_of(10000.0, 200), AVG) == 10


def test_base_energy_depth_and_clamps():
    assert base_energy(seed_of(100.0, 200, depth=5), AVG) == 150
    assert base_energy(seed_of(100.0, 200, depth=40), AVG) == 200
    # fastest and smallest: 100 * 10 * 4 * 2 = 8000 clamps to U
    assert base_energy(seed_of(1.0, 1, depth=10), AVG) == 1024
    assert base_energy(seed_of(1.0, 1), AVG, ScheduleConfig(max_energy=64)) == 64


def test_validity_energy_examples():
    cfg = ScheduleConfig(max_energy=1024)
    assert validity_energy(10, Fraction(65, 100), cfg) == 20
    assert validity_energy(10, Fraction(40, 100), cfg) == 10
    assert validity_energy(600, Fraction(9, 10), cfg) == 1024
    assert validity_energy(512, Fraction(1, 2), cfg) == 1024
    assert validity_energy(10, None, cfg) == 10


def test_validity_energy_exhaustive():
    cfg = ScheduleConfig(max_energy=1024)
    vs = [Fraction(0), Fraction(49, 100), Fraction(1, 2), Fraction(1)]
    for p in range(1, 1025):
        out = [validity_energy(p, v, cfg) for v in vs]
        assert all(1 <= e <= 1024 for e in out)
        if p <= 512:
            assert out[0] < out[2] and out[1] < out[3]


@given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(1e-3, 1e3))
def test_probability_monotone_and_clamped(t1, t2, eps):
    lo, hi = sorted((t1, t2))
    p_lo, p_hi = deferred_parse_probability(lo, eps), deferred_parse_probability(hi, eps)
    assert 0.0 <= p_lo <= p_hi <= 1.0


def test_probability_examples():
    assert deferred_parse_probability(0, 60) == 0
    assert deferred_parse_probability(60, 60) == 1
    assert deferred_parse_probability(30, 60) == 0.5
    with pytest.raises(ValueError):
        deferred_parse_probability(1, 0)


def test_maybe_crack(wav_spec, minimal):
    cfg = ScheduleConfig(defer_epsilon=10.0)
    rng = random.Random(0)
    never = SeedEntry(0, minimal)
    for _ in range(100):
        maybe_crack(never, CampaignClock(now=5.0, last_new_path_at=5.0), cfg, rng, wav_spec)
    assert never.cracked is None
    s = SeedEntry(1, minimal)
    maybe_crack(s, CampaignClock(now=20.0, last_new_path_at=5.0), cfg, rng, wav_spec)
    assert s.validity == 1
    first = s.cracked
    maybe_crack(s, CampaignClock(now=99.0), cfg, rng, wav_spec)
    assert s.cracked is first
    assert s.vs.same_as(crack(wav_spec, minimal)[0])
    # no spec means no cracking at all
    plain = SeedEntry(2, minimal)
    maybe_crack(plain, CampaignClock(now=99.0), cfg, rng, None)
    assert plain.cracked is None


def test_maybe_crack_rate(wav_spec, minimal):
    cfg = ScheduleConfig(defer_epsilon=10.0)
    rng = random.Random(3)
    hits = 0
    for _ in range(2000):
        s = SeedEntry(0, minimal)
        maybe_crack(s, CampaignClock(now=2.5), cfg, rng, wav_spec)
        hits += s.cracked is not None
    assert 400 < hits < 600


def test_round_robin():
    q = SeedQueue()
    for name in "abc":
        q.add(name)
    assert [choose_next(q) for _ in range(4)] == ["a", "b", "c", "a"]
    q2 = SeedQueue(["a", "b", "c"])
    out = [choose_next(q2), choose_next(q2)]
    q2.add("d")
    out += [choose_next(q2) for _ in range(3)]
    assert out == ["a", "b", "c", "d", "a"]
    single = SeedQueue(["s"])
    assert [choose_next(single) for _ in range(3)] == ["s"] * 3
    with pytest.raises(IndexError):
        choose_next(SeedQueue())
