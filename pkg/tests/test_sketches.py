import itertools
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpdisj.core import CorruptPayload, InvalidArgument, NonIntegerWeight
from fpdisj.sketches import (
    AmsFpSketch,
    ExactEstimator,
    KmvF0Sketch,
    NoisyOracleEstimator,
    amplification_plan,
    derive_seed,
    deserialize,
    reservoir_update,
    splitmix64,
    splitmix64_array,
)


def test_splitmix64_reference_vector():
    # first output of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    xs = np.array([0, 1, 2**63, 2**64 - 1], dtype=np.uint64)
    assert [int(v) for v in splitmix64_array(xs)] == [splitmix64(int(x)) for x in xs]


def test_derive_seed_distinct():
    seeds = {derive_seed(7, c) for c in range(1000)}
    assert len(seeds) == 1000


# ---------------------------------------------------------------------------
# amplification


def test_amplification_plan_values():
    rows, cols, k = amplification_plan(0.025, n=4096)
    # 2 * ceil(18 ln(20 * 4096)) + 1
    assert rows == 2 * math.ceil(18 * math.log(81920)) + 1 == 409
    assert cols == 25600 and k == 19200
    assert amplification_plan(0.025, 0.05)[0] == 109
    assert amplification_plan("9/100", "1/81920")[1] == math.ceil(16 / 0.0081)
    with pytest.raises(InvalidArgument):
        amplification_plan(0.1)
    with pytest.raises(InvalidArgument):
        amplification_plan(1.5, 0.1)


# ---------------------------------------------------------------------------
# KMV


def test_kmv_exact_below_k_and_idempotent():
    s = KmvF0Sketch(10_000, 64, seed=5)
    s.insert_many(range(1, 41))
    s.insert_many(range(1, 41))
    assert s.estimate() == 40.0
    a = KmvF0Sketch(10_000, 64, seed=5)
    a.insert_many(range(1, 3001))
    b = KmvF0Sketch(10_000, 64, seed=5)
    b.insert_many(list(range(1, 3001)) * 3)
    assert a.estimate() == b.estimate()


def test_kmv_empty_payload_size():
    s = KmvF0Sketch(4096, 128, seed=1)
    assert len(s.serialize()) == 45
    s.insert_many([1, 2, 3])
    assert len(s.serialize()) == 45 + 24


def test_kmv_calibration():
    truth = 5000
    good = 0
    for seed in range(400):
        s = KmvF0Sketch(2**20, 1024, seed=derive_seed(99, seed))
        s.insert_many(range(1, truth + 1))
        good += abs(s.estimate() / truth - 1) <= 0.1
    assert good / 400 >= 0.95


@pytest.mark.parametrize("truth", [100, 1000, 5000])
def test_kmv_mean_ratio(truth):
    ests = []
    for seed in range(200):
        s = KmvF0Sketch(2**20, 64, seed=derive_seed(3, seed))
        s.insert_many(range(1, truth + 1))
        ests.append(s.estimate() / truth)
    assert 0.97 <= np.mean(ests) <= 1.03


# ---------------------------------------------------------------------------
# AMS


def enumerate_batches(batches, p):
    """Exact mean of a single sampler's basic estimate over every draw sequence."""
    lengths = []
    total = 0
    for idx, w in batches:
        lengths.append((total, total + sum(w)))
        total += sum(w)
    draws = list(itertools.product(*[range(hi) for _, hi in lengths]))
    pos = np.array(draws, dtype=np.int64).T  # one row per batch, one column per sampler
    item = np.zeros(pos.shape[1], dtype=np.int64)
    cnt = np.zeros(pos.shape[1], dtype=np.int64)
    for (idx, w), (length, _), row in zip(batches, lengths, pos):
        item, cnt = reservoir_update(item, cnt, length, np.array(idx), np.array(w), row)
    c = cnt.astype(float)
    return float(np.mean(total * (c**p - (c - 1) ** p)))


def exact_fp(batches, p):
    freq = {}
    for idx, w in batches:
        for i, x in zip(idx, w):
            freq[i] = freq.get(i, 0) + x
    return sum(v**p for v in freq.values())


def test_ams_single_weighted_item_expectation():
    assert enumerate_batches([([5], [4])], 3) == 64.0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.lists(st.tuples(st.integers(1, 4), st.integers(1, 3)), min_size=1, max_size=4),
        min_size=1,
        max_size=3,
    ),
    st.sampled_from([2, 3, 4]),
)
def test_ams_unbiased_by_enumeration(raw, p):
    batches = [([i for i, _ in b], [w for _, w in b]) for b in raw]
    total = sum(sum(w) for _, w in batches)
    draws = math.prod(range(1, total + 1))  # bounded by product of prefix lengths
    if total > 32 or draws > 2_000_000:
        return
    got = enumerate_batches(batches, p)
    assert got == pytest.approx(exact_fp(batches, p), rel=1e-12)


def test_ams_payload_affine_in_samplers():
    sizes = {}
    for rows, cols in ((2, 4), (8, 8), (16, 32)):
        s = AmsFpSketch(4096, 3, rows, cols, seed=1)
        s.insert_many([1, 2, 3])
        sizes[rows * cols] = len(s.serialize())
    xs = sorted(sizes)
    slope = (sizes[xs[-1]] - sizes[xs[0]]) / (xs[-1] - xs[0])
    assert slope == AmsFpSketch.RECORD_BYTES == 8
    assert sizes[8] - 8 * 8 == sizes[512] - 8 * 512 == 29 + 24 + 37


def test_ams_rejects_fractional_weight():
    s = AmsFpSketch(100, 3, 3, 3)
    with pytest.raises(NonIntegerWeight):
        s.insert(1, 2.5)
    with pytest.raises(NonIntegerWeight):
        s.probe(1.5)


def test_ams_concentrates():
    s = AmsFpSketch(4096, 3, 21, 2000, seed=11)
    idx = np.arange(1, 1001)
    s.insert_many(idx)
    s.insert_many([7], [8])
    truth = 999 + 9**3
    assert abs(s.estimate() / truth - 1) < 0.1


def test_ams_batched_probe_matches_fork_loop():
    s = AmsFpSketch(64, 3, 5, 40, seed=2)
    s.insert_many([3, 9, 9, 20, 41])
    s.insert_many([9, 50])
    probe = s.probe(4)
    for i in range(1, 65):
        f = s.fork()
        f.insert(i, 4)
        assert probe.value_at(i) == f.estimate()


def test_fork_isolation():
    for s in (AmsFpSketch(50, 3, 3, 5, seed=1), KmvF0Sketch(50, 8, 1), ExactEstimator(50, 3)):
        s.insert_many([1, 2, 3])
        before = s.serialize()
        f = s.fork()
        f.insert_many([4, 5, 5])
        assert s.serialize() == before
        assert f.serialize() != before


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(1, 200), max_size=50),
    st.lists(st.integers(1, 200), max_size=20),
    st.integers(0, 2**32),
)
def test_serialize_round_trip(first, second, seed):
    sketches = [
        AmsFpSketch(200, 3, 3, 4, seed=seed),
        KmvF0Sketch(200, 16, seed),
        ExactEstimator(200, 3),
        NoisyOracleEstimator(200, 3, 0.1, "random", seed=seed),
    ]
    for s in sketches:
        s.insert_many(first)
        back = deserialize(s.serialize())
        assert type(back) is type(s)
        assert back.serialize() == s.serialize()
        assert back.estimate() == s.estimate()
        # continuation after a round trip matches the original
        if second:
            s.insert_many(second)
            back.insert_many(second)
        assert back.estimate() == s.estimate()


# ---------------------------------------------------------------------------
# noisy oracle


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 100), min_size=1, max_size=30), st.integers(0, 2**31))
def test_noisy_random_within_band(items, seed):
    s = NoisyOracleEstimator(100, 3, 0.1, "random", seed=seed)
    s.insert_many(items)
    ex = s.exact()
    assert (1 - 0.1) * ex - 1e-9 <= s.estimate() <= (1 + 0.1) * ex + 1e-9


def test_noisy_adversarial_endpoints():
    high = NoisyOracleEstimator(100, 3, 0.025, "adversarial", heavy=2, boost=8)
    high.insert(1, 10)  # 10 >= boost + heavy - 0.5
    assert high.estimate() == pytest.approx(975.0)
    plain = NoisyOracleEstimator(100, 3, 0.025, "adversarial")
    plain.insert(1, 10)
    assert plain.estimate() == pytest.approx(1025.0)
    f0 = NoisyOracleEstimator(2000, 0.0, 0.025, "adversarial", heavy=2)
    f0.insert_many(range(1, 1001))
    assert f0.estimate() == pytest.approx(975.0)
    f0.insert(3)
    assert f0.estimate() == pytest.approx(1025.0)
    with pytest.raises(InvalidArgument):
        NoisyOracleEstimator(10, 3, 0.1, "sideways")


def test_exact_probe_representative():
    s = ExactEstimator(1000, 3)
    s.insert_many([1, 2, 2, 5])
    probe = s.probe(3)
    assert probe.value_at(2) == 1 + 5**3 + 1
    assert probe.value_at(700) == 1 + 8 + 1 + 27
    assert probe.value_at(1) == probe.value_at(5) == 64 + 8 + 1
    assert probe.first_at_least(100) == 2
    assert probe.first_at_least(37) == 1
    assert probe.first_at_least(1e9) is None


# ---------------------------------------------------------------------------
# corrupt payloads


def test_corrupt_payloads():
    s = AmsFpSketch(100, 3, 2, 2, seed=1)
    s.insert_many([1, 2])
    good = s.serialize()
    with pytest.raises(CorruptPayload):
        deserialize(good[:10])
    with pytest.raises(CorruptPayload):
        deserialize(good[:-1])
    with pytest.raises(CorruptPayload):
        deserialize(good + b"\0")
    with pytest.raises(CorruptPayload):
        deserialize(b"ZZZZ" + good[4:])
    with pytest.raises(CorruptPayload):
        deserialize(good[:4] + b"\x09" + good[5:])
    k = KmvF0Sketch(100, 4, 1)
    k.insert_many([1, 2, 3])
    raw = bytearray(k.serialize())
    raw[-16:] = raw[-8:] + raw[-16:-8]  # swap the last two hashes
    with pytest.raises(CorruptPayload):
        deserialize(bytes(raw))
    with pytest.raises(CorruptPayload):
        KmvF0Sketch.deserialize(good)
    e = ExactEstimator(10, 3)
    e.insert(4)
    raw = bytearray(e.serialize())
    raw[-16:-8] = struct.pack("<Q", 99)
    with pytest.raises(CorruptPayload):
        deserialize(bytes(raw))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 40), max_size=30), st.sampled_from([0.0, 3, 4]), st.integers(1, 9))
def test_exact_probe_closed_form_matches_forks(items, p, w):
    s = ExactEstimator(40, p)
    s.insert_many(items)
    probe = s.probe(w)
    for i in range(1, 41):
        f = s.fork()
        f.insert(i, w)
        assert probe.value_at(i) == f.estimate()
