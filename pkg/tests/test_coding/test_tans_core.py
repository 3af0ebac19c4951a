import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from tans_weights.distributions import Distribution, delta_h_bound, histogram, shannon_entropy
from tans_weights.errors import (
    CorruptStreamError,
    TableTooSmallError,
    TansWeightsError,
    UnencodableSymbolError,
)
from tans_weights.huffman import huffman_rate
from tans_weights.tans_core import (
    DecodeCounters,
    EncodedStream,
    NormalizedHistogram,
    build_tables,
    decode,
    encode,
    iter_table_rows,
    lut_footprint,
    max_zero_bit_run,
    measured_rate,
    normalize_freqs,
    spread_step,
    state_width_bits,
)


def tables_for(counts, l):
    h = normalize_freqs(Distribution(alphabet_size=len(counts), counts=tuple(counts)), l)
    return build_tables(h)


def exact_sequence(counts, seed=0):
    symbols = np.repeat(np.arange(len(counts)), counts)
    np.random.default_rng(seed).shuffle(symbols)
    return symbols


def test_normalize_freqs_examples():
    assert normalize_freqs(Distribution(alphabet_size=2, counts=(1, 1)), 4).freqs == (2, 2)
    assert normalize_freqs(Distribution(alphabet_size=2, counts=(3, 1)), 4).freqs == (3, 1)
    with pytest.raises(TableTooSmallError):
        normalize_freqs(Distribution(alphabet_size=3, counts=(1, 1, 1)), 2)


def test_normalize_freqs_keeps_rare_symbols():
    h = normalize_freqs(Distribution(alphabet_size=4, counts=(100_000, 1, 0, 1)), 64)
    assert sum(h.freqs) == 64
    assert h.freqs[1] == 1 and h.freqs[3] == 1
    assert h.freqs[2] == 0


def test_normalize_freqs_ties_go_to_lowest_symbol():
    h = normalize_freqs(Distribution(alphabet_size=3, counts=(1, 1, 1)), 4)
    assert h.freqs == (2, 1, 1)


def test_normalize_freqs_rejects_bad_table_size():
    with pytest.raises(TansWeightsError):
        normalize_freqs(Distribution(alphabet_size=2, counts=(1, 1)), 100)


@given(
    st.lists(st.integers(0, 1000), min_size=1, max_size=256).filter(lambda c: any(c)),
    st.sampled_from([64, 128, 256, 1024, 4096]),
)
@settings(max_examples=200, deadline=None)
def test_normalize_freqs_properties(counts, l):
    dist = Distribution(alphabet_size=len(counts), counts=tuple(counts))
    if len(dist.present_symbols) > l:
        with pytest.raises(TableTooSmallError):
            normalize_freqs(dist, l)
        return
    h = normalize_freqs(dist, l)
    assert sum(h.freqs) == l
    for count, freq in zip(counts, h.freqs):
        assert (freq >= 1) == (count > 0)


def test_normalized_histogram_validation():
    with pytest.raises(ValidationError):
        NormalizedHistogram(table_size=8, freqs=(4, 3))
    with pytest.raises(ValidationError):
        NormalizedHistogram(table_size=12, freqs=(6, 6))


def test_spread_step_is_coprime_with_table_size():
    for l in (2, 4, 8, 16, 64, 256, 4096):
        assert math.gcd(spread_step(l), l) == 1
    assert spread_step(256) == 163


def test_decode_table_invariants():
    counts = (50, 20, 10, 10, 7, 3)
    _, t = tables_for(counts, 64)
    h = normalize_freqs(Distribution(alphabet_size=6, counts=counts), 64)
    for s, freq in enumerate(h.freqs):
        assert t.symbols.count(s) == freq
    for bits, base in zip(t.nb_bits, t.new_x):
        assert 0 <= base and base + (1 << bits) - 1 < 64
        assert 0 <= bits <= state_width_bits(64)


def test_single_symbol_table_reads_no_bits():
    encode_table, decode_table = tables_for([5], 256)
    assert set(decode_table.nb_bits) == {0}
    stream = encode([0] * 1000, encode_table)
    assert stream.bit_length <= math.log2(2 * 256)
    assert stream.final_state == 256
    np.testing.assert_array_equal(decode(stream, decode_table), np.zeros(1000))
    assert measured_rate(stream) < 0.01


def test_balanced_two_symbol_table_reads_one_bit():
    encode_table, decode_table = tables_for([1, 1], 256)
    assert set(decode_table.nb_bits) == {1}
    symbols = exact_sequence([50_000, 50_000])
    stream = encode(symbols, encode_table)
    assert measured_rate(stream) == pytest.approx(1.0, abs=0.001)


def test_empty_sequence():
    encode_table, decode_table = tables_for([3, 1], 64)
    stream = encode([], encode_table)
    assert stream.bit_length == 0
    assert stream.payload == b""
    assert stream.final_state == 64
    assert decode(stream, decode_table).size == 0
    with pytest.raises(TansWeightsError):
        measured_rate(stream)


def test_unencodable_symbol():
    encode_table, _ = tables_for([3, 0, 1], 64)
    with pytest.raises(UnencodableSymbolError):
        encode([0, 1, 2], encode_table)
    with pytest.raises(UnencodableSymbolError):
        encode([0, 3], encode_table)


def test_encode_is_deterministic():
    encode_table, _ = tables_for([7, 2, 1], 128)
    symbols = exact_sequence([700, 200, 100], seed=3)
    assert encode(symbols, encode_table) == encode(symbols, encode_table)


@given(st.data())
@settings(max_examples=300, deadline=None)
def test_round_trip(data):
    l = data.draw(st.sampled_from([64, 128, 256, 1024]))
    alphabet_size = data.draw(st.integers(2, min(256, l)))
    symbols = data.draw(st.lists(st.integers(0, alphabet_size - 1), max_size=2000))
    counts = np.bincount(np.array(symbols, dtype=np.int64), minlength=alphabet_size)
    if not counts.any():
        counts[0] = 1
    encode_table, decode_table = tables_for(counts.tolist(), l)
    stream = encode(symbols, encode_table)
    assert stream.bit_length <= 8 * len(stream.payload) < stream.bit_length + 8
    assert decode(stream, decode_table).tolist() == symbols


@pytest.mark.parametrize("l", [64, 128, 256, 1024])
def test_round_trip_long_sequences(l):
    rng = np.random.default_rng(l)
    alphabet_size = min(l, 256)
    symbols = rng.zipf(1.3, size=100_000) % alphabet_size
    encode_table, decode_table = tables_for(histogram(symbols, alphabet_size).counts, l)
    stream = encode(symbols, encode_table)
    np.testing.assert_array_equal(decode(stream, decode_table), symbols)


def test_round_trip_many_short_sequences():
    rng = np.random.default_rng(7)
    for case in range(10_000):
        l = int(rng.choice([64, 128, 256, 1024]))
        alphabet_size = int(rng.integers(2, min(256, l) + 1))
        probs = rng.dirichlet(np.full(alphabet_size, 0.5))
        symbols = rng.choice(alphabet_size, size=int(rng.integers(0, 201)), p=probs)
        counts = np.bincount(symbols, minlength=alphabet_size)
        if not counts.any():
            counts[0] = 1
        encode_table, decode_table = tables_for(counts.tolist(), l)
        stream = encode(symbols, encode_table)
        assert decode(stream, decode_table).tolist() == symbols.tolist(), f"case {case}, l={l}"


def test_rate_close_to_entropy():
    symbols = exact_sequence([900_000, 100_000])
    dist = histogram(symbols, 2)
    encode_table, decode_table = tables_for(dist.counts, 256)
    stream = encode(symbols, encode_table)
    gap = measured_rate(stream) - shannon_entropy(dist)
    assert abs(shannon_entropy(dist) - 0.46899559) < 1e-8
    assert gap <= 0.01
    assert gap <= 2 * delta_h_bound(dist, 256)
    np.testing.assert_array_equal(decode(stream, decode_table), symbols)


@pytest.mark.parametrize(
    "counts",
    [
        (180_000, 20_000),
        (160_000, 30_000, 10_000),
        (140_000, 40_000, 20_000),
        (190_000, 8_000, 2_000),
        (80_000, 60_000, 40_000, 10_000, 10_000),
    ],
)
def test_rate_gap_within_twice_the_bound(counts):
    symbols = exact_sequence(list(counts), seed=len(counts))
    dist = histogram(symbols, len(counts))
    encode_table, _ = tables_for(dist.counts, 256)
    gap = measured_rate(encode(symbols, encode_table)) - shannon_entropy(dist)
    assert gap <= 2 * delta_h_bound(dist, 256)


def test_uniform_rate_equals_entropy():
    symbols = exact_sequence([2500, 2500, 2500, 2500])
    encode_table, _ = tables_for([1, 1, 1, 1], 256)
    stream = encode(symbols, encode_table)
    assert measured_rate(stream) == 2.0


def test_rate_gap_shrinks_with_table_size():
    symbols = exact_sequence([150_000, 30_000, 15_000, 5_000], seed=11)
    counts = histogram(symbols, 4).counts
    rates = {l: measured_rate(encode(symbols, tables_for(counts, l)[0])) for l in (64, 128, 256)}
    assert rates[256] <= rates[128] + 0.005
    assert rates[128] <= rates[64] + 0.005


def test_sub_binary_rate_beats_huffman():
    symbols = exact_sequence([90_000, 2_500, 2_500, 2_500, 2_500], seed=5)
    dist = histogram(symbols, 5)
    encode_table, _ = tables_for(dist.counts, 256)
    rate = measured_rate(encode(symbols, encode_table))
    assert huffman_rate(dist) >= 1.0
    assert rate < 1.0
    assert rate < huffman_rate(dist)


def test_decoder_takes_zero_bit_transitions():
    symbols = exact_sequence([9_500, 500], seed=2)
    encode_table, decode_table = tables_for([95, 5], 256)
    stream = encode(symbols, encode_table)
    counters = DecodeCounters()
    decode(stream, decode_table, counters=counters)
    assert counters.zero_bit_reads > 0
    assert counters.lookups == len(symbols)
    assert counters.bit_reads == len(symbols)
    assert counters.bits_consumed == stream.bit_length


def test_truncated_payload_is_detected():
    symbols = exact_sequence([600, 300, 100], seed=9)
    encode_table, decode_table = tables_for([6, 3, 1], 64)
    stream = encode(symbols, encode_table)
    for cut in (1, 8, stream.bit_length // 2):
        truncated = stream.model_copy(update={"bit_length": stream.bit_length - cut})
        with pytest.raises(CorruptStreamError):
            decode(truncated, decode_table)


def test_corrupt_stream_headers_are_detected():
    symbols = exact_sequence([600, 300, 100], seed=9)
    encode_table, decode_table = tables_for([6, 3, 1], 64)
    stream = encode(symbols, encode_table)
    with pytest.raises(CorruptStreamError):
        decode(stream, decode_table, count=len(symbols) - 1)
    with pytest.raises(CorruptStreamError):
        decode(stream.model_copy(update={"final_state": 3}), decode_table)
    with pytest.raises(CorruptStreamError):
        decode(stream.model_copy(update={"symbol_count": len(symbols) + 1}), decode_table)
    with pytest.raises(CorruptStreamError):
        decode(stream.model_copy(update={"bit_length": 8 * len(stream.payload) + 1}), decode_table)


def test_zero_bit_run_bounds_the_symbol_count():
    assert max_zero_bit_run(tables_for([1, 1], 256)[1]) == 0
    assert max_zero_bit_run(tables_for([5], 256)[1]) is None
    encode_table, decode_table = tables_for([3, 1], 64)
    run = max_zero_bit_run(decode_table)
    assert 1 <= run <= 4
    stream = encode([0, 1, 0, 0, 0, 0, 1], encode_table)
    with pytest.raises(CorruptStreamError, match="can not hold"):
        decode(stream.model_copy(update={"symbol_count": 10**9}), decode_table)


def test_single_symbol_stream_of_any_length():
    encode_table, decode_table = tables_for([5], 256)
    stream = encode([0] * 10, encode_table).model_copy(update={"symbol_count": 10**7})
    counters = DecodeCounters()
    decoded = decode(stream, decode_table, counters=counters)
    assert decoded.shape == (10**7,)
    assert not decoded.any()
    assert counters.zero_bit_reads == counters.lookups == 10**7
    assert counters.bits_consumed == 0
    with pytest.raises(CorruptStreamError):
        decode(stream.model_copy(update={"final_state": 300}), decode_table)
    with pytest.raises(CorruptStreamError):
        decode(stream.model_copy(update={"payload": b"\x01", "bit_length": 1}), decode_table)


def test_encoded_stream_validation():
    EncodedStream(payload=b"\x0f", bit_length=4, final_state=4, symbol_count=4)
    with pytest.raises(ValidationError):
        EncodedStream(payload=b"\x00\x00", bit_length=4, final_state=4, symbol_count=4)


@pytest.mark.parametrize("l, expected", [(64, 192), (256, 768), (1024, 3072)])
def test_lut_footprint(l, expected):
    _, decode_table = tables_for([3, 1], l)
    assert lut_footprint(decode_table) == expected == 3 * l


def test_iter_table_rows():
    _, decode_table = tables_for([3, 1], 64)
    rows = list(iter_table_rows(decode_table))
    assert len(rows) == 64
    assert [row[0] for row in rows] == list(range(64, 128))
    assert state_width_bits(64) == 7
