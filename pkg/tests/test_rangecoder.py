"""Tests for the carry-less range coder."""

import math

import numpy as np
import pytest

from slimvc.entropy import build_cdf
from slimvc.errors import FormatError, ShapeError, TruncatedPayloadError
from slimvc.rangecoder import TOTAL, CodedPayload, QuantizedCDF, decode_symbols, encode_symbols


def _random_table(rng: np.random.Generator, escape: bool = True) -> QuantizedCDF:
    size = int(rng.integers(2, 40))
    pmf = rng.dirichlet(np.full(size, rng.uniform(0.05, 2.0)))
    return build_cdf(pmf, offset=int(rng.integers(-20, 5)), escape=escape)


def _draw(table: QuantizedCDF, rng: np.random.Generator) -> int:
    index = int(np.searchsorted(table.cumulative, rng.integers(0, TOTAL), side="right") - 1)
    if index == table.escape:
        return int(rng.choice([-1, 1]) * rng.integers(100, 30000))
    return table.offset + index


def _information(symbols, tables) -> float:
    bits = 0.0
    for value, table in zip(symbols, tables):
        index = table.index_of(value)
        index = table.escape if index is None else index
        bits += -math.log2(table.frequency(index) / TOTAL)
        if table.index_of(value) is None:
            bits += 16
    return bits


def test_empty_payload_is_small_and_decodes():
    payload = encode_symbols([], [])
    assert len(payload) <= 8
    assert decode_symbols(payload, []) == []


def test_round_trip_with_random_tables_and_escapes(rng):
    for _ in range(30):
        count = int(rng.integers(1, 400))
        tables = [_random_table(rng) for _ in range(count)]
        symbols = [_draw(t, rng) for t in tables]
        payload = encode_symbols(symbols, tables)
        assert payload.symbol_count == count
        assert decode_symbols(payload, tables) == symbols
        assert payload.bits <= _information(symbols, tables) + 64


def test_deterministic_tables_consume_no_bits():
    """A one-symbol alphabet decodes to its only value whatever the payload holds."""
    single = QuantizedCDF((0, TOTAL), offset=7)
    coin = build_cdf(np.array([0.5, 0.5]), offset=0, escape=False)
    tables = [single, coin, single, coin]
    payload = encode_symbols([7, 1, 7, 0], tables)
    assert decode_symbols(payload, tables) == [7, 1, 7, 0]
    assert len(encode_symbols([7] * 100, [single] * 100)) == len(encode_symbols([], []))


def test_symbol_outside_table_without_escape_is_rejected():
    table = build_cdf(np.array([0.5, 0.5]), offset=0, escape=False)
    with pytest.raises(FormatError, match="no escape"):
        encode_symbols([3], [table])


def test_escape_range_is_limited():
    table = build_cdf(np.array([0.5, 0.5]), offset=0)
    with pytest.raises(FormatError):
        encode_symbols([40000], [table])


def test_invalid_tables_are_rejected():
    with pytest.raises(FormatError):
        QuantizedCDF((0, 10, 10, TOTAL))
    with pytest.raises(FormatError):
        QuantizedCDF((1, TOTAL))
    with pytest.raises(FormatError):
        QuantizedCDF((0, 100, TOTAL), escape=0)


def test_length_mismatches_are_rejected():
    table = build_cdf(np.array([0.5, 0.5]), offset=0)
    with pytest.raises(ShapeError):
        encode_symbols([0, 1], [table])
    payload = encode_symbols([0, 1], [table, table])
    with pytest.raises(ShapeError):
        decode_symbols(payload, [table])


def test_truncated_payload_raises(rng):
    tables = [_random_table(rng) for _ in range(200)]
    symbols = [_draw(t, rng) for t in tables]
    payload = encode_symbols(symbols, tables)
    with pytest.raises(TruncatedPayloadError):
        decode_symbols(CodedPayload(payload.data[:len(payload.data) // 2], 200), tables)


def test_trailing_bytes_are_rejected():
    table = build_cdf(np.array([0.5, 0.5]), offset=0)
    payload = encode_symbols([1, 0, 1], [table] * 3)
    with pytest.raises(FormatError, match="trailing"):
        decode_symbols(CodedPayload(payload.data + b"\x00", 3), [table] * 3)


def test_corrupted_bytes_are_detected_or_change_symbols(rng):
    """A flipped byte either raises or decodes to different symbols."""
    tables = [_random_table(rng) for _ in range(300)]
    symbols = [_draw(t, rng) for t in tables]
    payload = encode_symbols(symbols, tables)
    for _ in range(50):
        data = bytearray(payload.data)
        position = int(rng.integers(0, len(data) - 4))
        data[position] ^= int(rng.integers(1, 256))
        try:
            decoded = decode_symbols(CodedPayload(bytes(data), len(tables)), tables)
        except FormatError:
            continue
        assert decoded != symbols


def test_payloads_are_deterministic(rng):
    tables = [_random_table(rng) for _ in range(100)]
    symbols = [_draw(t, rng) for t in tables]
    assert encode_symbols(symbols, tables).data == encode_symbols(symbols, tables).data


@pytest.mark.slow
def test_uniform_bytes_cost_one_byte_each():
    """1e6 uniform symbols over 256 values code to about 1e6 bytes."""
    rng = np.random.default_rng(0)
    table = build_cdf(np.full(256, 1 / 256), offset=0, escape=False)
    symbols = rng.integers(0, 256, size=1_000_000).tolist()
    tables = [table] * len(symbols)
    payload = encode_symbols(symbols, tables)
    assert 0.98e6 <= len(payload) <= 1.02e6
    assert decode_symbols(payload, tables) == symbols


@pytest.mark.slow
def test_fuzz_round_trip_over_a_million_symbols():
    rng = np.random.default_rng(1)
    pool = [_random_table(rng, escape=bool(i % 2)) for i in range(64)]
    choice = rng.integers(0, len(pool), size=1_000_000)
    tables = [pool[i] for i in choice]
    symbols = [_draw(t, rng) if t.escape is not None else t.offset + int(rng.integers(0, t.size))
               for t in tables]
    payload = encode_symbols(symbols, tables)
    assert decode_symbols(payload, tables) == symbols
