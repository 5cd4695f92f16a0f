import pytest
from hypothesis import given, strategies as st

from ldacs_puf.encoding import (EncodingError, bits_matrix_to_ints, bits_to_int, from_hex, int_to_bits,
                                ints_to_bits_matrix, seeded_bytes, to_hex)


@given(st.integers(0, 2**128 - 1))
def test_bits_round_trip(v):
    assert bits_to_int(int_to_bits(v, 128)) == v


def test_msb_first():
    assert list(int_to_bits(0b100, 3)) == [1, 0, 0]


@given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=20))
def test_matrix_round_trip(values):
    assert bits_matrix_to_ints(ints_to_bits_matrix(values, 32)) == values


@given(st.integers(0, 2**24 - 1))
def test_hex_round_trip(v):
    text = to_hex(v, 24)
    assert len(text) == 6 and from_hex(text, 24) == v


def test_hex_errors():
    with pytest.raises(EncodingError):
        from_hex("zz", 8)
    with pytest.raises(EncodingError):
        from_hex("1ff", 8)
    with pytest.raises(EncodingError):
        to_hex(256, 8)


def test_seeded_bytes_deterministic_and_label_separated():
    assert seeded_bytes(1, "a", 100) == seeded_bytes(1, "a", 100)
    assert seeded_bytes(1, "a", 16) != seeded_bytes(1, "b", 16)
    assert seeded_bytes(1, "a", 16) != seeded_bytes(2, "a", 16)
    assert seeded_bytes(1, "a", 40)[:16] == seeded_bytes(1, "a", 16)
