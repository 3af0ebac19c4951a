import math

import pytest

from tans_weights.distributions import Distribution, shannon_entropy
from tans_weights.errors import UndefinedEntropyError
from tans_weights.huffman import huffman_code_lengths, huffman_rate


def test_dyadic_distribution_reaches_entropy():
    dist = Distribution(alphabet_size=4, counts=(4, 2, 1, 1))
    assert huffman_code_lengths(dist) == {0: 1, 1: 2, 2: 3, 3: 3}
    assert huffman_rate(dist) == shannon_entropy(dist)


def test_kraft_equality():
    dist = Distribution(alphabet_size=6, counts=(50, 20, 10, 10, 7, 3))
    lengths = huffman_code_lengths(dist)
    assert math.fsum(2.0 ** -length for length in lengths.values()) == 1.0


def test_prefix_codes_need_one_bit_per_symbol():
    skewed = Distribution(alphabet_size=2, counts=(95, 5))
    assert huffman_rate(skewed) == 1.0
    assert shannon_entropy(skewed) < 0.3

    lone = Distribution(alphabet_size=3, counts=(0, 7, 0))
    assert huffman_code_lengths(lone) == {1: 1}
    assert huffman_rate(lone) == 1.0


def test_absent_symbols_get_no_code():
    dist = Distribution(alphabet_size=5, counts=(0, 3, 0, 1, 1))
    assert set(huffman_code_lengths(dist)) == {1, 3, 4}


def test_empty_distribution():
    with pytest.raises(UndefinedEntropyError):
        huffman_code_lengths(Distribution(alphabet_size=2, counts=(0, 0)))
