import math

import pytest
from pydantic import ValidationError

from tans_weights.distributions import (
    Distribution,
    bytes_to_mb,
    delta_h_bound,
    drop_absent_symbols,
    entropy_bound_bytes,
    histogram,
    merge_distributions,
    shannon_entropy,
)
from tans_weights.errors import (
    SymbolOutOfRangeError,
    TableTooSmallError,
    UndefinedEntropyError,
    ZeroProbabilityError,
)


def test_histogram_counts():
    dist = histogram([0, 1, 0, 0], 2)
    assert dist.counts == (3, 1)
    assert dist.probs == (0.75, 0.25)
    assert dist.total == 4

    empty = histogram([], 4)
    assert empty.counts == (0, 0, 0, 0)
    assert empty.total == 0


def test_histogram_out_of_range():
    with pytest.raises(SymbolOutOfRangeError) as e:
        histogram([0, 1, 2, 1, 3], 2)
    assert e.value.index == 2
    assert e.value.symbol == 2


def test_distribution_validation():
    with pytest.raises(ValidationError):
        Distribution(alphabet_size=0, counts=())
    with pytest.raises(ValidationError):
        Distribution(alphabet_size=257, counts=tuple([1] * 257))
    with pytest.raises(ValidationError):
        Distribution(alphabet_size=2, counts=(1, 2, 3))
    with pytest.raises(ValidationError):
        Distribution(alphabet_size=2, counts=(1, -1))


def test_probs_sum_to_one_and_scale_invariant():
    dist = Distribution(alphabet_size=5, counts=(3, 0, 7, 11, 1))
    assert math.isclose(sum(dist.probs), 1.0, abs_tol=1e-12)
    scaled = Distribution(alphabet_size=5, counts=tuple(7 * c for c in dist.counts))
    assert scaled.probs == dist.probs


def test_shannon_entropy_examples():
    assert shannon_entropy(Distribution(alphabet_size=4, counts=(5, 5, 5, 5))) == 2.0
    assert shannon_entropy(Distribution(alphabet_size=3, counts=(0, 12, 0))) == 0.0
    skewed = Distribution(alphabet_size=2, counts=(9, 1))
    assert math.isclose(shannon_entropy(skewed), 0.4689955935892812, abs_tol=1e-10)


def test_shannon_entropy_bounds_and_order_independence():
    counts = (1, 2, 3, 5, 8, 13, 21, 34)
    dist = Distribution(alphabet_size=8, counts=counts)
    reversed_dist = Distribution(alphabet_size=8, counts=tuple(reversed(counts)))
    entropy = shannon_entropy(dist)
    assert 0 < entropy < 3.0
    assert entropy == shannon_entropy(reversed_dist)


def test_shannon_entropy_empty():
    with pytest.raises(UndefinedEntropyError):
        shannon_entropy(histogram([], 3))


def test_entropy_bound_bytes():
    uniform = Distribution(alphabet_size=4, counts=(1, 1, 1, 1))
    assert entropy_bound_bytes(uniform, 4_000_000) == 1_000_000
    assert bytes_to_mb(entropy_bound_bytes(uniform, 4_000_000)) == 1.0
    assert entropy_bound_bytes(Distribution(alphabet_size=1, counts=(10,)), 12345) == 0.0
    skewed = Distribution(alphabet_size=2, counts=(9, 1))
    assert abs(entropy_bound_bytes(skewed, 1_000_000) - 58624.0) <= 0.5


def test_merge_distributions():
    merged = merge_distributions(
        [
            Distribution(alphabet_size=3, counts=(1, 0, 2)),
            Distribution(alphabet_size=3, counts=(0, 4, 1)),
        ]
    )
    assert merged.counts == (1, 4, 3)

    with pytest.raises(ValueError):
        merge_distributions([])
    with pytest.raises(ValueError):
        merge_distributions(
            [
                Distribution(alphabet_size=2, counts=(1, 1)),
                Distribution(alphabet_size=3, counts=(1, 1, 1)),
            ]
        )


def test_drop_absent_symbols():
    dist = drop_absent_symbols(Distribution(alphabet_size=4, counts=(0, 3, 0, 1)))
    assert dist.counts == (3, 1)
    with pytest.raises(UndefinedEntropyError):
        drop_absent_symbols(Distribution(alphabet_size=2, counts=(0, 0)))


def test_delta_h_bound():
    balanced = Distribution(alphabet_size=2, counts=(1, 1))
    assert math.isclose(delta_h_bound(balanced, 16), 4 / (256 * math.log(4)), rel_tol=1e-12)
    assert delta_h_bound(balanced, 256) < delta_h_bound(balanced, 64)

    skewed = Distribution(alphabet_size=2, counts=(9, 1))
    expected = (
        (1 / 0.9) * (0.9 / 0.2 + 0.5) ** 2 + (1 / 0.1) * (0.1 / 0.2 + 0.5) ** 2
    ) / (256**2 * math.log(4))
    assert math.isclose(delta_h_bound(skewed, 256), expected, rel_tol=1e-12)
    assert delta_h_bound(skewed, 512) == delta_h_bound(skewed, 256) / 4


def test_delta_h_bound_errors():
    with pytest.raises(ZeroProbabilityError):
        delta_h_bound(Distribution(alphabet_size=3, counts=(1, 0, 1)), 64)
    with pytest.raises(TableTooSmallError):
        delta_h_bound(Distribution(alphabet_size=8, counts=tuple([1] * 8)), 4)
