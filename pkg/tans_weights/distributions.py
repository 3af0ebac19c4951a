from __future__ import annotations

import math
import typing

import numpy as np
from pydantic import BaseModel, ConfigDict, computed_field, model_validator

from tans_weights.errors import (
    SymbolOutOfRangeError,
    TableTooSmallError,
    UndefinedEntropyError,
    ZeroProbabilityError,
)

MAX_ALPHABET_SIZE = 256
BYTES_PER_MB = 1_000_000


class Distribution(BaseModel):
    """
    Occurrence statistics over a symbol alphabet. Probabilities are derived from the counts, so they always sum to one when the total is positive.

    Args:
        alphabet_size (int): Number of symbols of the alphabet, between 1 and 256 so that each symbol fits one byte.
        counts (Tuple[int, ...]): Nonnegative occurrence count per symbol.
    """

    model_config = ConfigDict(frozen=True)

    alphabet_size: int
    counts: typing.Tuple[int, ...]

    @model_validator(mode="after")
    def check_counts(self) -> Distribution:
        assert (
            1 <= self.alphabet_size <= MAX_ALPHABET_SIZE
        ), f"alphabet_size must be in [1, {MAX_ALPHABET_SIZE}], got {self.alphabet_size}"
        assert (
            len(self.counts) == self.alphabet_size
        ), f"Expected {self.alphabet_size} counts, got {len(self.counts)}"
        assert all(c >= 0 for c in self.counts), "counts must be nonnegative"
        return self

    @computed_field
    @property
    def total(self) -> int:
        return sum(self.counts)

    @computed_field
    @property
    def probs(self) -> typing.Tuple[float, ...]:
        total = self.total
        if total == 0:
            return tuple(0.0 for _ in self.counts)
        return tuple(c / total for c in self.counts)

    @property
    def present_symbols(self) -> typing.List[int]:
        return [s for s, c in enumerate(self.counts) if c > 0]


def histogram(
    symbols: typing.Union[typing.Sequence[int], np.ndarray], alphabet_size: int
) -> Distribution:
    """
    Counts the occurrences of each symbol id.

    Args:
        symbols (Union[Sequence[int], np.ndarray]): Symbol ids of any shape, flattened in row-major order.
        alphabet_size (int): Size of the alphabet.

    Raises:
        SymbolOutOfRangeError: If a symbol id is negative or not smaller than alphabet_size.

    Returns:
        Distribution: The symbol statistics.
    """
    flat = np.asarray(symbols, dtype=np.int64).ravel()
    if flat.size:
        offending = np.flatnonzero((flat < 0) | (flat >= alphabet_size))
        if offending.size:
            index = int(offending[0])
            raise SymbolOutOfRangeError(index, int(flat[index]), alphabet_size)
    counts = np.bincount(flat, minlength=alphabet_size)
    return Distribution(
        alphabet_size=alphabet_size, counts=tuple(int(c) for c in counts)
    )


def merge_distributions(distributions: typing.Sequence[Distribution]) -> Distribution:
    """
    Sums per-layer histograms into a whole-network histogram.

    Args:
        distributions (Sequence[Distribution]): Histograms over the same alphabet.

    Raises:
        ValueError: If no distribution is given or the alphabet sizes differ.

    Returns:
        Distribution: The merged histogram.
    """
    if not distributions:
        raise ValueError("At least one distribution is required for merging")
    alphabet_sizes = {d.alphabet_size for d in distributions}
    if len(alphabet_sizes) != 1:
        raise ValueError(
            f"Can only merge distributions over one alphabet, got sizes {sorted(alphabet_sizes)}"
        )
    counts = [sum(column) for column in zip(*(d.counts for d in distributions))]
    return Distribution(alphabet_size=alphabet_sizes.pop(), counts=tuple(counts))


def drop_absent_symbols(dist: Distribution) -> Distribution:
    """
    Returns the distribution restricted to symbols with a positive count. Symbol ids are renumbered densely.
    """
    counts = tuple(c for c in dist.counts if c > 0)
    if not counts:
        raise UndefinedEntropyError("Distribution has no occurrences")
    return Distribution(alphabet_size=len(counts), counts=counts)


def shannon_entropy(dist: Distribution) -> float:
    """
    Shannon entropy in bits per symbol. The sum is evaluated with math.fsum, so the result does not depend on the symbol order.

    Args:
        dist (Distribution): Symbol statistics with a positive total.

    Raises:
        UndefinedEntropyError: If the distribution is empty.

    Returns:
        float: Entropy in bits per symbol, between 0 and log2(alphabet_size).
    """
    total = dist.total
    if total == 0:
        raise UndefinedEntropyError("Entropy of an empty distribution is undefined")
    terms = []
    for count in dist.counts:
        if count == 0:
            continue
        p = count / total
        terms.append(p * math.log2(p))
    return max(0.0, -math.fsum(terms))


def entropy_bound_bytes(dist: Distribution, count: int) -> float:
    """
    Shannon lower bound on the coded size of `count` symbols drawn from `dist`, in bytes.

    Args:
        dist (Distribution): Symbol statistics with a positive total.
        count (int): Number of coded symbols.

    Returns:
        float: H(dist) * count / 8.
    """
    return shannon_entropy(dist) * count / 8


def bytes_to_mb(num_bytes: float) -> float:
    return num_bytes / BYTES_PER_MB


def delta_h_bound(dist: Distribution, l: int) -> float:
    """
    Leading-order bound on the gap between the tANS code length and the entropy for a table of l states. The O(l^-3) remainder is dropped, so the value is a reference scale rather than a certified bound.

    Args:
        dist (Distribution): Symbol statistics where every symbol has a positive probability.
        l (int): Number of states of the automaton.

    Raises:
        ZeroProbabilityError: If a symbol has probability zero.
        TableTooSmallError: If l is smaller than the alphabet size.

    Returns:
        float: Gap bound in bits per symbol.
    """
    if dist.total == 0 or any(c == 0 for c in dist.counts):
        raise ZeroProbabilityError(
            "Rate gap bound diverges for zero-probability symbols; drop absent symbols first"
        )
    if l < dist.alphabet_size:
        raise TableTooSmallError(
            f"Table size {l} is smaller than the alphabet size {dist.alphabet_size}"
        )
    probs = dist.probs
    p_min = min(probs)
    weighted = math.fsum((1 / p) * (p / (2 * p_min) + 0.5) ** 2 for p in probs)
    return weighted / (l * l * math.log(4))
