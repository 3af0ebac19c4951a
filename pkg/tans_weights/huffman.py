from __future__ import annotations

import heapq
import itertools
import math
import typing

from tans_weights.distributions import Distribution
from tans_weights.errors import UndefinedEntropyError


def huffman_code_lengths(dist: Distribution) -> typing.Dict[int, int]:
    """
    Huffman code length per present symbol. A lone symbol still gets a one bit code, since a prefix code can not use less than one bit per symbol.

    Args:
        dist (Distribution): Symbol statistics with a positive total.

    Raises:
        UndefinedEntropyError: If the distribution is empty.

    Returns:
        Dict[int, int]: Code length in bits for every symbol with a positive count.
    """
    present = dist.present_symbols
    if not present:
        raise UndefinedEntropyError("Huffman code of an empty distribution is undefined")
    if len(present) == 1:
        return {present[0]: 1}

    # the counter breaks weight ties so merges are deterministic
    tie_breaker = itertools.count()
    heap: typing.List[typing.Tuple[int, int, typing.List[int]]] = [
        (dist.counts[s], next(tie_breaker), [s]) for s in present
    ]
    heapq.heapify(heap)
    lengths = {s: 0 for s in present}
    while len(heap) > 1:
        weight_a, _, symbols_a = heapq.heappop(heap)
        weight_b, _, symbols_b = heapq.heappop(heap)
        for s in itertools.chain(symbols_a, symbols_b):
            lengths[s] += 1
        heapq.heappush(
            heap, (weight_a + weight_b, next(tie_breaker), symbols_a + symbols_b)
        )
    return lengths


def huffman_rate(dist: Distribution) -> float:
    """
    Average Huffman code length in bits per symbol for the given statistics.
    """
    lengths = huffman_code_lengths(dist)
    total = dist.total
    return math.fsum(dist.counts[s] * length / total for s, length in lengths.items())
