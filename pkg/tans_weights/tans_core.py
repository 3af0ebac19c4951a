from __future__ import annotations

import functools
import logging
import typing

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from tans_weights.bitstream import BitReader, BitWriter
from tans_weights.distributions import MAX_ALPHABET_SIZE, Distribution
from tans_weights.errors import (
    CorruptStreamError,
    TableTooSmallError,
    TansWeightsError,
    UndefinedEntropyError,
    UnencodableSymbolError,
)

logger = logging.getLogger(__name__)

MIN_TABLE_SIZE = 2
MAX_TABLE_SIZE = 4096


def is_valid_table_size(l: int) -> bool:
    return MIN_TABLE_SIZE <= l <= MAX_TABLE_SIZE and l & (l - 1) == 0


def table_log(l: int) -> int:
    return l.bit_length() - 1


def state_width_bits(l: int) -> int:
    """
    Width of the state adder of a hardware decoder with l states, log2(l) + 1.
    """
    return table_log(l) + 1


def spread_step(l: int) -> int:
    """
    Step of the symbol spread, 5/8 * l + 3. Made odd when needed so it is coprime with the power-of-two table size.
    """
    step = (l >> 1) + (l >> 3) + 3
    return step if step % 2 == 1 else step + 1


class NormalizedHistogram(BaseModel):
    """
    Symbol frequencies quantized to a table of l states.

    Args:
        table_size (int): Number of states l, a power of two in [2, 4096].
        freqs (Tuple[int, ...]): Frequency per symbol id, summing to l. Zero marks a symbol that does not occur.
    """

    model_config = ConfigDict(frozen=True)

    table_size: int
    freqs: typing.Tuple[int, ...]

    @model_validator(mode="after")
    def check_freqs(self) -> NormalizedHistogram:
        assert is_valid_table_size(
            self.table_size
        ), f"Table size must be a power of two in [{MIN_TABLE_SIZE}, {MAX_TABLE_SIZE}], got {self.table_size}"
        assert (
            1 <= len(self.freqs) <= MAX_ALPHABET_SIZE
        ), f"Alphabet size must be in [1, {MAX_ALPHABET_SIZE}], got {len(self.freqs)}"
        assert all(f >= 0 for f in self.freqs), "Frequencies must be nonnegative"
        assert (
            sum(self.freqs) == self.table_size
        ), f"Frequencies sum to {sum(self.freqs)} instead of {self.table_size}"
        return self

    @property
    def alphabet_size(self) -> int:
        return len(self.freqs)

    @property
    def table_log(self) -> int:
        return table_log(self.table_size)


class DecodeTable(BaseModel):
    """
    Look-up table of the decoder automaton. Entry u belongs to state l + u and holds the decoded symbol, the number of bits to read and the base new_x, stored as an offset from l. The next state is l + new_x + the value of the bits read.
    """

    model_config = ConfigDict(frozen=True)

    table_size: int
    symbols: typing.Tuple[int, ...]
    nb_bits: typing.Tuple[int, ...]
    new_x: typing.Tuple[int, ...]

    @model_validator(mode="after")
    def check_entries(self) -> DecodeTable:
        l = self.table_size
        assert (
            len(self.symbols) == len(self.nb_bits) == len(self.new_x) == l
        ), "Every state needs exactly one table entry"
        for u, (bits, base) in enumerate(zip(self.nb_bits, self.new_x)):
            assert (
                0 <= base and base + (1 << bits) - 1 < l
            ), f"Entry {u} addresses a state outside the table"
        return self


class EncodeTable(BaseModel):
    """
    Per-symbol transitions of the encoder automaton. Encoding s from state x emits nb = max_bits[s] bits when x >= thresholds[s] and one bit less otherwise, and moves to next_states[s][(x >> nb) - freqs[s]].
    """

    model_config = ConfigDict(frozen=True)

    table_size: int
    freqs: typing.Tuple[int, ...]
    max_bits: typing.Tuple[int, ...]
    thresholds: typing.Tuple[int, ...]
    next_states: typing.Tuple[typing.Tuple[int, ...], ...]

    @model_validator(mode="after")
    def check_transitions(self) -> EncodeTable:
        for s, (freq, states) in enumerate(zip(self.freqs, self.next_states)):
            assert len(states) == freq, f"Symbol {s} needs {freq} transitions"
        return self


class EncodedStream(BaseModel):
    """
    A tANS coded symbol sequence. The decoder starts at final_state and consumes payload front to back, least significant bit first within each byte.

    Args:
        payload (bytes): Packed bits, zero padded to a whole byte.
        bit_length (int): Number of valid payload bits.
        final_state (int): Last encoder state, first decoder state, in [l, 2l).
        symbol_count (int): Number of coded symbols.
    """

    model_config = ConfigDict(frozen=True)

    payload: bytes
    bit_length: int
    final_state: int
    symbol_count: int

    @model_validator(mode="after")
    def check_payload_length(self) -> EncodedStream:
        assert self.bit_length >= 0 and self.symbol_count >= 0
        assert (
            self.bit_length <= 8 * len(self.payload) < self.bit_length + 8
        ), f"Payload of {len(self.payload)} bytes does not match {self.bit_length} bits"
        return self


class DecodeCounters(BaseModel):
    """
    Instrumentation of the decoder loop.

    Args:
        lookups (int): Number of table look-ups.
        bit_reads (int): Number of buffer reads, including zero-width reads.
        zero_bit_reads (int): Number of transitions that read no bit.
        bits_consumed (int): Number of payload bits read.
    """

    lookups: int = 0
    bit_reads: int = 0
    zero_bit_reads: int = 0
    bits_consumed: int = 0


def normalize_freqs(dist: Distribution, l: int) -> NormalizedHistogram:
    """
    Apportions l table slots to the symbols proportionally to their counts. Uses largest remainders, guarantees at least one slot for every present symbol and breaks ties on the lowest symbol id.

    Args:
        dist (Distribution): Symbol statistics with a positive total.
        l (int): Table size, a power of two.

    Raises:
        TableTooSmallError: If more symbols are present than there are slots.
        UndefinedEntropyError: If the distribution is empty.

    Returns:
        NormalizedHistogram: Frequencies summing to l.
    """
    if not is_valid_table_size(l):
        raise TansWeightsError(
            f"Table size must be a power of two in [{MIN_TABLE_SIZE}, {MAX_TABLE_SIZE}], got {l}"
        )
    total = dist.total
    if total == 0:
        raise UndefinedEntropyError("Can not normalize an empty distribution")
    present = dist.present_symbols
    if len(present) > l:
        raise TableTooSmallError(
            f"{len(present)} symbols are present but the table only has {l} slots"
        )

    counts = dist.counts
    freqs = [0] * dist.alphabet_size
    for s in present:
        freqs[s] = max(1, counts[s] * l // total)

    # remainders are scaled by total to stay in integer arithmetic
    def remainder(s: int) -> int:
        return counts[s] * l - freqs[s] * total

    deficit = l - sum(freqs)
    if deficit > 0:
        for s in sorted(present, key=lambda s: (-remainder(s), s))[:deficit]:
            freqs[s] += 1
    while deficit < 0:
        s = min(
            (s for s in present if freqs[s] > 1),
            key=lambda s: (remainder(s), s),
        )
        freqs[s] -= 1
        deficit += 1
    return NormalizedHistogram(table_size=l, freqs=tuple(freqs))


def spread_symbols(h: NormalizedHistogram) -> typing.List[int]:
    """
    Assigns the table slots to symbols by walking the table with a fixed odd step, filling slots in symbol order.
    """
    l = h.table_size
    mask = l - 1
    step = spread_step(l)
    slots = [0] * l
    position = 0
    for s, freq in enumerate(h.freqs):
        for _ in range(freq):
            slots[position] = s
            position = (position + step) & mask
    return slots


def build_tables(h: NormalizedHistogram) -> typing.Tuple[EncodeTable, DecodeTable]:
    """
    Builds the tANS automaton over the working states [l, 2l).

    Args:
        h (NormalizedHistogram): Normalized symbol frequencies.

    Returns:
        Tuple[EncodeTable, DecodeTable]: Encoder transitions and decoder look-up table.
    """
    l = h.table_size
    log_l = h.table_log
    slots = spread_symbols(h)

    next_count = list(h.freqs)
    next_states: typing.List[typing.List[int]] = [[] for _ in h.freqs]
    nb_bits = [0] * l
    new_x = [0] * l
    for u, s in enumerate(slots):
        x_s = next_count[s]
        next_count[s] += 1
        bits = log_l - (x_s.bit_length() - 1)
        nb_bits[u] = bits
        new_x[u] = (x_s << bits) - l
        next_states[s].append(l + u)

    max_bits = []
    thresholds = []
    for freq in h.freqs:
        if freq == 0:
            max_bits.append(0)
            thresholds.append(0)
            continue
        bits = log_l - (freq.bit_length() - 1)
        max_bits.append(bits)
        thresholds.append(freq << bits)

    logger.debug("Built tANS tables with l=%d for %d symbols", l, h.alphabet_size)
    encode_table = EncodeTable(
        table_size=l,
        freqs=h.freqs,
        max_bits=tuple(max_bits),
        thresholds=tuple(thresholds),
        next_states=tuple(tuple(states) for states in next_states),
    )
    decode_table = DecodeTable(
        table_size=l, symbols=tuple(slots), nb_bits=tuple(nb_bits), new_x=tuple(new_x)
    )
    return encode_table, decode_table


def _as_symbol_list(symbols: typing.Union[typing.Sequence[int], np.ndarray]) -> typing.List[int]:
    if isinstance(symbols, np.ndarray):
        return symbols.ravel().tolist()
    return [int(s) for s in symbols]


def encode(
    symbols: typing.Union[typing.Sequence[int], np.ndarray], t: EncodeTable
) -> EncodedStream:
    """
    Encodes a symbol sequence. Symbols are processed last to first starting from state l; the emitted chunks are laid out in reverse so that the decoder reads the payload front to back.

    Args:
        symbols (Union[Sequence[int], np.ndarray]): Symbol ids.
        t (EncodeTable): Encoder transitions.

    Raises:
        UnencodableSymbolError: If a symbol has no slot in the table.

    Returns:
        EncodedStream: The coded stream.
    """
    sequence = _as_symbol_list(symbols)
    freqs = t.freqs
    max_bits = t.max_bits
    thresholds = t.thresholds
    next_states = t.next_states
    alphabet_size = len(freqs)

    x = t.table_size
    chunks: typing.List[typing.Tuple[int, int]] = []
    for index in range(len(sequence) - 1, -1, -1):
        s = sequence[index]
        if not 0 <= s < alphabet_size or freqs[s] == 0:
            raise UnencodableSymbolError(
                f"Symbol {s} at index {index} has no slot in the coding table"
            )
        nb = max_bits[s] if x >= thresholds[s] else max_bits[s] - 1
        chunks.append((x & ((1 << nb) - 1), nb))
        x = next_states[s][(x >> nb) - freqs[s]]

    writer = BitWriter()
    for value, nb in reversed(chunks):
        writer.write(value, nb)
    return EncodedStream(
        payload=writer.getvalue(),
        bit_length=writer.bit_length,
        final_state=x,
        symbol_count=len(sequence),
    )


def decode(
    stream: EncodedStream,
    t: DecodeTable,
    count: typing.Optional[int] = None,
    counters: typing.Optional[DecodeCounters] = None,
) -> np.ndarray:
    """
    Decodes a stream with the look-up table. Every step is one look-up, one nb_bits wide read and one addition.

    Args:
        stream (EncodedStream): The coded stream.
        t (DecodeTable): Decoder table built from the same normalized histogram as the encoder.
        count (Optional[int]): Number of symbols to decode, must equal stream.symbol_count. Defaults to stream.symbol_count.
        counters (Optional[DecodeCounters]): Instrumentation that is incremented in place.

    Raises:
        CorruptStreamError: On bit underrun, leftover bits, a count mismatch or a state outside the table.

    Returns:
        np.ndarray: Decoded symbols in original order.
    """
    count = stream.symbol_count if count is None else count
    if count != stream.symbol_count:
        raise CorruptStreamError(
            f"Requested {count} symbols but the stream holds {stream.symbol_count}"
        )
    l = t.table_size
    if not l <= stream.final_state < 2 * l:
        raise CorruptStreamError(
            f"Initial state {stream.final_state} is outside the working range [{l}, {2 * l})"
        )
    run = max_zero_bit_run(t)
    if run is None:
        return _decode_single_symbol(stream, t, count, counters)
    if count > stream.bit_length * (run + 1) + run:
        raise CorruptStreamError(
            f"{stream.bit_length} payload bits can not hold {count} symbols with this table"
        )
    reader = BitReader(stream.payload, stream.bit_length)
    table_symbols = t.symbols
    table_bits = t.nb_bits
    table_new_x = t.new_x
    read = reader.read

    decoded = [0] * count
    zero_bit_reads = 0
    u = stream.final_state - l
    for i in range(count):
        nb = table_bits[u]
        decoded[i] = table_symbols[u]
        if nb == 0:
            zero_bit_reads += 1
            u = table_new_x[u]
        else:
            u = table_new_x[u] + read(nb)

    if reader.remaining:
        raise CorruptStreamError(f"{reader.remaining} payload bits left after decoding")
    if u != 0:
        raise CorruptStreamError(
            f"Decoder ended in state {u + l} instead of the initial encoder state {l}"
        )
    if counters is not None:
        counters.lookups += count
        counters.bit_reads += count
        counters.zero_bit_reads += zero_bit_reads
        counters.bits_consumed += reader.consumed
    return np.array(decoded, dtype=np.uint8)


@functools.lru_cache(maxsize=64)
def max_zero_bit_run(t: DecodeTable) -> typing.Optional[int]:
    """
    Longest run of consecutive decode steps that read no bits, so a stream of b bits holds at most b * (run + 1) + run symbols.

    Args:
        t (DecodeTable): Decoder table.

    Returns:
        Optional[int]: Length of the run, None if zero-bit steps form a cycle. That only happens when one symbol owns every state.
    """
    runs = [-1] * t.table_size
    for start in range(t.table_size):
        path: typing.List[int] = []
        on_path = set()
        u = start
        while runs[u] < 0:
            if t.nb_bits[u]:
                runs[u] = 0
                break
            if u in on_path:
                return None
            on_path.add(u)
            path.append(u)
            u = t.new_x[u]
        length = runs[u]
        for v in reversed(path):
            length += 1
            runs[v] = length
    return max(runs)


def _decode_single_symbol(
    stream: EncodedStream,
    t: DecodeTable,
    count: int,
    counters: typing.Optional[DecodeCounters],
) -> np.ndarray:
    # every state maps onto itself without reading
    if stream.bit_length:
        raise CorruptStreamError(f"{stream.bit_length} payload bits left after decoding")
    if stream.final_state != t.table_size:
        raise CorruptStreamError(
            f"Decoder ended in state {stream.final_state} instead of the initial encoder state {t.table_size}"
        )
    if counters is not None:
        counters.lookups += count
        counters.bit_reads += count
        counters.zero_bit_reads += count
    return np.full(count, t.symbols[0], dtype=np.uint8)


def lut_footprint(t: DecodeTable) -> int:
    """
    Hardware storage of the look-up table: one byte each for symbol, nb_bits and new_x per state, 3 * l bytes.
    """
    return 3 * t.table_size


def measured_rate(stream: EncodedStream) -> float:
    """
    Payload bits per coded symbol. Header and state costs are not included.

    Raises:
        TansWeightsError: If the stream holds no symbol.
    """
    if stream.symbol_count == 0:
        raise TansWeightsError("Rate of a stream without symbols is undefined")
    return stream.bit_length / stream.symbol_count


def iter_table_rows(t: DecodeTable) -> typing.Iterator[typing.Tuple[int, int, int, int]]:
    """
    Yields (state, symbol, nb_bits, new_x) for every look-up table entry, new_x being the stored offset from l.
    """
    l = t.table_size
    for u in range(l):
        yield l + u, t.symbols[u], t.nb_bits[u], t.new_x[u]
