from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import functools
import logging
import math
import typing

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from tans_weights import tans_core
from tans_weights.distributions import histogram
from tans_weights.errors import (
    CorruptStreamError,
    EmptyTensorError,
    ShapeMismatchError,
)
from tans_weights.quantizer import QuantizerSpec, ScalePolicy, make_quantizer, quantize
from tans_weights.tans_core import DecodeCounters, EncodedStream, NormalizedHistogram

logger = logging.getLogger(__name__)

RAW_LAYER_BINS = 255
STREAM_HEADER_BYTES = 10
RECORD_LENGTH_BYTES = 4
# name length, rank, flags, split axis, bins, scale, stream count
FIXED_LAYER_HEADER_BYTES = 2 + 1 + 1 + 1 + 2 + 8 + 4
DIM_BYTES = 4
TABLE_SIZE_BYTES = 2
FREQ_BYTES = 2


class LayerBundle(BaseModel):
    """
    Compressed representation of one layer: one shared normalized histogram and one or more independently decodable streams.

    Args:
        layer_id (str): Name of the layer.
        tensor_shape (Tuple[int, ...]): Shape of the weight tensor.
        split_axis (int): Axis along which the tensor is split into streams.
        parallel (bool): One stream per index of split_axis if True, a single stream otherwise.
        quantizer (QuantizerSpec): Quantizer that produced the symbols.
        histogram (Optional[NormalizedHistogram]): Shared table descriptor, None for uncompressed layers.
        streams (Tuple[EncodedStream, ...]): The coded streams.
        uncompressed (bool): Raw 8-bit layer stored without table. Defaults to False.
    """

    model_config = ConfigDict(frozen=True)

    layer_id: str
    tensor_shape: typing.Tuple[int, ...]
    split_axis: int
    parallel: bool
    quantizer: QuantizerSpec
    histogram: typing.Optional[NormalizedHistogram]
    streams: typing.Tuple[EncodedStream, ...]
    uncompressed: bool = False

    @model_validator(mode="after")
    def check_streams(self) -> LayerBundle:
        rank = len(self.tensor_shape)
        assert rank >= 1, "tensor_shape needs at least one dimension"
        assert all(d >= 0 for d in self.tensor_shape), "dimensions must be nonnegative"
        assert (
            0 <= self.split_axis < rank
        ), f"split_axis {self.split_axis} is out of range for rank {rank}"
        symbol_count = math.prod(self.tensor_shape)
        assert (
            sum(s.symbol_count for s in self.streams) == symbol_count
        ), f"Streams hold {sum(s.symbol_count for s in self.streams)} symbols, tensor has {symbol_count}"
        if self.uncompressed:
            assert self.histogram is None, "Uncompressed layers carry no table"
            assert len(self.streams) == 1, "Uncompressed layers have a single stream"
            assert (
                self.streams[0].bit_length == 8 * symbol_count
            ), "Uncompressed layers store one byte per weight"
            assert (
                max(self.streams[0].payload, default=0) < self.quantizer.bins
            ), f"Uncompressed symbols must be below {self.quantizer.bins}"
            return self
        assert self.histogram is not None, "Compressed layers need a table"
        assert (
            self.histogram.alphabet_size == self.quantizer.bins
        ), "Table alphabet must match the quantizer bins"
        expected_streams = self.tensor_shape[self.split_axis] if self.parallel else 1
        assert (
            len(self.streams) == expected_streams
        ), f"Expected {expected_streams} streams, got {len(self.streams)}"
        return self

    @property
    def symbol_count(self) -> int:
        return math.prod(self.tensor_shape)


class LayerSizeReport(BaseModel):
    """
    Byte accounting of a serialized layer. total_bytes equals the length of the layer record in the archive.
    """

    layer_id: str
    stream_count: int
    symbol_count: int
    payload_bytes: int
    stream_header_bytes: int
    table_bytes: int
    layer_header_bytes: int
    total_bytes: int
    lut_bytes: int

    @property
    def bits_per_weight(self) -> float:
        if self.symbol_count == 0:
            return 0.0
        return 8 * self.total_bytes / self.symbol_count


class LayerDecodeStats(BaseModel):
    """
    Cost model of a lockstep SIMD decoder: every stream needs one look-up per symbol, the makespan is the longest stream.
    """

    layer_id: str
    stream_symbol_counts: typing.List[int]

    @property
    def lookups(self) -> int:
        return sum(self.stream_symbol_counts)

    @property
    def makespan(self) -> int:
        return max(self.stream_symbol_counts, default=0)


@functools.lru_cache(maxsize=128)
def cached_tables(
    h: NormalizedHistogram,
) -> typing.Tuple[tans_core.EncodeTable, tans_core.DecodeTable]:
    return tans_core.build_tables(h)


def _check_axis(shape: typing.Sequence[int], axis: int) -> None:
    if not 0 <= axis < len(shape):
        raise ShapeMismatchError(f"Axis {axis} is out of range for shape {list(shape)}")


def split_streams(
    symbols: np.ndarray, shape: typing.Sequence[int], axis: int
) -> typing.List[np.ndarray]:
    """
    Partitions a symbol tensor by its index along `axis`. Stream i holds, in row-major order, every symbol whose index along axis is i.

    Args:
        symbols (np.ndarray): Symbol tensor, any shape with the right element count.
        shape (Sequence[int]): Logical shape of the tensor.
        axis (int): Split axis.

    Raises:
        ShapeMismatchError: If the element count does not match the shape or axis is out of range.

    Returns:
        List[np.ndarray]: shape[axis] flat symbol sequences.
    """
    symbols = np.asarray(symbols)
    _check_axis(shape, axis)
    if symbols.size != math.prod(shape):
        raise ShapeMismatchError(
            f"Tensor has {symbols.size} elements but shape {list(shape)} needs {math.prod(shape)}"
        )
    moved = np.moveaxis(symbols.reshape(tuple(shape)), axis, 0)
    return [np.ascontiguousarray(moved[i]).ravel() for i in range(moved.shape[0])]


def merge_streams(
    streams: typing.Sequence[np.ndarray], shape: typing.Sequence[int], axis: int
) -> np.ndarray:
    """
    Inverse of split_streams.
    """
    _check_axis(shape, axis)
    shape = tuple(shape)
    if len(streams) != shape[axis]:
        raise ShapeMismatchError(
            f"Expected {shape[axis]} streams for axis {axis} of {list(shape)}, got {len(streams)}"
        )
    inner_shape = shape[:axis] + shape[axis + 1 :]
    stacked = np.stack([np.asarray(s).reshape(inner_shape) for s in streams])
    return np.moveaxis(stacked, 0, axis).reshape(shape)


def encode_layer(
    weights: np.ndarray,
    spec: QuantizerSpec,
    l: int = 256,
    axis: int = 1,
    parallel: bool = True,
    max_workers: typing.Optional[int] = None,
) -> LayerBundle:
    """
    Quantizes a layer and encodes it against one table built from the whole layer.

    Args:
        weights (np.ndarray): Real weight tensor.
        spec (QuantizerSpec): Quantizer of the layer.
        l (int): Table size. Defaults to 256.
        axis (int): Split axis, the input channel axis of [out, in, kh, kw] weights. Defaults to 1.
        parallel (bool): One stream per channel if True, a single stream otherwise. Defaults to True.
        max_workers (Optional[int]): Encode streams on a thread pool of this size. Defaults to sequential encoding.

    Raises:
        EmptyTensorError: If the tensor has no elements.
        TableTooSmallError: If more symbols are present than the table has slots.

    Returns:
        LayerBundle: Everything needed to decode the layer standalone.
    """
    weights = np.asarray(weights)
    if weights.size == 0:
        raise EmptyTensorError(f"Can not encode the empty layer {spec.layer_id!r}")
    shape = tuple(weights.shape)
    _check_axis(shape, axis)
    symbols = quantize(weights, spec)
    h = tans_core.normalize_freqs(histogram(symbols, spec.bins), l)
    encode_table, _ = cached_tables(h)

    sequences = split_streams(symbols, shape, axis) if parallel else [symbols.ravel()]
    encode_stream = functools.partial(tans_core.encode, t=encode_table)
    if max_workers:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            streams = list(pool.map(encode_stream, sequences))
    else:
        streams = [encode_stream(sequence) for sequence in sequences]

    bundle = LayerBundle(
        layer_id=spec.layer_id,
        tensor_shape=shape,
        split_axis=axis,
        parallel=parallel,
        quantizer=spec,
        histogram=h,
        streams=tuple(streams),
    )
    logger.debug(
        "Encoded layer %r: %d streams, %d payload bits",
        spec.layer_id,
        len(streams),
        sum(s.bit_length for s in streams),
    )
    return bundle


def encode_raw_layer(
    weights: np.ndarray,
    layer_id: str,
    scale_policy: typing.Optional[ScalePolicy] = None,
) -> LayerBundle:
    """
    Quantizes a layer to 8 bits with a 255-level zero-point quantizer and stores the symbols as raw bytes, without table.
    """
    weights = np.asarray(weights)
    spec = make_quantizer(weights, RAW_LAYER_BINS, scale_policy, layer_id=layer_id)
    symbols = quantize(weights, spec)
    stream = EncodedStream(
        payload=symbols.astype(np.uint8).tobytes(),
        bit_length=8 * symbols.size,
        final_state=0,
        symbol_count=symbols.size,
    )
    return LayerBundle(
        layer_id=layer_id,
        tensor_shape=tuple(weights.shape),
        split_axis=0,
        parallel=False,
        quantizer=spec,
        histogram=None,
        streams=(stream,),
        uncompressed=True,
    )


def decode_layer(
    bundle: LayerBundle,
    order: typing.Optional[typing.Sequence[int]] = None,
    max_workers: typing.Optional[int] = None,
    counters: typing.Optional[typing.Sequence[DecodeCounters]] = None,
) -> np.ndarray:
    """
    Reconstructs the symbol tensor of a layer. Streams share only the read-only table, so they can be decoded in any order or concurrently.

    Args:
        bundle (LayerBundle): The compressed layer.
        order (Optional[Sequence[int]]): Order in which streams are decoded. Defaults to stream order.
        max_workers (Optional[int]): Decode streams on a thread pool of this size.
        counters (Optional[Sequence[DecodeCounters]]): One instrumentation object per stream.

    Raises:
        CorruptStreamError: If a stream can not be decoded; carries the stream index.

    Returns:
        np.ndarray: Symbol tensor with the layer shape.
    """
    shape = bundle.tensor_shape
    if bundle.uncompressed:
        return np.frombuffer(bundle.streams[0].payload, dtype=np.uint8).reshape(shape)

    _, decode_table = cached_tables(bundle.histogram)
    stream_count = len(bundle.streams)
    order = list(range(stream_count)) if order is None else list(order)
    if sorted(order) != list(range(stream_count)):
        raise ValueError(f"Decode order must be a permutation of {stream_count} streams")
    if counters is not None and len(counters) != stream_count:
        raise ValueError(f"Expected {stream_count} counters, got {len(counters)}")

    def decode_stream(index: int) -> np.ndarray:
        try:
            return tans_core.decode(
                bundle.streams[index],
                decode_table,
                counters=counters[index] if counters is not None else None,
            )
        except CorruptStreamError as e:
            raise CorruptStreamError(str(e), stream_index=index) from e

    if max_workers:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(decode_stream, order))
    else:
        results = [decode_stream(index) for index in order]
    decoded: typing.List[np.ndarray] = [np.empty(0)] * stream_count
    for index, symbols in zip(order, results):
        decoded[index] = symbols

    if bundle.parallel:
        return merge_streams(decoded, shape, bundle.split_axis)
    return decoded[0].reshape(shape)


def layer_decode_stats(bundle: LayerBundle) -> LayerDecodeStats:
    return LayerDecodeStats(
        layer_id=bundle.layer_id,
        stream_symbol_counts=[s.symbol_count for s in bundle.streams],
    )


def bundle_size_report(bundle: LayerBundle) -> LayerSizeReport:
    """
    Byte breakdown of the archive record of a layer: payloads, per-stream headers (final state, bit length, symbol count), table descriptor (table size and normalized frequencies) and layer header.

    Args:
        bundle (LayerBundle): The compressed layer.

    Returns:
        LayerSizeReport: Size breakdown; total_bytes equals the serialized record length.
    """
    name_bytes = len(bundle.layer_id.encode("utf-8"))
    layer_header_bytes = (
        RECORD_LENGTH_BYTES
        + FIXED_LAYER_HEADER_BYTES
        + name_bytes
        + DIM_BYTES * len(bundle.tensor_shape)
    )
    alphabet_size = bundle.histogram.alphabet_size if bundle.histogram else 0
    table_bytes = TABLE_SIZE_BYTES + FREQ_BYTES * alphabet_size
    stream_header_bytes = STREAM_HEADER_BYTES * len(bundle.streams)
    payload_bytes = sum(len(s.payload) for s in bundle.streams)
    lut_bytes = 3 * bundle.histogram.table_size if bundle.histogram else 0
    return LayerSizeReport(
        layer_id=bundle.layer_id,
        stream_count=len(bundle.streams),
        symbol_count=bundle.symbol_count,
        payload_bytes=payload_bytes,
        stream_header_bytes=stream_header_bytes,
        table_bytes=table_bytes,
        layer_header_bytes=layer_header_bytes,
        total_bytes=layer_header_bytes + table_bytes + stream_header_bytes + payload_bytes,
        lut_bytes=lut_bytes,
    )


def parallel_overhead(
    parallel: typing.Sequence[LayerSizeReport], single: typing.Sequence[LayerSizeReport]
) -> float:
    """
    Relative size increase caused by splitting layers into parallel streams, (parallel total - single total) / single total.
    """
    single_total = sum(r.total_bytes for r in single)
    if single_total == 0:
        raise ValueError("Single stream total must be positive")
    parallel_total = sum(r.total_bytes for r in parallel)
    return (parallel_total - single_total) / single_total
