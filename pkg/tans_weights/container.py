from __future__ import annotations

import logging
import math
import pathlib
import re
import struct
import typing

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from tans_weights.errors import (
    ArchiveError,
    BadMagicError,
    InvalidTableError,
    ManifestError,
    TruncatedArchiveError,
    UnsupportedVersionError,
)
from tans_weights.quantizer import QuantizerSpec
from tans_weights.stream_codec import RAW_LAYER_BINS, LayerBundle, cached_tables
from tans_weights.tans_core import EncodedStream, NormalizedHistogram

logger = logging.getLogger(__name__)

MAGIC = b"ANSW"
VERSION = 1
RAW_BINS_SENTINEL = 256
FLAG_COMPRESSED = 0x01
FLAG_PARALLEL = 0x02

FILE_HEADER = struct.Struct("<4sHH")
RECORD_LENGTH = struct.Struct("<I")
STREAM_HEADER = struct.Struct("<HII")
FLOAT32_LE = np.dtype("<f4")


def _stream_payload_bytes(bit_length: int) -> int:
    return (bit_length + 7) // 8


def _encode_record(bundle: LayerBundle) -> bytes:
    name = bundle.layer_id.encode("utf-8")
    flags = (0 if bundle.uncompressed else FLAG_COMPRESSED) | (
        FLAG_PARALLEL if bundle.parallel else 0
    )
    parts = [
        struct.pack("<H", len(name)),
        name,
        struct.pack(f"<B{len(bundle.tensor_shape)}I", len(bundle.tensor_shape), *bundle.tensor_shape),
        struct.pack("<BB", flags, bundle.split_axis),
    ]
    if bundle.uncompressed:
        parts.append(struct.pack("<HdH", RAW_BINS_SENTINEL, bundle.quantizer.scale, 0))
    else:
        h = bundle.histogram
        parts.append(struct.pack("<HdH", bundle.quantizer.bins, bundle.quantizer.scale, h.table_size))
        parts.append(struct.pack(f"<{h.alphabet_size}H", *h.freqs))
    parts.append(struct.pack("<I", len(bundle.streams)))
    for stream in bundle.streams:
        parts.append(STREAM_HEADER.pack(stream.final_state, stream.bit_length, stream.symbol_count))
    for stream in bundle.streams:
        parts.append(stream.payload)
    body = b"".join(parts)
    return RECORD_LENGTH.pack(len(body)) + body


def write_model(
    bundles: typing.Sequence[LayerBundle], out: typing.Optional[typing.BinaryIO] = None
) -> bytes:
    """
    Serializes compressed layers into an archive. All integers are little-endian; the layout only depends on the bundles, so identical inputs give identical bytes on every platform.

    Args:
        bundles (Sequence[LayerBundle]): Compressed layers in archive order.
        out (Optional[BinaryIO]): Binary file object the archive is also written to.

    Returns:
        bytes: The archive.
    """
    if len(bundles) > 0xFFFF:
        raise ArchiveError(f"An archive holds at most {0xFFFF} layers, got {len(bundles)}")
    data = FILE_HEADER.pack(MAGIC, VERSION, len(bundles)) + b"".join(
        _encode_record(bundle) for bundle in bundles
    )
    logger.debug("Wrote archive with %d layers, %d bytes", len(bundles), len(data))
    if out is not None:
        out.write(data)
    return data


class _Cursor:
    def __init__(self, data: bytes, offset: int = 0, end: typing.Optional[int] = None):
        self.data = data
        self.offset = offset
        self.end = len(data) if end is None else end

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > self.end:
            raise TruncatedArchiveError(
                f"Archive ends inside {what}: need {size} bytes at offset {self.offset}, "
                f"{self.end - self.offset} available"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> typing.Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_header(data: bytes) -> int:
    cursor = _Cursor(data)
    magic, version, layer_count = cursor.unpack(FILE_HEADER.format, "the file header")
    if magic != MAGIC:
        raise BadMagicError(f"Expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"Archive version {version} is not supported, expected {VERSION}")
    return layer_count


def archive_layer_offsets(data: bytes) -> typing.List[typing.Tuple[int, int]]:
    """
    Locates the layer records of an archive using only the declared record lengths, without parsing them.

    Args:
        data (bytes): The archive.

    Raises:
        BadMagicError: If the archive does not start with the magic.
        UnsupportedVersionError: If the archive version is unknown.
        TruncatedArchiveError: If a record extends past the end of the archive.
        ArchiveError: If bytes follow the last record.

    Returns:
        List[Tuple[int, int]]: Offset and length of each record body.
    """
    layer_count = _read_header(data)
    cursor = _Cursor(data, FILE_HEADER.size)
    offsets = []
    for index in range(layer_count):
        (length,) = cursor.unpack("<I", f"the length of layer record {index}")
        offsets.append((cursor.offset, length))
        cursor.take(length, f"layer record {index}")
    if cursor.offset != len(data):
        raise ArchiveError(f"{len(data) - cursor.offset} unexpected bytes after the last layer record")
    return offsets


def _decode_record(data: bytes, offset: int, length: int, index: int) -> LayerBundle:
    cursor = _Cursor(data, offset, offset + length)
    (name_length,) = cursor.unpack("<H", f"the name length of layer {index}")
    try:
        layer_id = cursor.take(name_length, f"the name of layer {index}").decode("utf-8")
    except UnicodeDecodeError as e:
        raise ArchiveError(f"Layer {index} has an invalid UTF-8 name: {e}")
    (rank,) = cursor.unpack("<B", f"the rank of layer {layer_id!r}")
    if rank == 0:
        raise ArchiveError(f"Layer {layer_id!r} has rank 0")
    shape = cursor.unpack(f"<{rank}I", f"the shape of layer {layer_id!r}")
    flags, split_axis = cursor.unpack("<BB", f"the flags of layer {layer_id!r}")
    if flags & ~(FLAG_COMPRESSED | FLAG_PARALLEL):
        raise ArchiveError(f"Layer {layer_id!r} has unknown flags {flags:#04x}")
    compressed = bool(flags & FLAG_COMPRESSED)
    bins, scale, table_size = cursor.unpack("<HdH", f"the quantizer of layer {layer_id!r}")

    if compressed:
        if bins == RAW_BINS_SENTINEL:
            raise InvalidTableError(f"Compressed layer {layer_id!r} carries the raw bins sentinel")
        try:
            quantizer = QuantizerSpec(bins=bins, scale=scale, layer_id=layer_id)
        except ValidationError as e:
            raise ArchiveError(f"Layer {layer_id!r} has an invalid quantizer: {e}")
        freqs = cursor.unpack(f"<{bins}H", f"the frequencies of layer {layer_id!r}")
        try:
            histogram = NormalizedHistogram(table_size=table_size, freqs=freqs)
            cached_tables(histogram)
        except ValidationError as e:
            raise InvalidTableError(f"Layer {layer_id!r} has an invalid table: {e}")
    else:
        if bins != RAW_BINS_SENTINEL or table_size != 0:
            raise InvalidTableError(
                f"Raw layer {layer_id!r} must store bins={RAW_BINS_SENTINEL} and l=0, got {bins} and {table_size}"
            )
        try:
            quantizer = QuantizerSpec(bins=RAW_LAYER_BINS, scale=scale, layer_id=layer_id)
        except ValidationError as e:
            raise ArchiveError(f"Layer {layer_id!r} has an invalid quantizer: {e}")
        histogram = None

    (stream_count,) = cursor.unpack("<I", f"the stream count of layer {layer_id!r}")
    # bound the count by the bytes left so a corrupt count can not allocate
    if stream_count * STREAM_HEADER.size > cursor.end - cursor.offset:
        raise TruncatedArchiveError(
            f"Layer {layer_id!r} declares {stream_count} streams but its record is too short"
        )
    headers = [
        cursor.unpack(STREAM_HEADER.format, f"stream header {i} of layer {layer_id!r}")
        for i in range(stream_count)
    ]
    streams = []
    for i, (final_state, bit_length, symbol_count) in enumerate(headers):
        payload = cursor.take(
            _stream_payload_bytes(bit_length), f"the payload of stream {i} of layer {layer_id!r}"
        )
        streams.append(
            EncodedStream(
                payload=payload,
                bit_length=bit_length,
                final_state=final_state,
                symbol_count=symbol_count,
            )
        )
    if cursor.offset != cursor.end:
        raise ArchiveError(
            f"Layer {layer_id!r} declares {length} bytes but its fields use {cursor.offset - offset}"
        )
    try:
        return LayerBundle(
            layer_id=layer_id,
            tensor_shape=shape,
            split_axis=split_axis,
            parallel=bool(flags & FLAG_PARALLEL),
            quantizer=quantizer,
            histogram=histogram,
            streams=tuple(streams),
            uncompressed=not compressed,
        )
    except ValidationError as e:
        raise ArchiveError(f"Layer {layer_id!r} is inconsistent: {e}")


def read_model(data: bytes) -> typing.List[LayerBundle]:
    """
    Parses an archive written by write_model and rebuilds the coding tables of every layer.

    Args:
        data (bytes): The archive.

    Raises:
        BadMagicError: If the archive does not start with the magic.
        UnsupportedVersionError: If the archive version is unknown.
        TruncatedArchiveError: If the archive ends inside a field.
        InvalidTableError: If normalized frequencies do not sum to the table size or the table size is invalid.
        ArchiveError: For every other inconsistency.

    Returns:
        List[LayerBundle]: The compressed layers in archive order.
    """
    data = bytes(data)
    bundles = [
        _decode_record(data, offset, length, index)
        for index, (offset, length) in enumerate(archive_layer_offsets(data))
    ]
    logger.debug("Read archive with %d layers", len(bundles))
    return bundles


class TensorEntry(BaseModel):
    """
    One layer of a tensor manifest.

    Args:
        name (str): Layer name, unique within the manifest.
        shape (List[int]): Tensor shape, row-major.
        path (str): Raw data file, relative to the manifest directory.
        dtype (Literal["float32-le"]): Element type. Only little-endian 32-bit floats are supported.
    """

    name: str
    shape: typing.List[int]
    path: str
    dtype: typing.Literal["float32-le"] = "float32-le"

    @field_validator("shape")
    @classmethod
    def check_shape(cls, shape: typing.List[int]) -> typing.List[int]:
        assert len(shape) >= 1, "shape needs at least one dimension"
        assert all(d >= 1 for d in shape), f"dimensions must be positive, got {shape}"
        return shape

    @property
    def byte_length(self) -> int:
        return FLOAT32_LE.itemsize * math.prod(self.shape)


class TensorManifest(BaseModel):
    """
    JSON manifest of a model: a list of named float32 tensors stored as raw little-endian files.
    """

    layers: typing.List[TensorEntry]
    base_dir: pathlib.Path = Field(default=pathlib.Path("."), exclude=True)

    @model_validator(mode="after")
    def check_unique_names(self) -> TensorManifest:
        names = [layer.name for layer in self.layers]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        assert not duplicates, f"Duplicate layer names in manifest: {duplicates}"
        return self

    def resolve(self, entry: TensorEntry) -> pathlib.Path:
        return self.base_dir / entry.path


def load_manifest(path: typing.Union[str, pathlib.Path]) -> TensorManifest:
    """
    Reads a JSON manifest; data file paths are resolved against the manifest directory.

    Raises:
        ManifestError: If the file is missing or the manifest is malformed.
    """
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"Can not read manifest {path}: {e}")
    try:
        manifest = TensorManifest.model_validate_json(text)
    except ValidationError as e:
        raise ManifestError(f"Malformed manifest {path}: {e}")
    return manifest.model_copy(update={"base_dir": path.parent})


def load_tensors(manifest: TensorManifest) -> typing.Dict[str, np.ndarray]:
    """
    Loads the tensors of a manifest. The file length is checked against the declared shape before anything is parsed.

    Args:
        manifest (TensorManifest): The manifest.

    Raises:
        ManifestError: If a data file is missing or its length does not match the shape.

    Returns:
        Dict[str, np.ndarray]: Float32 tensors by layer name, in manifest order.
    """
    tensors = {}
    for entry in manifest.layers:
        path = manifest.resolve(entry)
        if not path.is_file():
            raise ManifestError(f"Data file {path} of layer {entry.name!r} does not exist")
        size = path.stat().st_size
        if size != entry.byte_length:
            raise ManifestError(
                f"Data file {path} of layer {entry.name!r} has {size} bytes, "
                f"shape {entry.shape} needs {entry.byte_length}"
            )
        tensors[entry.name] = np.fromfile(path, dtype=FLOAT32_LE).reshape(entry.shape)
    return tensors


def _file_stem(index: int, name: str) -> str:
    return f"{index:03d}_{re.sub(r'[^A-Za-z0-9_.-]', '_', name)}"


def write_tensors(
    tensors: typing.Mapping[str, np.ndarray],
    directory: typing.Union[str, pathlib.Path],
    manifest_name: str = "manifest.json",
) -> TensorManifest:
    """
    Writes tensors as raw little-endian float32 files plus a JSON manifest into a directory.

    Args:
        tensors (Mapping[str, np.ndarray]): Tensors by layer name.
        directory (Union[str, Path]): Output directory, created if needed.
        manifest_name (str): File name of the manifest. Defaults to "manifest.json".

    Returns:
        TensorManifest: The written manifest.
    """
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, (name, tensor) in enumerate(tensors.items()):
        file_name = _file_stem(index, name) + ".f32"
        tensor = np.asarray(tensor)
        (directory / file_name).write_bytes(tensor.astype(FLOAT32_LE).tobytes())
        entries.append(TensorEntry(name=name, shape=list(tensor.shape), path=file_name))
    manifest = TensorManifest(layers=entries, base_dir=directory)
    (directory / manifest_name).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return manifest
