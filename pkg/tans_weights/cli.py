from __future__ import annotations

import argparse
import csv
import logging
import pathlib
import statistics
import sys
import time
import typing

import numpy as np
from pydantic import BaseModel, Field, model_validator

from tans_weights import report
from tans_weights.allocation import AllocationConfig, allocate, lambda_to_bins
from tans_weights.config import CodecSettings, load_settings
from tans_weights.container import (
    load_manifest,
    load_tensors,
    read_model,
    write_model,
    write_tensors,
)
from tans_weights.distributions import Distribution
from tans_weights.errors import CORRUPT_DATA_ERRORS
from tans_weights.quantizer import ScalePolicy, dequantize, make_quantizer, quantize
from tans_weights.stream_codec import (
    LayerBundle,
    bundle_size_report,
    decode_layer,
    encode_layer,
    encode_raw_layer,
    layer_decode_stats,
)
from tans_weights.tans_core import (
    DecodeCounters,
    build_tables,
    iter_table_rows,
    lut_footprint,
    normalize_freqs,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_CORRUPT_DATA = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

Subcommand = typing.Literal[
    "stats", "quantize", "compress", "decompress", "allocate", "bench-decode", "table"
]

_NEEDS_BINS = {"stats", "quantize"}
_NEEDS_OUTPUT = {"quantize", "compress", "decompress"}


class CommandSpec(BaseModel):
    """
    Validated invocation of one subcommand. Codec flags left unset fall back to the --config file and then to the CodecSettings defaults.
    """

    subcommand: Subcommand
    input: typing.Optional[pathlib.Path] = None
    output: typing.Optional[pathlib.Path] = None
    json_path: typing.Optional[pathlib.Path] = None
    config: typing.Optional[pathlib.Path] = None

    table_size: typing.Optional[int] = None
    split_axis: typing.Optional[int] = None
    parallel: typing.Optional[bool] = None
    scale_policy: typing.Optional[typing.Literal["max-abs", "percentile"]] = None
    percentile: typing.Optional[float] = None
    uncompressed_layers: typing.List[str] = Field(default_factory=list)
    workers: typing.Optional[int] = Field(default=None, ge=1)

    bins: typing.Optional[int] = None
    lam: typing.Optional[float] = None
    target_bytes: typing.Optional[float] = Field(default=None, gt=0)
    beta: float = Field(default=1.0, ge=0)
    learning_rate: float = Field(default=2.0, gt=0)
    iterations: int = Field(default=500, ge=1)

    seed: int = 0
    repeats: int = Field(default=5, ge=1)
    counts: typing.Optional[typing.List[int]] = None
    huffman: bool = False
    compare_even: bool = False

    @model_validator(mode="after")
    def check_arguments(self) -> CommandSpec:
        precision = [
            flag
            for flag, value in (("--bins", self.bins), ("--lam", self.lam), ("--target-bytes", self.target_bytes))
            if value is not None
        ]
        assert len(precision) <= 1, f"{' and '.join(precision)} are mutually exclusive"
        if self.subcommand in _NEEDS_BINS:
            assert self.bins is not None or self.lam is not None, f"{self.subcommand} needs --bins or --lam"
        if self.subcommand == "compress":
            assert precision, "compress needs --bins, --lam or --target-bytes"
        if self.subcommand == "allocate":
            assert self.target_bytes is not None, "allocate needs --target-bytes"
        if self.subcommand == "table":
            assert self.counts, "table needs --counts"
        else:
            assert self.input is not None, f"{self.subcommand} needs an input path"
        if self.subcommand in _NEEDS_OUTPUT:
            assert self.output is not None, f"{self.subcommand} needs --output"
        return self

    @property
    def uniform_bins(self) -> typing.Optional[int]:
        if self.bins is not None:
            return self.bins
        if self.lam is not None:
            return lambda_to_bins(self.lam)
        return None

    def codec_settings(self) -> CodecSettings:
        settings = load_settings(self.config) if self.config else CodecSettings()
        overrides: typing.Dict[str, typing.Any] = {
            key: value
            for key, value in (
                ("table_size", self.table_size),
                ("split_axis", self.split_axis),
                ("parallel", self.parallel),
            )
            if value is not None
        }
        if self.scale_policy is not None or self.percentile is not None:
            policy = settings.scale_policy.model_dump()
            if self.scale_policy is not None:
                policy["kind"] = self.scale_policy
            if self.percentile is not None:
                policy["q"] = self.percentile
            overrides["scale_policy"] = ScalePolicy(**policy)
        if self.uncompressed_layers:
            overrides["uncompressed_layers"] = settings.uncompressed_layers + self.uncompressed_layers
        return CodecSettings(**{**settings.model_dump(), **overrides})

    def allocation_config(self) -> AllocationConfig:
        return AllocationConfig(
            target_bits=8 * self.target_bytes,
            beta=self.beta,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
        )


def _write_json(spec: CommandSpec, result: BaseModel) -> None:
    if spec.json_path is not None:
        spec.json_path.write_text(report.render_json(result), encoding="utf-8")


def _load_model(spec: CommandSpec) -> typing.Dict[str, np.ndarray]:
    return load_tensors(load_manifest(spec.input))


def _allocate_bins(
    spec: CommandSpec, settings: CodecSettings, tensors: typing.Mapping[str, np.ndarray]
) -> typing.Tuple[typing.Dict[str, int], report.AllocateReport]:
    names = [name for name in tensors if name not in settings.uncompressed_layers]
    layers = [(tensors[name], tensors[name].size) for name in names]
    result = allocate(layers, spec.allocation_config(), settings.scale_policy, spec.workers)
    allocate_report = report.build_allocate_report(names, [w.size for w, _ in layers], result)
    return dict(zip(names, result.bins)), allocate_report


def _layer_bins(
    spec: CommandSpec, settings: CodecSettings, tensors: typing.Mapping[str, np.ndarray]
) -> typing.Dict[str, int]:
    if spec.uniform_bins is not None:
        return {name: spec.uniform_bins for name in tensors}
    bins, allocate_report = _allocate_bins(spec, settings, tensors)
    print(report.render_allocate(allocate_report))
    return bins


def cmd_stats(spec: CommandSpec, settings: CodecSettings) -> None:
    tensors = _load_model(spec)
    stats = report.build_stats_report(
        tensors,
        _layer_bins(spec, settings, tensors),
        settings.scale_policy,
        with_huffman=spec.huffman,
        compare_even=spec.compare_even,
    )
    print(report.render_stats(stats))
    _write_json(spec, stats)


def cmd_quantize(spec: CommandSpec, settings: CodecSettings) -> None:
    tensors = _load_model(spec)
    bins = _layer_bins(spec, settings, tensors)
    quantized = {}
    for name, weights in tensors.items():
        quantizer = make_quantizer(weights, bins[name], settings.scale_policy, layer_id=name)
        quantized[name] = dequantize(quantize(weights, quantizer), quantizer)
        print(f"{name}: {quantizer.bins} bins, scale {quantizer.scale:.6g}")
    write_tensors(quantized, spec.output)
    print(f"Wrote {len(quantized)} quantized layers to {spec.output}")


def _encode_model(
    spec: CommandSpec, settings: CodecSettings, tensors: typing.Mapping[str, np.ndarray]
) -> typing.List[LayerBundle]:
    unknown = set(settings.uncompressed_layers) - set(tensors)
    if unknown:
        raise ValueError(f"Unknown uncompressed layers: {sorted(unknown)}")
    compressed = {name: w for name, w in tensors.items() if name not in settings.uncompressed_layers}
    bins = _layer_bins(spec, settings, compressed) if compressed else {}
    bundles = []
    for name, weights in tensors.items():
        if name in settings.uncompressed_layers:
            bundles.append(encode_raw_layer(weights, name, settings.scale_policy))
            continue
        quantizer = make_quantizer(weights, bins[name], settings.scale_policy, layer_id=name)
        axis, parallel = settings.split_axis, settings.parallel
        if axis >= weights.ndim:
            logger.debug("Layer %r has rank %d, coding it as a single stream", name, weights.ndim)
            axis, parallel = 0, False
        bundles.append(
            encode_layer(weights, quantizer, settings.table_size, axis, parallel, spec.workers)
        )
    return bundles


def cmd_compress(spec: CommandSpec, settings: CodecSettings) -> None:
    tensors = _load_model(spec)
    bundles = _encode_model(spec, settings, tensors)
    with open(spec.output, "wb") as f:
        data = write_model(bundles, f)
    summary = report.CompressReport(
        layers=[bundle_size_report(bundle) for bundle in bundles],
        archive_bytes=len(data),
        total_weights=sum(bundle.symbol_count for bundle in bundles),
    )
    print(report.render_compress(summary))
    _write_json(spec, summary)


def cmd_decompress(spec: CommandSpec, settings: CodecSettings) -> None:
    bundles = read_model(spec.input.read_bytes())
    tensors = {
        bundle.layer_id: dequantize(decode_layer(bundle, max_workers=spec.workers), bundle.quantizer)
        for bundle in bundles
    }
    write_tensors(tensors, spec.output)
    print(f"Wrote {len(tensors)} layers to {spec.output}")


def cmd_allocate(spec: CommandSpec, settings: CodecSettings) -> None:
    _, allocate_report = _allocate_bins(spec, settings, _load_model(spec))
    print(report.render_allocate(allocate_report))
    _write_json(spec, allocate_report)


def cmd_bench_decode(spec: CommandSpec, settings: CodecSettings) -> None:
    bundles = read_model(spec.input.read_bytes())
    rng = np.random.default_rng(spec.seed)
    timings = []
    lookups: typing.Dict[str, typing.Optional[int]] = {}
    for _ in range(spec.repeats):
        started = time.perf_counter()
        for bundle in bundles:
            counters = [DecodeCounters() for _ in bundle.streams]
            order = rng.permutation(len(bundle.streams)).tolist()
            decode_layer(bundle, order=order, max_workers=spec.workers, counters=counters)
            lookups[bundle.layer_id] = None if bundle.uncompressed else sum(c.lookups for c in counters)
        timings.append(time.perf_counter() - started)
    rows = []
    for bundle in bundles:
        stats = layer_decode_stats(bundle)
        rows.append(
            report.BenchRow(
                layer=bundle.layer_id,
                streams=len(bundle.streams),
                symbols=bundle.symbol_count,
                lookups=lookups[bundle.layer_id],
                makespan=stats.makespan,
            )
        )
    bench = report.BenchReport(
        rows=rows, repeats=spec.repeats, seed=spec.seed, median_seconds=statistics.median(timings)
    )
    print(report.render_bench(bench))
    _write_json(spec, bench)


def cmd_table(spec: CommandSpec, settings: CodecSettings) -> None:
    dist = Distribution(alphabet_size=len(spec.counts), counts=tuple(spec.counts))
    _, decode_table = build_tables(normalize_freqs(dist, settings.table_size))
    out = open(spec.output, "w", newline="") if spec.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["state", "symbol", "nb_bits", "new_x"])
        writer.writerows(iter_table_rows(decode_table))
    finally:
        if spec.output:
            out.close()
    print(f"# lut footprint: {lut_footprint(decode_table)} bytes")


COMMANDS: typing.Dict[str, typing.Callable[[CommandSpec, CodecSettings], None]] = {
    "stats": cmd_stats,
    "quantize": cmd_quantize,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "allocate": cmd_allocate,
    "bench-decode": cmd_bench_decode,
    "table": cmd_table,
}


def _parse_counts(text: str) -> typing.List[int]:
    try:
        counts = [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if any(c < 0 for c in counts):
        raise argparse.ArgumentTypeError("counts must be nonnegative")
    return counts


def build_parser() -> argparse.ArgumentParser:
    codec = argparse.ArgumentParser(add_help=False)
    codec.add_argument("--config", type=pathlib.Path, help="JSON file with codec settings")
    codec.add_argument("--table-size", type=int, help="number of tANS states l (default 256)")
    codec.add_argument("--split-axis", type=int, help="axis split into parallel streams (default 1)")
    codec.add_argument(
        "--parallel", action=argparse.BooleanOptionalAction, default=None, help="one stream per channel (default on)"
    )
    codec.add_argument("--scale-policy", choices=["max-abs", "percentile"], help="quantizer scale rule")
    codec.add_argument("--percentile", type=float, help="percentile of the percentile scale rule")
    codec.add_argument("--workers", type=int, help="thread pool size for per-stream work")

    precision = argparse.ArgumentParser(add_help=False)
    precision.add_argument("--bins", type=int, help="odd number of quantization bins for every layer")
    precision.add_argument("--lam", type=float, help="precision lambda, giving 2*round(lambda)+1 bins")
    precision.add_argument("--target-bytes", type=float, help="total entropy goal in bytes")
    precision.add_argument("--beta", type=float, default=1.0, help="weight of the distortion proxy")
    precision.add_argument("--learning-rate", type=float, default=2.0, help="allocation step size")
    precision.add_argument("--iterations", type=int, default=500, help="allocation iteration budget")

    dump = argparse.ArgumentParser(add_help=False)
    dump.add_argument("--json", dest="json_path", type=pathlib.Path, help="also write the report as JSON")

    parser = argparse.ArgumentParser(
        prog="tans-weights", description="Lossless tANS coding of quantized neural network weights."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    commands = parser.add_subparsers(dest="subcommand", required=True)

    stats = commands.add_parser("stats", parents=[codec, precision, dump], help="per-layer entropy report")
    stats.add_argument("input", type=pathlib.Path, help="tensor manifest")
    stats.add_argument("--huffman", action="store_true", help="add the Huffman code rate per layer")
    stats.add_argument(
        "--compare-even", action="store_true", help="add the entropy of a 4-level quantizer without zero level"
    )

    quantize_parser = commands.add_parser("quantize", parents=[codec, precision], help="write quantized weights")
    quantize_parser.add_argument("input", type=pathlib.Path, help="tensor manifest")
    quantize_parser.add_argument("-o", "--output", type=pathlib.Path, help="output directory")

    compress = commands.add_parser("compress", parents=[codec, precision, dump], help="write a compressed archive")
    compress.add_argument("input", type=pathlib.Path, help="tensor manifest")
    compress.add_argument("-o", "--output", type=pathlib.Path, help="archive path")
    compress.add_argument(
        "--uncompressed-layer",
        dest="uncompressed_layers",
        action="append",
        default=[],
        help="store this layer as raw 8-bit symbols, repeatable",
    )

    decompress = commands.add_parser("decompress", parents=[codec], help="restore dequantized weights")
    decompress.add_argument("input", type=pathlib.Path, help="archive path")
    decompress.add_argument("-o", "--output", type=pathlib.Path, help="output directory")

    allocate_parser = commands.add_parser("allocate", parents=[codec, precision, dump], help="learn per-layer bins")
    allocate_parser.add_argument("input", type=pathlib.Path, help="tensor manifest")

    bench = commands.add_parser("bench-decode", parents=[codec, dump], help="measure decode throughput")
    bench.add_argument("input", type=pathlib.Path, help="archive path")
    bench.add_argument("--repeats", type=int, default=5, help="number of timed runs")
    bench.add_argument("--seed", type=int, default=0, help="seed of the stream decode order")

    table = commands.add_parser("table", parents=[codec], help="dump the decoder look-up table as CSV")
    table.add_argument("--counts", type=_parse_counts, required=True, help="symbol counts, e.g. 9,1")
    table.add_argument("-o", "--output", type=pathlib.Path, help="CSV path, standard output if omitted")
    return parser


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    """
    Runs the command line.

    Returns:
        int: 0 on success, 2 on invalid input, 3 on corrupt data.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INPUT_ERROR
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, format=LOG_FORMAT, stream=sys.stderr
    )
    arguments = {key: value for key, value in vars(args).items() if key != "verbose"}
    try:
        spec = CommandSpec(**arguments)
        COMMANDS[spec.subcommand](spec, spec.codec_settings())
    except CORRUPT_DATA_ERRORS as e:
        logger.error("Corrupt data: %s", e)
        return EXIT_CORRUPT_DATA
    except (ValueError, OSError) as e:
        logger.error("Invalid input: %s", e)
        return EXIT_INPUT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
