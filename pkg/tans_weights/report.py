from __future__ import annotations

import math
import typing

import numpy as np
from pydantic import BaseModel

from tans_weights.allocation import AllocationResult
from tans_weights.distributions import (
    bytes_to_mb,
    entropy_bound_bytes,
    histogram,
    merge_distributions,
    shannon_entropy,
)
from tans_weights.huffman import huffman_rate
from tans_weights.quantizer import (
    ScalePolicy,
    make_quantizer,
    matched_even_scale,
    quantize,
    quantize_without_zero_point,
)
from tans_weights.stream_codec import LayerSizeReport


class StatsRow(BaseModel):
    layer: str
    weight_count: int
    bins: int
    entropy_bits: float
    entropy_mb: float
    raw_mb: float
    huffman_bits: typing.Optional[float] = None
    even_entropy_bits: typing.Optional[float] = None


class StatsReport(BaseModel):
    """
    Per-layer memory cost of a quantized model under the entropy bound, with totals and the most expensive layer.
    """

    rows: typing.List[StatsRow]
    total_weights: int
    total_entropy_mb: float
    total_raw_mb: float
    peak_layer: str
    peak_entropy_mb: float
    network_entropy_bits: typing.Optional[float] = None


class CompressReport(BaseModel):
    layers: typing.List[LayerSizeReport]
    archive_bytes: int
    total_weights: int

    @property
    def bits_per_weight(self) -> float:
        return 8 * self.archive_bytes / self.total_weights if self.total_weights else 0.0


class AllocationRow(BaseModel):
    layer: str
    weight_count: int
    bins: int
    entropy_bits: float


class AllocateReport(BaseModel):
    rows: typing.List[AllocationRow]
    target_bits: float
    achieved_bits: float
    relative_gap: float
    converged: bool
    size_criterion: float


class BenchRow(BaseModel):
    layer: str
    streams: int
    symbols: int
    lookups: typing.Optional[int] = None  # None for layers stored without entropy coding
    makespan: int


class BenchReport(BaseModel):
    rows: typing.List[BenchRow]
    repeats: int
    seed: int
    median_seconds: float

    @property
    def total_symbols(self) -> int:
        return sum(row.symbols for row in self.rows)

    @property
    def symbols_per_second(self) -> float:
        return self.total_symbols / self.median_seconds if self.median_seconds > 0 else math.inf


def raw_quantized_bytes(weight_count: int, bins: int) -> float:
    """
    Size of the symbols with a fixed-width code of ceil(log2(bins)) bits.
    """
    return weight_count * math.ceil(math.log2(bins)) / 8


def build_stats_report(
    tensors: typing.Mapping[str, np.ndarray],
    bins: typing.Mapping[str, int],
    scale_policy: typing.Optional[ScalePolicy] = None,
    with_huffman: bool = False,
    compare_even: bool = False,
) -> StatsReport:
    """
    Quantizes every layer with its bin count and measures the entropy of the symbols.

    Args:
        tensors (Mapping[str, np.ndarray]): Weights by layer name.
        bins (Mapping[str, int]): Odd bin count by layer name.
        scale_policy (Optional[ScalePolicy]): Scale rule of the quantizers. Defaults to max-abs.
        with_huffman (bool): Add the Huffman code rate of every layer. Defaults to False.
        compare_even (bool): Add the entropy of the 4-level quantizer without zero level at the same step. Defaults to False.

    Returns:
        StatsReport: The report; the whole-network entropy is only given when all layers share a bin count.
    """
    rows = []
    distributions = []
    for name, weights in tensors.items():
        spec = make_quantizer(weights, bins[name], scale_policy, layer_id=name)
        dist = histogram(quantize(weights, spec), spec.bins)
        distributions.append(dist)
        entropy = shannon_entropy(dist)
        even_entropy = None
        if compare_even:
            even = quantize_without_zero_point(weights, matched_even_scale(spec))
            even_entropy = shannon_entropy(histogram(even, 4))
        rows.append(
            StatsRow(
                layer=name,
                weight_count=int(weights.size),
                bins=spec.bins,
                entropy_bits=entropy,
                entropy_mb=bytes_to_mb(entropy_bound_bytes(dist, int(weights.size))),
                raw_mb=bytes_to_mb(raw_quantized_bytes(int(weights.size), spec.bins)),
                huffman_bits=huffman_rate(dist) if with_huffman else None,
                even_entropy_bits=even_entropy,
            )
        )
    if not rows:
        raise ValueError("A stats report needs at least one layer")
    network_entropy = None
    if len({d.alphabet_size for d in distributions}) == 1:
        network_entropy = shannon_entropy(merge_distributions(distributions))
    peak = max(rows, key=lambda row: row.entropy_mb)
    return StatsReport(
        rows=rows,
        total_weights=sum(row.weight_count for row in rows),
        total_entropy_mb=math.fsum(row.entropy_mb for row in rows),
        total_raw_mb=math.fsum(row.raw_mb for row in rows),
        peak_layer=peak.layer,
        peak_entropy_mb=peak.entropy_mb,
        network_entropy_bits=network_entropy,
    )


def build_allocate_report(
    names: typing.Sequence[str],
    weight_counts: typing.Sequence[int],
    result: AllocationResult,
) -> AllocateReport:
    return AllocateReport(
        rows=[
            AllocationRow(layer=name, weight_count=count, bins=bins, entropy_bits=entropy)
            for name, count, bins, entropy in zip(
                names, weight_counts, result.bins, result.entropies
            )
        ],
        target_bits=result.target_bits,
        achieved_bits=result.achieved_bits,
        relative_gap=result.relative_gap,
        converged=result.converged,
        size_criterion=math.fsum(c * lam for c, lam in zip(weight_counts, result.lambdas)),
    )


def format_table(headers: typing.Sequence[str], rows: typing.Sequence[typing.Sequence[str]]) -> str:
    """
    Left aligns the first column and right aligns the others.
    """
    widths = [
        max([len(header)] + [len(row[i]) for row in rows]) for i, header in enumerate(headers)
    ]

    def line(cells: typing.Sequence[str]) -> str:
        return "  ".join(
            cell.ljust(width) if i == 0 else cell.rjust(width)
            for i, (cell, width) in enumerate(zip(cells, widths))
        ).rstrip()

    return "\n".join([line(headers), line(["-" * w for w in widths])] + [line(r) for r in rows])


def render_stats(report: StatsReport) -> str:
    headers = ["layer", "|W|", "bins", "H (bits/weight)", "H x |W| (MB)", "raw (MB)"]
    with_huffman = any(row.huffman_bits is not None for row in report.rows)
    with_even = any(row.even_entropy_bits is not None for row in report.rows)
    if with_huffman:
        headers.append("huffman (bits/weight)")
    if with_even:
        headers.append("H 4-level (bits/weight)")
    rows = []
    for row in report.rows:
        cells = [
            row.layer,
            str(row.weight_count),
            str(row.bins),
            f"{row.entropy_bits:.4f}",
            f"{row.entropy_mb:.6f}",
            f"{row.raw_mb:.6f}",
        ]
        if with_huffman:
            cells.append(f"{row.huffman_bits:.4f}")
        if with_even:
            cells.append(f"{row.even_entropy_bits:.4f}")
        rows.append(cells)
    lines = [
        format_table(headers, rows),
        f"total: {report.total_weights} weights, entropy bound {report.total_entropy_mb:.6f} MB, "
        f"raw {report.total_raw_mb:.6f} MB",
        f"peak layer: {report.peak_layer} ({report.peak_entropy_mb:.6f} MB)",
    ]
    if report.network_entropy_bits is not None:
        lines.append(f"whole-network entropy: {report.network_entropy_bits:.4f} bits/weight")
    return "\n".join(lines)


def render_compress(report: CompressReport) -> str:
    rows = [
        [
            layer.layer_id,
            str(layer.symbol_count),
            str(layer.stream_count),
            str(layer.total_bytes),
            f"{layer.bits_per_weight:.4f}",
        ]
        for layer in report.layers
    ]
    return "\n".join(
        [
            format_table(["layer", "|W|", "streams", "bytes", "bits/weight"], rows),
            f"total: {report.archive_bytes} bytes ({bytes_to_mb(report.archive_bytes):.6f} MB), "
            f"{report.bits_per_weight:.4f} bits/weight",
        ]
    )


def render_allocate(report: AllocateReport) -> str:
    rows = [
        [row.layer, str(row.weight_count), str(row.bins), f"{row.entropy_bits:.4f}"]
        for row in report.rows
    ]
    status = "converged" if report.converged else "NOT converged"
    return "\n".join(
        [
            format_table(["layer", "|W|", "bins", "H (bits/weight)"], rows),
            f"target: {report.target_bits:.1f} bits, achieved: {report.achieved_bits:.1f} bits "
            f"(gap {report.relative_gap:.4f}, {status})",
            f"size criterion: {report.size_criterion:.1f} bits",
        ]
    )


def render_bench(report: BenchReport) -> str:
    rows = [
        [
            row.layer,
            str(row.streams),
            str(row.symbols),
            "raw" if row.lookups is None else str(row.lookups),
            str(row.makespan),
        ]
        for row in report.rows
    ]
    return "\n".join(
        [
            format_table(["layer", "streams", "symbols", "lookups", "makespan"], rows),
            f"median of {report.repeats} runs (seed {report.seed}): {report.median_seconds:.6f} s, "
            f"{report.symbols_per_second:.0f} symbols/s",
        ]
    )


def render_json(report: BaseModel) -> str:
    return report.model_dump_json(indent=2)
