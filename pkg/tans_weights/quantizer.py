from __future__ import annotations

import logging
import typing

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from tans_weights.errors import (
    DegenerateScaleError,
    EmptyTensorError,
    InvalidBinsError,
    SymbolOutOfRangeError,
)

logger = logging.getLogger(__name__)


class ScalePolicy(BaseModel):
    """
    Static rule for choosing the quantizer half-range from the weights.

    Args:
        kind (Literal["max-abs", "percentile"]): Use the largest magnitude or a percentile of the magnitudes.
        q (float): Percentile in (0, 100], only used by the percentile policy. Defaults to 99.9.
    """

    model_config = ConfigDict(frozen=True)

    kind: typing.Literal["max-abs", "percentile"] = "max-abs"
    q: float = 99.9

    @field_validator("q")
    @classmethod
    def check_percentile(cls, q: float) -> float:
        assert 0 < q <= 100, f"percentile must be in (0, 100], got {q}"
        return q


class QuantizerSpec(BaseModel):
    """
    Symmetric uniform quantizer with a zero-point. The odd number of bins puts the middle level exactly at zero.

    Args:
        bins (int): Odd number of quantization levels, at least 3.
        scale (float): Half-range a; the levels are -a + k * 2a / (bins - 1).
        layer_id (str): Name of the quantized layer. Defaults to "".
    """

    model_config = ConfigDict(frozen=True)

    bins: int
    scale: float
    layer_id: str = ""

    @field_validator("bins")
    @classmethod
    def check_bins(cls, bins: int) -> int:
        assert bins >= 3 and bins % 2 == 1, f"bins must be odd and >= 3, got {bins}"
        return bins

    @field_validator("scale")
    @classmethod
    def check_scale(cls, scale: float) -> float:
        assert np.isfinite(scale) and scale > 0, f"scale must be positive, got {scale}"
        return scale

    @property
    def step(self) -> float:
        return 2 * self.scale / (self.bins - 1)

    @property
    def zero_symbol(self) -> int:
        return (self.bins - 1) // 2

    @property
    def levels(self) -> np.ndarray:
        return (np.arange(self.bins) - self.zero_symbol) * self.step


def _symbol_dtype(alphabet_size: int) -> type:
    return np.uint8 if alphabet_size <= 256 else np.int64


def _round_half_away_from_zero(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def make_quantizer(
    weights: np.ndarray,
    bins: int,
    scale_policy: typing.Optional[ScalePolicy] = None,
    layer_id: str = "",
) -> QuantizerSpec:
    """
    Creates a zero-point quantizer for a weight tensor.

    Args:
        weights (np.ndarray): Real weight tensor.
        bins (int): Odd number of quantization levels, at least 3.
        scale_policy (Optional[ScalePolicy]): Rule for the half-range. Defaults to max-abs.
        layer_id (str): Name of the quantized layer. Defaults to "".

    Raises:
        InvalidBinsError: If bins is even or smaller than 3.
        EmptyTensorError: If the tensor has no elements.
        DegenerateScaleError: If the policy yields a zero scale, e.g. an all-zero tensor.

    Returns:
        QuantizerSpec: The quantizer.
    """
    if bins < 3 or bins % 2 == 0:
        raise InvalidBinsError(f"Number of bins must be odd and >= 3, got {bins}")
    magnitudes = np.abs(np.asarray(weights, dtype=np.float64)).ravel()
    if magnitudes.size == 0:
        raise EmptyTensorError(f"Can not fit a quantizer on the empty tensor {layer_id}")
    scale_policy = scale_policy or ScalePolicy()
    if scale_policy.kind == "max-abs":
        scale = float(magnitudes.max())
    else:
        scale = float(np.percentile(magnitudes, scale_policy.q))
    if not scale > 0:
        raise DegenerateScaleError(
            f"Scale policy {scale_policy.kind} gives a zero scale for layer {layer_id!r}"
        )
    logger.debug("Quantizer for %r: bins=%d scale=%g", layer_id, bins, scale)
    return QuantizerSpec(bins=bins, scale=scale, layer_id=layer_id)


def quantize(weights: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """
    Maps real weights to symbol ids in [0, bins - 1]. Rounds half away from zero and clips at the range edges, so zero maps to the middle symbol.

    Args:
        weights (np.ndarray): Real weight tensor.
        spec (QuantizerSpec): The quantizer.

    Returns:
        np.ndarray: Symbol tensor with the shape of weights.
    """
    half = spec.zero_symbol
    rounded = _round_half_away_from_zero(np.asarray(weights, dtype=np.float64) / spec.step)
    return (np.clip(rounded, -half, half) + half).astype(_symbol_dtype(spec.bins))


def dequantize(symbols: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """
    Maps symbol ids back to their reconstruction levels.

    Args:
        symbols (np.ndarray): Symbol tensor.
        spec (QuantizerSpec): The quantizer the symbols were produced with.

    Raises:
        SymbolOutOfRangeError: If a symbol is not smaller than bins.

    Returns:
        np.ndarray: Real tensor of reconstruction levels.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    flat = symbols.ravel()
    offending = np.flatnonzero((flat < 0) | (flat >= spec.bins))
    if offending.size:
        index = int(offending[0])
        raise SymbolOutOfRangeError(index, int(flat[index]), spec.bins)
    return (symbols - spec.zero_symbol) * spec.step


def quantization_mse(weights: np.ndarray, spec: QuantizerSpec) -> float:
    """
    Mean squared quantization error of a tensor, used as distortion proxy.

    Raises:
        EmptyTensorError: If the tensor has no elements.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise EmptyTensorError("Quantization error of an empty tensor is undefined")
    error = weights - dequantize(quantize(weights, spec), spec)
    return float(np.mean(error * error))


def quantize_without_zero_point(
    weights: np.ndarray, scale: float, levels: int = 4
) -> np.ndarray:
    """
    Symmetric uniform quantizer with an even number of levels and therefore no level at zero. For 4 levels the reconstruction points are -a, -a/3, a/3, a.

    Args:
        weights (np.ndarray): Real weight tensor.
        scale (float): Half-range a.
        levels (int): Even number of levels. Defaults to 4.

    Returns:
        np.ndarray: Symbol tensor with ids in [0, levels - 1].
    """
    if levels < 2 or levels % 2 == 1:
        raise InvalidBinsError(f"Number of levels must be even and >= 2, got {levels}")
    if not scale > 0:
        raise DegenerateScaleError(f"scale must be positive, got {scale}")
    step = 2 * scale / (levels - 1)
    position = (np.asarray(weights, dtype=np.float64) + scale) / step
    return np.clip(np.floor(position + 0.5), 0, levels - 1).astype(_symbol_dtype(levels))


def matched_even_scale(spec: QuantizerSpec, levels: int = 4) -> float:
    """
    Half-range of an even-level quantizer with the same step as spec, (levels - 1) / 2 * step. With 4 levels the reconstruction points are +-step/2 and +-3 step/2.
    """
    return (levels - 1) / 2 * spec.step
