from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import logging
import math
import typing

import numpy as np
from pydantic import BaseModel, Field, model_validator

from tans_weights.distributions import histogram, shannon_entropy
from tans_weights.errors import (
    InfeasibleTargetError,
    InvalidBinsError,
    MissingTableEntryError,
)
from tans_weights.quantizer import (
    ScalePolicy,
    make_quantizer,
    quantization_mse,
    quantize,
)

logger = logging.getLogger(__name__)

BinTable = typing.Dict[int, float]


def grid_bins(k: int) -> int:
    """
    Odd bin count of the integral precision k, 2k + 1.
    """
    return 2 * k + 1


def lambda_to_bins(lam: float) -> int:
    """
    Odd bin count of a fractional precision, rounding lambda half up to the grid.
    """
    return grid_bins(math.floor(lam + 0.5))


class LayerProfile(BaseModel):
    """
    Per-layer statistics consumed by the allocation: entropy and relative quantization error per odd bin count.

    Args:
        layer_id (str): Name of the layer.
        weight_count (int): Number of weights |W|.
        entropies (Dict[int, float]): Entropy of the k-bins quantized weights, bits per weight.
        distortions (Dict[int, float]): Quantization MSE of the k-bins quantizer divided by the mean squared weight.
    """

    layer_id: str = ""
    weight_count: int
    entropies: BinTable
    distortions: BinTable = Field(default_factory=dict)


class PrecisionParams(BaseModel):
    """
    Fractional precision parameters of the layers and the cached tables they are evaluated against.

    Args:
        lambdas (List[float]): Precision lambda_W per layer; integral lambda k stands for 2k + 1 bins.
        weight_counts (List[int]): |W| per layer.
        entropy_tables (List[Dict[int, float]]): H_W(k) per layer, measured values only.
        distortion_tables (List[Dict[int, float]]): Relative quantization MSE per layer, may be empty.
        lambda_min (int): Lower precision bound. Defaults to 1 (3 bins).
        lambda_max (int): Upper precision bound. Defaults to 15 (31 bins).
    """

    lambdas: typing.List[float]
    weight_counts: typing.List[int]
    entropy_tables: typing.List[BinTable]
    distortion_tables: typing.List[BinTable] = Field(default_factory=list)
    lambda_min: int = 1
    lambda_max: int = 15

    @model_validator(mode="after")
    def check_layers(self) -> PrecisionParams:
        n = len(self.lambdas)
        assert n >= 1, "At least one layer is required"
        assert (
            len(self.weight_counts) == len(self.entropy_tables) == n
        ), "Every layer needs a weight count and an entropy table"
        assert (
            not self.distortion_tables or len(self.distortion_tables) == n
        ), "Distortion tables must be given for all layers or none"
        assert all(c > 0 for c in self.weight_counts), "Weight counts must be positive"
        assert 1 <= self.lambda_min < self.lambda_max, "Precision bounds must satisfy 1 <= min < max"
        return self

    @property
    def total_weights(self) -> int:
        return sum(self.weight_counts)


class AllocationConfig(BaseModel):
    """
    Settings of the projected gradient descent on the precision parameters.

    Args:
        target_bits (float): Total entropy goal in bits.
        beta (float): Weight of the distortion proxy. Defaults to 1.0.
        learning_rate (float): Initial step size. Defaults to 2.0.
        iterations (int): Iteration budget. Defaults to 500.
        lambda_min (int): Lower precision bound. Defaults to 1 (3 bins).
        lambda_max (int): Upper precision bound. Defaults to 15 (31 bins).
        tolerance (float): Accepted relative gap between achieved and target entropy. Defaults to 0.05.
        step_decay (float): Factor applied to the step size whenever the total entropy crosses the goal. 1.0 keeps the step fixed. Defaults to 0.5.
        share_scaled (bool): Divide the step of each layer by its share of the weights, which makes the step size independent of the number of layers. Defaults to True.
    """

    target_bits: float = Field(gt=0)
    beta: float = Field(default=1.0, ge=0)
    learning_rate: float = Field(default=2.0, gt=0)
    iterations: int = Field(default=500, ge=1)
    lambda_min: int = 1
    lambda_max: int = 15
    tolerance: float = Field(default=0.05, gt=0)
    step_decay: float = Field(default=0.5, gt=0, le=1)
    share_scaled: bool = True

    @model_validator(mode="after")
    def check_bounds(self) -> AllocationConfig:
        assert 1 <= self.lambda_min < self.lambda_max, "Precision bounds must satisfy 1 <= min < max"
        return self

    @property
    def bin_candidates(self) -> typing.List[int]:
        return [grid_bins(k) for k in range(self.lambda_min, self.lambda_max + 1)]


class AllocationResult(BaseModel):
    """
    Outcome of the allocation.

    Args:
        bins (List[int]): Odd bin count per layer.
        lambdas (List[float]): Final precision parameters.
        entropies (List[float]): H_W(bins) per layer, bits per weight.
        achieved_bits (float): Interpolated total entropy at the final lambdas.
        target_bits (float): The entropy goal.
        relative_gap (float): |achieved - target| / target.
        converged (bool): relative_gap is within the configured tolerance.
        iterations (int): Number of gradient steps taken.
    """

    bins: typing.List[int]
    lambdas: typing.List[float]
    entropies: typing.List[float]
    achieved_bits: float
    target_bits: float
    relative_gap: float
    converged: bool
    iterations: int


def entropy_table(
    weights: np.ndarray,
    bin_candidates: typing.Sequence[int],
    scale_policy: typing.Optional[ScalePolicy] = None,
) -> BinTable:
    """
    Measures the entropy of the weights quantized with each candidate bin count.

    Args:
        weights (np.ndarray): Real weight tensor.
        bin_candidates (Sequence[int]): Odd bin counts, at least 3.
        scale_policy (Optional[ScalePolicy]): Scale rule of the quantizers. Defaults to max-abs.

    Raises:
        InvalidBinsError: If a candidate is even or smaller than 3.

    Returns:
        Dict[int, float]: Bits per weight for each candidate.
    """
    table = {}
    for k in bin_candidates:
        spec = make_quantizer(weights, k, scale_policy)
        table[k] = shannon_entropy(histogram(quantize(weights, spec), k))
    return table


def distortion_table(
    weights: np.ndarray,
    bin_candidates: typing.Sequence[int],
    scale_policy: typing.Optional[ScalePolicy] = None,
) -> BinTable:
    """
    Quantization MSE per candidate bin count, divided by the mean squared weight so layers of different magnitude are comparable.
    """
    weights = np.asarray(weights, dtype=np.float64)
    power = float(np.mean(weights * weights))
    table = {}
    for k in bin_candidates:
        spec = make_quantizer(weights, k, scale_policy)
        table[k] = quantization_mse(weights, spec) / power
    return table


def profile_layer(
    weights: np.ndarray,
    bin_candidates: typing.Sequence[int],
    scale_policy: typing.Optional[ScalePolicy] = None,
    layer_id: str = "",
) -> LayerProfile:
    weights = np.asarray(weights)
    return LayerProfile(
        layer_id=layer_id,
        weight_count=int(weights.size),
        entropies=entropy_table(weights, bin_candidates, scale_policy),
        distortions=distortion_table(weights, bin_candidates, scale_policy),
    )


def _lookup(table: BinTable, k: int, layer: int) -> float:
    bins = grid_bins(k)
    try:
        return table[bins]
    except KeyError:
        raise MissingTableEntryError(f"Layer {layer} has no table entry for {bins} bins")


def _interpolate(table: BinTable, lam: float, layer: int) -> float:
    k = math.floor(lam)
    frac = lam - k
    low = _lookup(table, k, layer)
    if frac == 0:
        return low
    return (1 - frac) * low + frac * _lookup(table, k + 1, layer)


def _slope(table: BinTable, lam: float, lambda_max: int, layer: int) -> float:
    k = math.floor(lam)
    if lam == k and k >= lambda_max:
        return _lookup(table, k, layer) - _lookup(table, k - 1, layer)
    # right-hand difference at integral lambda
    return _lookup(table, k + 1, layer) - _lookup(table, k, layer)


def interpolated_entropy_bits(p: PrecisionParams) -> float:
    """
    Total entropy of the model in bits, interpolating each layer between its bracketing bin counts.
    """
    return math.fsum(
        count * _interpolate(table, lam, i)
        for i, (lam, count, table) in enumerate(
            zip(p.lambdas, p.weight_counts, p.entropy_tables)
        )
    )


def entropy_loss(p: PrecisionParams, cfg: AllocationConfig) -> float:
    """
    Entropy criterion: distance between the interpolated total entropy and the goal, relative to the goal.

    Args:
        p (PrecisionParams): Precision parameters and entropy tables.
        cfg (AllocationConfig): Configuration holding the goal in bits.

    Raises:
        MissingTableEntryError: If a bracketing bin count is missing from a table.

    Returns:
        float: |sum_W |W| H_W(lambda_W) - target| / target, dimensionless.
    """
    return abs(interpolated_entropy_bits(p) - cfg.target_bits) / cfg.target_bits


def entropy_loss_grad(p: PrecisionParams, cfg: AllocationConfig) -> typing.List[float]:
    """
    Gradient of entropy_loss per layer, sign(total - target) * |W| / target * (H_W(ceil) - H_W(floor)). The sign comes from the absolute value of the criterion. At integral lambda the right-hand difference is used, except at the upper bound.

    Args:
        p (PrecisionParams): Precision parameters and entropy tables.
        cfg (AllocationConfig): Configuration holding the goal in bits.

    Returns:
        List[float]: d loss / d lambda_W per layer.
    """
    direction = np.sign(interpolated_entropy_bits(p) - cfg.target_bits)
    return [
        float(direction) * count / cfg.target_bits * _slope(table, lam, p.lambda_max, i)
        for i, (lam, count, table) in enumerate(
            zip(p.lambdas, p.weight_counts, p.entropy_tables)
        )
    ]


def distortion_proxy(p: PrecisionParams) -> float:
    """
    Weight-count weighted mean of the interpolated relative quantization errors; stands in for the task loss.
    """
    if not p.distortion_tables:
        return 0.0
    total = p.total_weights
    return math.fsum(
        count / total * _interpolate(table, lam, i)
        for i, (lam, count, table) in enumerate(
            zip(p.lambdas, p.weight_counts, p.distortion_tables)
        )
    )


def distortion_proxy_grad(p: PrecisionParams) -> typing.List[float]:
    if not p.distortion_tables:
        return [0.0] * len(p.lambdas)
    total = p.total_weights
    return [
        count / total * _slope(table, lam, p.lambda_max, i)
        for i, (lam, count, table) in enumerate(
            zip(p.lambdas, p.weight_counts, p.distortion_tables)
        )
    ]


def size_criterion(p: PrecisionParams) -> float:
    """
    Weight-only size criterion sum_W |W| * lambda_W. Only reported, never optimized.
    """
    return math.fsum(count * lam for lam, count in zip(p.lambdas, p.weight_counts))


def achievable_range(
    profiles: typing.Sequence[LayerProfile], lambda_min: int, lambda_max: int
) -> typing.Tuple[float, float]:
    low, high = [], []
    for i, profile in enumerate(profiles):
        values = [
            _lookup(profile.entropies, k, i) for k in range(lambda_min, lambda_max + 1)
        ]
        low.append(profile.weight_count * min(values))
        high.append(profile.weight_count * max(values))
    return math.fsum(low), math.fsum(high)


def allocate_profiles(
    profiles: typing.Sequence[LayerProfile], cfg: AllocationConfig
) -> AllocationResult:
    """
    Learns one precision per layer by projected gradient descent on entropy_loss + beta * distortion_proxy. All layers start at the upper bound (31 bins by default) and are projected back into the bounds after every step.

    The entropy gradient of a layer is proportional to its share of the weights, so with share_scaled the step of each layer is divided by that share. The step size shrinks by step_decay every time the total entropy crosses the goal.

    Args:
        profiles (Sequence[LayerProfile]): Entropy and distortion tables of the layers.
        cfg (AllocationConfig): Goal and optimizer settings.

    Raises:
        InfeasibleTargetError: If the goal is outside the range reachable within the bounds.

    Returns:
        AllocationResult: Odd bin count per layer and convergence diagnostics.
    """
    if not profiles:
        raise ValueError("At least one layer is required for allocation")
    achievable = achievable_range(profiles, cfg.lambda_min, cfg.lambda_max)
    if not achievable[0] <= cfg.target_bits <= achievable[1]:
        raise InfeasibleTargetError(cfg.target_bits, achievable)

    use_distortion = cfg.beta > 0 and all(profile.distortions for profile in profiles)
    p = PrecisionParams(
        lambdas=[float(cfg.lambda_max)] * len(profiles),
        weight_counts=[profile.weight_count for profile in profiles],
        entropy_tables=[profile.entropies for profile in profiles],
        distortion_tables=(
            [profile.distortions for profile in profiles] if use_distortion else []
        ),
        lambda_min=cfg.lambda_min,
        lambda_max=cfg.lambda_max,
    )

    if cfg.share_scaled:
        scales = [p.total_weights / count for count in p.weight_counts]
    else:
        scales = [1.0] * len(profiles)
    step = cfg.learning_rate
    previous_side = 0.0
    for iteration in range(cfg.iterations):
        side = float(np.sign(interpolated_entropy_bits(p) - cfg.target_bits))
        if side * previous_side < 0:
            step *= cfg.step_decay
        if side:
            previous_side = side
        gradient = entropy_loss_grad(p, cfg)
        if use_distortion:
            gradient = [
                g + cfg.beta * d for g, d in zip(gradient, distortion_proxy_grad(p))
            ]
        lambdas = [
            min(max(lam - step * scale * g, cfg.lambda_min), cfg.lambda_max)
            for lam, g, scale in zip(p.lambdas, gradient, scales)
        ]
        p = p.model_copy(update={"lambdas": lambdas})
        if iteration % 100 == 0:
            logger.debug(
                "Allocation step %d: entropy loss %.5f, step size %.4g",
                iteration,
                entropy_loss(p, cfg),
                step,
            )

    achieved = interpolated_entropy_bits(p)
    relative_gap = abs(achieved - cfg.target_bits) / cfg.target_bits
    converged = relative_gap <= cfg.tolerance
    if not converged:
        logger.warning(
            "Allocation did not converge: achieved %.1f bits for a goal of %.1f bits (gap %.3f)",
            achieved,
            cfg.target_bits,
            relative_gap,
        )
    bins = [lambda_to_bins(lam) for lam in p.lambdas]
    return AllocationResult(
        bins=bins,
        lambdas=p.lambdas,
        entropies=[profile.entropies[b] for profile, b in zip(profiles, bins)],
        achieved_bits=achieved,
        target_bits=cfg.target_bits,
        relative_gap=relative_gap,
        converged=converged,
        iterations=cfg.iterations,
    )


def allocate(
    layers: typing.Sequence[typing.Tuple[np.ndarray, int]],
    cfg: AllocationConfig,
    scale_policy: typing.Optional[ScalePolicy] = None,
    max_workers: typing.Optional[int] = None,
) -> AllocationResult:
    """
    Profiles each layer over the odd bin counts allowed by the bounds and runs allocate_profiles.

    Args:
        layers (Sequence[Tuple[np.ndarray, int]]): Weights and weight count |W| per layer.
        cfg (AllocationConfig): Goal and optimizer settings.
        scale_policy (Optional[ScalePolicy]): Scale rule of the quantizers. Defaults to max-abs.
        max_workers (Optional[int]): Profile layers on a thread pool of this size.

    Returns:
        AllocationResult: Odd bin count per layer.
    """
    candidates = cfg.bin_candidates
    if any(k < 3 or k % 2 == 0 for k in candidates):
        raise InvalidBinsError(f"Bin candidates must be odd and >= 3, got {candidates}")

    def profile(layer: typing.Tuple[np.ndarray, int]) -> LayerProfile:
        weights, weight_count = layer
        layer_profile = profile_layer(weights, candidates, scale_policy)
        return layer_profile.model_copy(update={"weight_count": int(weight_count)})

    if max_workers:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            profiles = list(pool.map(profile, layers))
    else:
        profiles = [profile(layer) for layer in layers]
    return allocate_profiles(profiles, cfg)
