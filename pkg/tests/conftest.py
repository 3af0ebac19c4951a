from __future__ import annotations

import pathlib
from typing import Callable, Dict, Mapping

import numpy as np
import pytest

from tans_weights.container import write_tensors
from tans_weights.quantizer import QuantizerSpec, dequantize

SYNTHETIC_MODEL_BINS = [5, 7, 9, 11, 13, 13, 11, 9]
SYNTHETIC_LAYER_SHAPE = (64, 4, 12, 12)


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="function")
def gaussian_layer(rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 0.25, size=(32, 16, 3, 3)).astype(np.float32)


@pytest.fixture(scope="function")
def synthetic_model() -> Dict[str, np.ndarray]:
    """
    Eight convolution layers of Gaussian weights, 9216 weights per input channel.
    """
    rng = np.random.default_rng(2024)
    return {
        f"conv{i}": rng.normal(0.0, 0.05 * (i + 1), size=SYNTHETIC_LAYER_SHAPE).astype(np.float32)
        for i in range(len(SYNTHETIC_MODEL_BINS))
    }


@pytest.fixture(scope="function")
def synthetic_model_bins(synthetic_model: Dict[str, np.ndarray]) -> Dict[str, int]:
    return dict(zip(synthetic_model, SYNTHETIC_MODEL_BINS))


@pytest.fixture(scope="function")
def low_entropy_layer() -> np.ndarray:
    """
    Weights on the levels of a 5-bin quantizer with scale 1 where the zero level has probability 0.9.
    """
    rng = np.random.default_rng(7)
    counts = [1000, 1000, 36000, 1000, 1000]
    symbols = np.repeat(np.arange(5), counts)
    rng.shuffle(symbols)
    spec = QuantizerSpec(bins=5, scale=1.0)
    return dequantize(symbols, spec).reshape(40, 10, 10, 10).astype(np.float32)


@pytest.fixture(scope="function")
def write_manifest(tmp_path: pathlib.Path) -> Callable[[Mapping[str, np.ndarray]], pathlib.Path]:
    def write(tensors: Mapping[str, np.ndarray], name: str = "model") -> pathlib.Path:
        directory = tmp_path / name
        write_tensors(tensors, directory)
        return directory / "manifest.json"

    return write
