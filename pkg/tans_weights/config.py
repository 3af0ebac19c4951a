from __future__ import annotations

import pathlib
import typing

from pydantic import BaseModel, Field, ValidationError, field_validator

from tans_weights.errors import TansWeightsError
from tans_weights.quantizer import ScalePolicy
from tans_weights.tans_core import MAX_TABLE_SIZE, MIN_TABLE_SIZE, is_valid_table_size


class CodecSettings(BaseModel):
    """
    Encoder settings shared by the compress, stats and allocate commands.

    Args:
        table_size (int): Number of tANS states l. Defaults to 256.
        split_axis (int): Axis along which layers are split into streams. Defaults to 1, the input channels.
        parallel (bool): Split layers into one stream per channel. Defaults to True.
        scale_policy (ScalePolicy): Rule for the quantizer half-range. Defaults to max-abs.
        uncompressed_layers (List[str]): Layers stored as raw 8-bit symbols.
    """

    table_size: int = 256
    split_axis: int = Field(default=1, ge=0)
    parallel: bool = True
    scale_policy: ScalePolicy = Field(default_factory=ScalePolicy)
    uncompressed_layers: typing.List[str] = Field(default_factory=list)

    @field_validator("table_size")
    @classmethod
    def check_table_size(cls, table_size: int) -> int:
        assert is_valid_table_size(
            table_size
        ), f"table_size must be a power of two in [{MIN_TABLE_SIZE}, {MAX_TABLE_SIZE}], got {table_size}"
        return table_size


def load_settings(path: typing.Union[str, pathlib.Path]) -> CodecSettings:
    """
    Reads CodecSettings from a JSON file.

    Raises:
        TansWeightsError: If the file can not be read or holds invalid settings.
    """
    path = pathlib.Path(path)
    try:
        return CodecSettings.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise TansWeightsError(f"Can not read config {path}: {e}")
    except ValidationError as e:
        raise TansWeightsError(f"Invalid config {path}: {e}")
