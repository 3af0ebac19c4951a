from __future__ import annotations

from typing import Optional, Tuple


class TansWeightsError(ValueError):
    """
    Base class for all errors raised by tans_weights. Subclasses ValueError, so callers that only expect invalid input errors keep working.
    """


class SymbolOutOfRangeError(TansWeightsError):
    def __init__(self, index: int, symbol: int, alphabet_size: int):
        self.index = index
        self.symbol = symbol
        self.alphabet_size = alphabet_size
        super().__init__(
            f"Symbol {symbol} at index {index} is out of range for alphabet size {alphabet_size}"
        )


class UndefinedEntropyError(TansWeightsError):
    pass


class ZeroProbabilityError(TansWeightsError):
    pass


class InvalidBinsError(TansWeightsError):
    pass


class DegenerateScaleError(TansWeightsError):
    pass


class EmptyTensorError(TansWeightsError):
    pass


class ShapeMismatchError(TansWeightsError):
    pass


class TableTooSmallError(TansWeightsError):
    pass


class UnencodableSymbolError(TansWeightsError):
    pass


class CorruptStreamError(TansWeightsError):
    """
    Raised when an encoded stream can not be decoded: bit underrun, leftover bits or a terminal state mismatch.

    Args:
        message (str): Diagnostic message.
        stream_index (Optional[int]): Index of the stream inside its layer, if known.
    """

    def __init__(self, message: str, stream_index: Optional[int] = None):
        self.stream_index = stream_index
        if stream_index is not None:
            message = f"stream {stream_index}: {message}"
        super().__init__(message)


class MissingTableEntryError(TansWeightsError):
    pass


class InfeasibleTargetError(TansWeightsError):
    def __init__(self, target_bits: float, achievable: Tuple[float, float]):
        self.target_bits = target_bits
        self.achievable = achievable
        super().__init__(
            f"Target entropy {target_bits:.1f} bits is outside the achievable range "
            f"[{achievable[0]:.1f}, {achievable[1]:.1f}] bits"
        )


class ArchiveError(TansWeightsError):
    pass


class BadMagicError(ArchiveError):
    pass


class UnsupportedVersionError(ArchiveError):
    pass


class TruncatedArchiveError(ArchiveError):
    pass


class InvalidTableError(ArchiveError):
    pass


class ManifestError(TansWeightsError):
    pass


CORRUPT_DATA_ERRORS = (CorruptStreamError, ArchiveError)
