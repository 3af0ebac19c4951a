from __future__ import annotations

from tans_weights.errors import CorruptStreamError


class BitWriter:
    """
    Packs variable width values least-significant-bit first into a byte buffer.
    """

    def __init__(self):
        self._buffer = bytearray()
        self._accumulator = 0
        self._pending = 0
        self.bit_length = 0

    def write(self, value: int, width: int) -> None:
        if width == 0:
            return
        self._accumulator |= (value & ((1 << width) - 1)) << self._pending
        self._pending += width
        self.bit_length += width
        while self._pending >= 8:
            self._buffer.append(self._accumulator & 0xFF)
            self._accumulator >>= 8
            self._pending -= 8

    def getvalue(self) -> bytes:
        """
        Returns the packed bytes; the last byte is zero padded.
        """
        if self._pending:
            return bytes(self._buffer) + bytes([self._accumulator & 0xFF])
        return bytes(self._buffer)


class BitReader:
    """
    Reads values written by BitWriter front to back, never past bit_length.

    Args:
        payload (bytes): Packed bits.
        bit_length (int): Number of valid bits in payload.
    """

    def __init__(self, payload: bytes, bit_length: int):
        if bit_length > 8 * len(payload):
            raise CorruptStreamError(
                f"Declared {bit_length} bits but payload holds only {8 * len(payload)}"
            )
        self._payload = payload
        self._byte_position = 0
        self._accumulator = 0
        self._available = 0
        self.bit_length = bit_length
        self.consumed = 0

    def read(self, width: int) -> int:
        if width == 0:
            return 0
        if self.consumed + width > self.bit_length:
            raise CorruptStreamError(
                f"Bit underrun: need {width} bits at offset {self.consumed} of {self.bit_length}"
            )
        while self._available < width:
            self._accumulator |= self._payload[self._byte_position] << self._available
            self._byte_position += 1
            self._available += 8
        value = self._accumulator & ((1 << width) - 1)
        self._accumulator >>= width
        self._available -= width
        self.consumed += width
        return value

    @property
    def remaining(self) -> int:
        return self.bit_length - self.consumed
