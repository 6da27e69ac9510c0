"""Big-endian bit packing primitives used by the message wire format."""

from __future__ import annotations

import numpy as np


class WireFormatError(ValueError):
    """Raised when a serialized message cannot be parsed."""


class BitWriter:
    """Accumulates unsigned integer fields MSB-first into a byte buffer."""

    def __init__(self) -> None:
        self._chunks: list[np.ndarray] = []
        self._nbits = 0

    @property
    def bit_size(self) -> int:
        return self._nbits

    def write_uint(self, value: int, nbits: int) -> None:
        self.write_uint_array(np.array([value], dtype=np.uint64), nbits)

    def write_uint_array(self, values: np.ndarray, nbits: int) -> None:
        if not 1 <= nbits <= 64:
            raise ValueError(f"field width out of range: {nbits}")
        values = np.ascontiguousarray(values, dtype=np.uint64)
        if nbits < 64 and values.size and int(values.max()) >> nbits:
            raise ValueError(f"value does not fit in {nbits} bits")
        shifts = np.arange(nbits - 1, -1, -1, dtype=np.uint64)
        bits = ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
        self._chunks.append(bits.ravel())
        self._nbits += values.size * nbits

    def write_f32(self, value: float) -> None:
        self.write_uint(int(np.float32(value).view(np.uint32)), 32)

    def write_f32_array(self, values: np.ndarray) -> None:
        as_bits = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
        self.write_uint_array(as_bits, 32)

    def getvalue(self) -> tuple[bytes, int]:
        """Returns (zero-padded byte buffer, exact bit length before padding)."""
        if self._chunks:
            bits = np.concatenate(self._chunks)
        else:
            bits = np.zeros(0, dtype=np.uint8)
        return np.packbits(bits, bitorder="big").tobytes(), self._nbits


class BitReader:
    """Reads MSB-first unsigned integer fields from a byte buffer."""

    def __init__(self, data: bytes) -> None:
        self._bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")
        self._pos = 0

    @property
    def bits_read(self) -> int:
        return self._pos

    def _take(self, count: int) -> np.ndarray:
        end = self._pos + count
        if end > self._bits.size:
            raise WireFormatError("truncated payload")
        out = self._bits[self._pos:end]
        self._pos = end
        return out

    def read_uint(self, nbits: int) -> int:
        return int(self.read_uint_array(1, nbits)[0])

    def read_uint_array(self, count: int, nbits: int) -> np.ndarray:
        chunk = self._take(count * nbits).reshape(count, nbits).astype(np.uint64)
        weights = (np.uint64(1) << np.arange(nbits - 1, -1, -1, dtype=np.uint64))
        return (chunk * weights).sum(axis=1, dtype=np.uint64)

    def read_f32(self) -> float:
        return float(self.read_f32_array(1)[0])

    def read_f32_array(self, count: int) -> np.ndarray:
        return self.read_uint_array(count, 32).astype(np.uint32).view(np.float32)
