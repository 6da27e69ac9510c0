"""Lossy compression codecs with a bit-exact wire encoding.

Four codecs are provided: identity (dense float32), stochastic uniform
quantization with a shared norm (QSGD-style), top-k magnitude
sparsification, and uniform random-k sparsification with an unbiasing
rescale.  Every codec satisfies the contraction contract

    E ||Q(x) - x||^2 <= (1 - delta) ||x||^2

for its compression parameter ``delta``, and serializes to a big-endian
bit-packed buffer whose exact length is tracked for communication
accounting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitio import BitReader, BitWriter, WireFormatError

# Wire encoding tags (4-bit header field).
TAG_DENSE32 = 0
TAG_QSGD = 1
TAG_SPARSE = 2

HEADER_BITS = 64  # 4-bit tag + 28-bit dim + 32-bit param
MAX_DIM = (1 << 28) - 1

# Floor for the QSGD compression parameter when the closed form is <= 0.
DELTA_FLOOR = 1e-6


class QuantizerError(ValueError):
    """Invalid quantizer configuration or input."""


@dataclass(frozen=True)
class QuantizerSpec:
    """Codec selector: ``kind`` in {identity, qsgd, topk, randk}.

    ``param`` is the magnitude bit width for qsgd (one sign bit is sent
    on top of it) and the kept-coordinate budget k for topk/randk.
    """

    kind: str
    param: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "qsgd", "topk", "randk"):
            raise QuantizerError(f"unknown quantizer kind: {self.kind!r}")
        if self.kind == "qsgd":
            if not 1 <= self.param <= 32:
                raise QuantizerError(f"qsgd bit width must be in [1, 32], got {self.param}")
        elif self.kind in ("topk", "randk"):
            if self.param < 1:
                raise QuantizerError(f"{self.kind} requires k >= 1, got {self.param}")

    @classmethod
    def identity(cls) -> "QuantizerSpec":
        return cls("identity")

    @classmethod
    def qsgd(cls, n_bits: int) -> "QuantizerSpec":
        return cls("qsgd", n_bits)

    @classmethod
    def topk(cls, k: int) -> "QuantizerSpec":
        return cls("topk", k)

    @classmethod
    def randk(cls, k: int) -> "QuantizerSpec":
        return cls("randk", k)

    @classmethod
    def parse(cls, text: str) -> "QuantizerSpec":
        """Parses configuration strings like "identity", "qsgd:4", "topk:128"."""
        parts = text.strip().lower().split(":")
        kind = parts[0]
        if kind == "identity":
            if len(parts) != 1:
                raise QuantizerError("identity takes no parameter")
            return cls.identity()
        if len(parts) != 2:
            raise QuantizerError(f"expected '{kind}:<int>', got {text!r}")
        try:
            param = int(parts[1])
        except ValueError as exc:
            raise QuantizerError(f"bad parameter in {text!r}") from exc
        return cls(kind, param)

    def __str__(self) -> str:
        if self.kind == "identity":
            return "identity"
        return f"{self.kind}:{self.param}"

    @property
    def unbiased(self) -> bool:
        # topk keeps the largest coordinates and is the only biased codec.
        return self.kind != "topk"

    @property
    def levels(self) -> int:
        """Number of unsigned magnitude levels s for the qsgd codec."""
        if self.kind != "qsgd":
            raise QuantizerError("levels is only defined for qsgd")
        return (1 << self.param) - 1


@dataclass(frozen=True)
class QuantizedMessage:
    """A serialized compressed vector.

    ``data`` is the full buffer (header included, final byte zero-padded);
    ``bit_size`` is the exact serialized length in bits before padding.
    """

    data: bytes
    tag: int
    dim: int
    param: int
    bit_size: int

    @property
    def byte_size(self) -> int:
        return (self.bit_size + 7) // 8

    def to_bytes(self) -> bytes:
        return self.data


def _payload_bits(tag: int, dim: int, param: int) -> int:
    if tag == TAG_DENSE32:
        return 32 * dim
    if tag == TAG_QSGD:
        return 32 + dim * (1 + param)
    if tag == TAG_SPARSE:
        return 32 + param * 64
    raise WireFormatError(f"unknown encoding tag {tag}")


def decode(data: bytes) -> QuantizedMessage:
    """Parses a serialized buffer, validating its length against the header."""
    reader = BitReader(data)
    tag = reader.read_uint(4)
    dim = reader.read_uint(28)
    param = reader.read_uint(32)
    bit_size = HEADER_BITS + _payload_bits(tag, dim, param)
    if tag == TAG_SPARSE and param > dim:
        raise WireFormatError(f"sparse budget {param} exceeds dim {dim}")
    if len(data) != (bit_size + 7) // 8:
        raise WireFormatError(
            f"buffer is {len(data)} bytes, header implies {(bit_size + 7) // 8}"
        )
    return QuantizedMessage(data=data, tag=tag, dim=dim, param=param, bit_size=bit_size)


def encoded_bits(msg: QuantizedMessage) -> int:
    """Exact serialized bit length of a message (equals its bit_size field)."""
    return msg.bit_size


def _check_input(spec: QuantizerSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0 or x.size > MAX_DIM:
        raise QuantizerError(f"dimension {x.size} out of range")
    if not np.all(np.isfinite(x)):
        raise QuantizerError("input vector has non-finite entries")
    if spec.kind in ("topk", "randk") and spec.param > x.size:
        raise QuantizerError(f"{spec.kind} budget {spec.param} exceeds dim {x.size}")
    return x


def _finish(writer: BitWriter, tag: int, dim: int, param: int) -> QuantizedMessage:
    data, bit_size = writer.getvalue()
    return QuantizedMessage(data=data, tag=tag, dim=dim, param=param, bit_size=bit_size)


def _header(tag: int, dim: int, param: int) -> BitWriter:
    writer = BitWriter()
    writer.write_uint(tag, 4)
    writer.write_uint(dim, 28)
    writer.write_uint(param, 32)
    return writer


def quantize(
    spec: QuantizerSpec, x: np.ndarray, rng: np.random.Generator | None = None
) -> QuantizedMessage:
    """Compresses ``x`` into a serialized message.

    The rng is consumed a fixed number of times per call for a given
    (spec, dim), so parallel streams stay aligned across branches.
    """
    x = _check_input(spec, x)
    d = x.size

    if spec.kind == "identity":
        writer = _header(TAG_DENSE32, d, 0)
        writer.write_f32_array(x.astype(np.float32))
        return _finish(writer, TAG_DENSE32, d, 0)

    if spec.kind == "qsgd":
        if rng is None:
            raise QuantizerError("qsgd requires an rng")
        s = spec.levels
        norm = np.float32(np.linalg.norm(x))
        draws = rng.random(d)  # always drawn, even for the zero vector
        if norm > 0:
            target = np.abs(x) * (s / float(norm))
            low = np.floor(target)
            xi = (low + (draws < target - low)).astype(np.uint64)
            np.clip(xi, 0, s, out=xi)
        else:
            xi = np.zeros(d, dtype=np.uint64)
        signs = (x < 0).astype(np.uint64)
        writer = _header(TAG_QSGD, d, spec.param)
        writer.write_f32(float(norm))
        writer.write_uint_array((signs << np.uint64(spec.param)) | xi, 1 + spec.param)
        return _finish(writer, TAG_QSGD, d, spec.param)

    if spec.kind == "topk":
        k = spec.param
        # Stable sort on -|x| breaks magnitude ties by lowest index.
        order = np.argsort(-np.abs(x), kind="stable")[:k]
        idx = np.sort(order)
        return _encode_sparse(d, idx, x[idx], rescale=1.0)

    # randk
    if rng is None:
        raise QuantizerError("randk requires an rng")
    k = spec.param
    idx = np.sort(rng.permutation(d)[:k])
    return _encode_sparse(d, idx, x[idx], rescale=d / k)


def _encode_sparse(
    d: int, idx: np.ndarray, values: np.ndarray, rescale: float
) -> QuantizedMessage:
    k = idx.size
    writer = _header(TAG_SPARSE, d, k)
    writer.write_f32(rescale)
    # k * (32-bit index + 32-bit float) pairs, in index order.
    pairs = np.empty(2 * k, dtype=np.uint64)
    pairs[0::2] = idx.astype(np.uint64)
    pairs[1::2] = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
    writer.write_uint_array(pairs, 32)
    return _finish(writer, TAG_SPARSE, d, k)


def dequantize(msg: QuantizedMessage) -> np.ndarray:
    """Reconstructs the dense float32 vector a message encodes."""
    reader = BitReader(msg.data)
    reader.read_uint(HEADER_BITS)

    if msg.tag == TAG_DENSE32:
        return reader.read_f32_array(msg.dim).copy()

    if msg.tag == TAG_QSGD:
        n = msg.param
        s = (1 << n) - 1
        norm = reader.read_f32()
        packed = reader.read_uint_array(msg.dim, 1 + n)
        xi = (packed & np.uint64(s)).astype(np.float64)
        signs = 1.0 - 2.0 * (packed >> np.uint64(n)).astype(np.float64)
        return (signs * xi * (norm / s)).astype(np.float32)

    if msg.tag == TAG_SPARSE:
        k = msg.param
        rescale = reader.read_f32()
        pairs = reader.read_uint_array(2 * k, 32)
        idx = pairs[0::2].astype(np.int64)
        if k and int(idx.max()) >= msg.dim:
            raise WireFormatError("sparse index out of range")
        values = pairs[1::2].astype(np.uint32).view(np.float32)
        out = np.zeros(msg.dim, dtype=np.float32)
        out[idx] = (values.astype(np.float64) * rescale).astype(np.float32)
        return out

    raise WireFormatError(f"unknown encoding tag {msg.tag}")


def qsgd_delta(s: int, d: int, floor: float = DELTA_FLOOR) -> float:
    """Contraction parameter of s-level stochastic uniform quantization
    at dimension d, clamped below by ``floor``."""
    if s < 1 or d < 1:
        raise QuantizerError("need s >= 1 and d >= 1")
    delta = 1.0 - min(2.0 * d / s**2, np.sqrt(2.0 * d) / s)
    return max(delta, floor)


def compression_parameter(spec: QuantizerSpec, d: int, floor: float = DELTA_FLOOR) -> float:
    """Contraction parameter delta in (0, 1] for a codec at dimension d.

    For the stochastic uniform codec the closed form can go non-positive
    at low bit widths and large d; it is clamped to ``floor`` so that
    downstream condition checkers never divide by zero.
    """
    if d < 1:
        raise QuantizerError(f"dimension must be >= 1, got {d}")
    if spec.kind == "identity":
        return 1.0
    if spec.kind in ("topk", "randk"):
        if spec.param > d:
            raise QuantizerError(f"{spec.kind} budget {spec.param} exceeds dim {d}")
        return spec.param / d
    return qsgd_delta(spec.levels, d, floor)
