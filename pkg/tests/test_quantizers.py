import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import contract_stats, unbiasedness_violations
from qafel import quantizers as q
from qafel.bitio import WireFormatError


def oracle_decode(data: bytes) -> np.ndarray:
    """Independent pure-Python reconstruction from the raw message bytes,
    reading fields MSB-first with plain integer arithmetic."""
    value = int.from_bytes(data, "big")
    total = len(data) * 8
    pos = 0

    def field(nbits):
        nonlocal pos
        out = (value >> (total - pos - nbits)) & ((1 << nbits) - 1)
        pos += nbits
        return out

    def f32(bits):
        return struct.unpack(">f", bits.to_bytes(4, "big"))[0]

    tag = field(4)
    dim = field(28)
    param = field(32)
    if tag == q.TAG_DENSE32:
        return np.array([f32(field(32)) for _ in range(dim)], dtype=np.float32)
    if tag == q.TAG_QSGD:
        n = param
        s = (1 << n) - 1
        norm = f32(field(32))
        out = []
        for _ in range(dim):
            sign = field(1)
            xi = field(n)
            out.append((-1.0 if sign else 1.0) * xi * norm / s)
        return np.array(out, dtype=np.float32)
    if tag == q.TAG_SPARSE:
        k = param
        rescale = f32(field(32))
        out = np.zeros(dim, dtype=np.float32)
        for _ in range(k):
            idx = field(32)
            val = f32(field(32))
            out[idx] = np.float32(np.float64(val) * rescale)
        return out
    raise AssertionError(f"unknown tag {tag}")


class TestWorkedExamples:
    def test_identity_round_trip(self):
        msg = q.quantize(q.QuantizerSpec.identity(), np.array([1.5, -2.0]))
        assert msg.bit_size == 64 + 2 * 32
        assert np.array_equal(q.dequantize(msg), np.array([1.5, -2.0], dtype=np.float32))

    def test_qsgd_integer_level_targets_are_deterministic(self):
        # |x| * s / ||x|| lands on integers for x=(3,4), s=15, so the
        # stochastic rounding has zero variance and decoding is lossless.
        spec = q.QuantizerSpec.qsgd(4)
        x = np.array([3.0, 4.0])
        reference = None
        for seed in range(50):
            msg = q.quantize(spec, x, np.random.default_rng(seed))
            assert np.array_equal(q.dequantize(msg), x.astype(np.float32))
            if reference is None:
                reference = msg.data
            assert msg.data == reference

    def test_qsgd_zero_vector(self):
        msg = q.quantize(q.QuantizerSpec.qsgd(4), np.zeros(8), np.random.default_rng(0))
        assert np.array_equal(q.dequantize(msg), np.zeros(8, dtype=np.float32))

    def test_qsgd_signs(self):
        spec = q.QuantizerSpec.qsgd(4)
        x = np.array([-3.0, 4.0])
        msg = q.quantize(spec, x, np.random.default_rng(0))
        assert np.array_equal(q.dequantize(msg), x.astype(np.float32))

    def test_topk_example(self):
        msg = q.quantize(q.QuantizerSpec.topk(2), np.array([3.0, -1.0, 2.0]))
        assert np.array_equal(q.dequantize(msg), np.array([3.0, 0.0, 2.0], dtype=np.float32))
        assert msg.bit_size == 64 + 32 + 2 * 64

    def test_topk_tie_break_lowest_index(self):
        msg = q.quantize(q.QuantizerSpec.topk(2), np.array([1.0, -1.0, 1.0]))
        assert np.array_equal(q.dequantize(msg), np.array([1.0, -1.0, 0.0], dtype=np.float32))

    def test_topk_idempotent_on_sparse_input(self, rng):
        x = np.zeros(32)
        idx = rng.choice(32, size=5, replace=False)
        x[idx] = rng.standard_normal(5)
        msg = q.quantize(q.QuantizerSpec.topk(5), x)
        assert np.array_equal(q.dequantize(msg), x.astype(np.float32))

    def test_randk_applies_unbiasing_rescale(self, rng):
        x = rng.standard_normal(10)
        msg = q.quantize(q.QuantizerSpec.randk(2), x, rng)
        out = q.dequantize(msg)
        kept = np.nonzero(out)[0]
        assert kept.size == 2
        expected = (x[kept].astype(np.float32).astype(np.float64) * 5.0).astype(np.float32)
        assert np.array_equal(out[kept], expected)


class TestEncodedSizes:
    def test_dense_29282(self):
        msg = q.quantize(q.QuantizerSpec.identity(), np.ones(29282))
        assert q.encoded_bits(msg) == 64 + 29282 * 32 == 937088
        assert msg.byte_size == 117136

    def test_qsgd_n4_d8(self):
        msg = q.quantize(q.QuantizerSpec.qsgd(4), np.ones(8), np.random.default_rng(0))
        assert q.encoded_bits(msg) == 64 + 32 + 8 * 5 == 136
        assert msg.byte_size == 17
        assert len(msg.data) == 17  # 136 bits padded to 17 bytes

    def test_sparse_k2_d10(self):
        msg = q.quantize(q.QuantizerSpec.topk(2), np.arange(10, dtype=float))
        assert q.encoded_bits(msg) == 64 + 32 + 2 * 64 == 224


class TestCompressionParameter:
    def test_identity(self):
        assert q.compression_parameter(q.QuantizerSpec.identity(), 123) == 1.0

    def test_topk_and_randk(self):
        assert q.compression_parameter(q.QuantizerSpec.topk(2), 10) == 0.2
        assert q.compression_parameter(q.QuantizerSpec.randk(3), 12) == 0.25

    def test_qsgd_closed_form(self):
        assert q.qsgd_delta(4, 2) == pytest.approx(1.0 - min(4 / 16, 2 / 4)) == 0.75

    def test_qsgd_floor(self):
        assert q.qsgd_delta(1, 1000) == q.DELTA_FLOOR

    def test_invalid_dim(self):
        with pytest.raises(q.QuantizerError):
            q.compression_parameter(q.QuantizerSpec.identity(), 0)
        with pytest.raises(q.QuantizerError):
            q.compression_parameter(q.QuantizerSpec.topk(5), 4)


class TestSpecParsing:
    def test_parse_and_str(self):
        for text, kind, param in [
            ("identity", "identity", 0),
            ("qsgd:4", "qsgd", 4),
            ("topk:128", "topk", 128),
            ("randk:7", "randk", 7),
        ]:
            spec = q.QuantizerSpec.parse(text)
            assert (spec.kind, spec.param) == (kind, param)
            assert q.QuantizerSpec.parse(str(spec)) == spec

    def test_parse_errors(self):
        for text in ("identity:3", "qsgd", "qsgd:x", "huffman:2", "topk:0", "qsgd:33"):
            with pytest.raises(q.QuantizerError):
                q.QuantizerSpec.parse(text)

    def test_unbiased_flag(self):
        assert q.QuantizerSpec.identity().unbiased
        assert q.QuantizerSpec.qsgd(4).unbiased
        assert q.QuantizerSpec.randk(2).unbiased
        assert not q.QuantizerSpec.topk(2).unbiased

    def test_levels(self):
        assert q.QuantizerSpec.qsgd(4).levels == 15
        with pytest.raises(q.QuantizerError):
            _ = q.QuantizerSpec.topk(2).levels


class TestErrors:
    def test_k_exceeds_dim(self):
        with pytest.raises(q.QuantizerError):
            q.quantize(q.QuantizerSpec.topk(5), np.ones(3))

    def test_non_finite_input(self):
        with pytest.raises(q.QuantizerError):
            q.quantize(q.QuantizerSpec.identity(), np.array([1.0, np.nan]))

    def test_qsgd_requires_rng(self):
        with pytest.raises(q.QuantizerError):
            q.quantize(q.QuantizerSpec.qsgd(4), np.ones(4))

    def test_empty_vector(self):
        with pytest.raises(q.QuantizerError):
            q.quantize(q.QuantizerSpec.identity(), np.zeros(0))

    def test_decode_truncated_buffer(self):
        msg = q.quantize(q.QuantizerSpec.identity(), np.ones(4))
        with pytest.raises(WireFormatError):
            q.decode(msg.data[:-1])

    def test_decode_oversized_buffer(self):
        msg = q.quantize(q.QuantizerSpec.identity(), np.ones(4))
        with pytest.raises(WireFormatError):
            q.decode(msg.data + b"\x00")


class TestRoundTrip:
    @pytest.mark.parametrize(
        "spec",
        [
            q.QuantizerSpec.identity(),
            q.QuantizerSpec.qsgd(2),
            q.QuantizerSpec.qsgd(4),
            q.QuantizerSpec.topk(3),
            q.QuantizerSpec.randk(3),
        ],
        ids=str,
    )
    def test_decode_reproduces_message(self, spec, rng):
        x = rng.standard_normal(12)
        msg = q.quantize(spec, x, rng)
        parsed = q.decode(msg.to_bytes())
        assert parsed == msg
        assert np.array_equal(q.dequantize(parsed), q.dequantize(msg))

    @pytest.mark.parametrize(
        "spec",
        [
            q.QuantizerSpec.identity(),
            q.QuantizerSpec.qsgd(3),
            q.QuantizerSpec.qsgd(8),
            q.QuantizerSpec.topk(4),
            q.QuantizerSpec.randk(4),
        ],
        ids=str,
    )
    def test_independent_bit_decoder_agrees(self, spec, rng):
        for _ in range(5):
            x = rng.standard_normal(9)
            msg = q.quantize(spec, x, rng)
            assert np.array_equal(oracle_decode(msg.data), q.dequantize(msg))

    def test_determinism(self):
        x = np.linspace(-2, 3, 20)
        for spec in (q.QuantizerSpec.qsgd(4), q.QuantizerSpec.randk(5)):
            a = q.quantize(spec, x, np.random.default_rng(7))
            b = q.quantize(spec, x, np.random.default_rng(7))
            assert a.data == b.data

    @settings(max_examples=40, deadline=None)
    @given(
        values=st.lists(
            st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=32),
            min_size=1,
            max_size=40,
        ),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_round_trip_property(self, values, seed):
        x = np.array(values, dtype=np.float32)
        gen = np.random.default_rng(seed)
        for spec in (
            q.QuantizerSpec.identity(),
            q.QuantizerSpec.qsgd(5),
            q.QuantizerSpec.topk(1),
            q.QuantizerSpec.randk(1),
        ):
            msg = q.quantize(spec, x, gen)
            parsed = q.decode(msg.data)
            assert parsed.bit_size == msg.bit_size
            assert np.array_equal(q.dequantize(parsed), q.dequantize(msg))


class TestStatisticalSmoke:
    """Light Monte Carlo versions; the full-budget runs live in the
    acceptance suite."""

    def test_contract_smoke(self):
        d = 16
        cases = [
            (q.QuantizerSpec.identity(), 1.0, False),
            (q.QuantizerSpec.qsgd(4), q.qsgd_delta(15, d), False),
            (q.QuantizerSpec.topk(4), 4 / d, False),
            (q.QuantizerSpec.randk(4), 4 / d, True),
        ]
        for spec, delta, undo in cases:
            mean, se = contract_stats(spec, d, 300, seed=11, undo_rescale=undo)
            assert mean <= (1.0 - delta) + 3.0 * se + 1e-12, spec

    def test_unbiasedness_smoke(self, rng):
        x = rng.standard_normal(8).astype(np.float32)
        for spec in (q.QuantizerSpec.qsgd(3), q.QuantizerSpec.randk(3)):
            assert unbiasedness_violations(spec, x, 2000, seed=5) == 0
