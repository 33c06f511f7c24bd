import struct

import numpy as np
import pytest

from fp4emu import (
    BadMagicError,
    FormatError,
    QuantConfig,
    TruncatedFileError,
    UnsupportedDtypeError,
    dequantize_tensor,
    quantize_tensor,
    quantize_tensor_adaptive,
    read_quantized,
    read_tensor,
    write_quantized,
    write_tensor,
)

BLOCK_A = np.array([10.0, 20.0, 30.0, 40.0])


class TestTensorFile:
    def test_golden_bytes_f32(self, tmp_path):
        vals = [1.5, -2.0, 0.0, 448.0, 0.25, -0.5]
        p = tmp_path / "t.fqt"
        write_tensor(p, np.array(vals).reshape(2, 3))
        expected = (
            b"FQT1"
            + bytes([0, 2])
            + struct.pack("<2Q", 2, 3)
            + struct.pack("<6f", *vals)
        )
        assert p.read_bytes() == expected

    def test_f32_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(90))
        for i in range(20):
            shape = tuple(rng.integers(1, 9, size=rng.integers(1, 4)))
            X = rng.standard_normal(shape)
            p = tmp_path / f"t{i}.fqt"
            write_tensor(p, X)
            Y = read_tensor(p)
            assert Y.dtype == np.float32
            assert Y.shape == shape
            assert np.array_equal(Y, X.astype(np.float32))

    def test_bf16_narrowing_and_stability(self, tmp_path):
        p = tmp_path / "t.fqt"
        write_tensor(p, np.array([1.0 + 2.0**-8, 1.5]), dtype="bf16")
        Y = read_tensor(p)
        assert Y[0] == 1.0  # tie rounds to the even mantissa
        assert Y[1] == 1.5
        # a second pass through bf16 is a fixed point
        write_tensor(p, Y, dtype="bf16")
        assert np.array_equal(read_tensor(p), Y)

    def test_bf16_round_trip_random(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(91))
        for i in range(20):
            X = rng.standard_normal((3, 7))
            p = tmp_path / f"b{i}.fqt"
            write_tensor(p, X, dtype="bf16")
            Y = read_tensor(p)
            write_tensor(p, Y, dtype="bf16")
            assert np.array_equal(read_tensor(p), Y)
            assert np.max(np.abs(Y - X)) <= 2.0**-8 * np.max(np.abs(X)) * 2

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "t.fqt"
        p.write_bytes(b"XXXX" + bytes(64))
        with pytest.raises(BadMagicError):
            read_tensor(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.fqt"
        write_tensor(p, np.ones((3, 4)))
        p.write_bytes(p.read_bytes()[:-4])  # drop the last float
        with pytest.raises(TruncatedFileError):
            read_tensor(p)

    def test_truncated_dims(self, tmp_path):
        p = tmp_path / "t.fqt"
        p.write_bytes(b"FQT1" + bytes([0, 2]) + struct.pack("<Q", 2))
        with pytest.raises(TruncatedFileError):
            read_tensor(p)

    def test_unknown_dtype_byte(self, tmp_path):
        p = tmp_path / "t.fqt"
        write_tensor(p, np.ones(4))
        raw = bytearray(p.read_bytes())
        raw[4] = 2
        p.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedDtypeError):
            read_tensor(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "t.fqt"
        write_tensor(p, np.ones(4))
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            read_tensor(p)


class TestQuantizedFile:
    def worked_container(self):
        X = np.concatenate([BLOCK_A, np.zeros(12)]).reshape(1, 16)
        return quantize_tensor_adaptive(
            X, QuantConfig(scale_mode="adaptive"), alpha=1.0
        )

    def test_golden_bytes(self, tmp_path):
        p = tmp_path / "q.nvf"
        write_quantized(p, self.worked_container())
        expected = (
            b"NVF4"
            + bytes([0, 2])
            + struct.pack("<2Q", 1, 16)
            + struct.pack("<f", 1.0)
            + bytes([0x52])  # e4m3 for the exact target-4 scale 10.0
            + bytes([0x42, 0x65, 0, 0, 0, 0, 0, 0])
        )
        assert p.read_bytes() == expected

    def test_golden_read_back(self, tmp_path):
        p = tmp_path / "q.nvf"
        q = self.worked_container()
        write_quantized(p, q)
        r = read_quantized(p)
        assert r == q
        D = dequantize_tensor(r)
        assert np.array_equal(D[0, :4], BLOCK_A)
        assert np.all(D[0, 4:] == 0.0)

    def test_random_containers_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(92))
        for i in range(100):
            rank = int(rng.integers(1, 4))
            shape = tuple(int(d) for d in rng.integers(1, 40, size=rank))
            X = rng.standard_normal(shape) * float(rng.uniform(0.1, 100.0))
            kind = i % 4
            if kind == 0:
                q = quantize_tensor(X, QuantConfig())
            elif kind == 1:
                q = quantize_tensor(X, QuantConfig(scale_mode="fixed4"))
            elif kind == 2:
                q = quantize_tensor_adaptive(
                    X, QuantConfig(scale_mode="adaptive")
                )
            else:
                q = quantize_tensor(X, QuantConfig(fmt="mxfp4"), alpha=1.0)
            p1 = tmp_path / f"q{i}a.nvf"
            p2 = tmp_path / f"q{i}b.nvf"
            write_quantized(p1, q)
            r = read_quantized(p1)
            assert r == q
            write_quantized(p2, r)
            assert p1.read_bytes() == p2.read_bytes()

    def test_mxfp4_alpha_tamper(self, tmp_path):
        p = tmp_path / "q.nvf"
        X = np.random.Generator(np.random.Philox(93)).standard_normal((2, 32))
        write_quantized(p, quantize_tensor(X, QuantConfig(fmt="mxfp4")))
        raw = bytearray(p.read_bytes())
        alpha_off = 4 + 1 + 1 + 8 * 2
        raw[alpha_off : alpha_off + 4] = struct.pack("<f", 2.0)
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_quantized(p)

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan, np.inf])
    def test_nonpositive_alpha_rejected(self, tmp_path, bad):
        p = tmp_path / "q.nvf"
        write_quantized(p, self.worked_container())
        raw = bytearray(p.read_bytes())
        alpha_off = 4 + 1 + 1 + 8 * 2
        raw[alpha_off : alpha_off + 4] = struct.pack("<f", bad)
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_quantized(p)

    def test_rank_zero_rejected(self, tmp_path):
        p = tmp_path / "q.nvf"
        p.write_bytes(b"NVF4" + bytes([0, 0]) + struct.pack("<f", 1.0))
        with pytest.raises(FormatError):
            read_quantized(p)

    def test_unknown_format_byte(self, tmp_path):
        p = tmp_path / "q.nvf"
        write_quantized(p, self.worked_container())
        raw = bytearray(p.read_bytes())
        raw[4] = 3
        p.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedDtypeError):
            read_quantized(p)

    def test_odd_tail_nibble_must_be_zero(self, tmp_path):
        p = tmp_path / "q.nvf"
        X = np.array([1.0, 2.0, 3.0, 4.0, 5.0])  # odd element count
        write_quantized(p, quantize_tensor(X, QuantConfig()))
        raw = bytearray(p.read_bytes())
        raw[-1] |= 0xF0
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_quantized(p)

    def test_truncated_scales(self, tmp_path):
        p = tmp_path / "q.nvf"
        X = np.ones((4, 32))
        write_quantized(p, quantize_tensor(X, QuantConfig()))
        full = p.read_bytes()
        head_len = 4 + 2 + 16 + 4
        p.write_bytes(full[: head_len + 3])  # 3 of 8 scale bytes
        with pytest.raises(TruncatedFileError):
            read_quantized(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "q.nvf"
        write_quantized(p, self.worked_container())
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            read_quantized(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "q.nvf"
        p.write_bytes(b"FQT1" + bytes(32))
        with pytest.raises(BadMagicError):
            read_quantized(p)
