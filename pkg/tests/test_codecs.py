"""Codec tests against independently constructed oracles.

The oracle tables here are built from the format definitions directly
(bit-field enumeration, brute-force nearest search) and never reuse the
encode/decode internals under test.
"""

from fractions import Fraction

import numpy as np
import pytest

from fp4emu import (
    InvalidInputError,
    decode_fp4,
    decode_fp8_e4m3,
    decode_fp8_e8m0,
    encode_fp4_rne,
    encode_fp4_stochastic,
    encode_fp8_e4m3,
    encode_fp8_e8m0,
)

# Hand-written FP4 E2M1 table: code -> value, from the bit layout
# (sign, exponent bias 1, one mantissa bit; exp 0 is subnormal 0.5 * mant).
FP4_ORACLE = {
    0b0000: 0.0,
    0b0001: 0.5,
    0b0010: 1.0,
    0b0011: 1.5,
    0b0100: 2.0,
    0b0101: 3.0,
    0b0110: 4.0,
    0b0111: 6.0,
    0b1000: -0.0,
    0b1001: -0.5,
    0b1010: -1.0,
    0b1011: -1.5,
    0b1100: -2.0,
    0b1101: -3.0,
    0b1110: -4.0,
    0b1111: -6.0,
}


def e4m3_oracle_value(code: int):
    """Minifloat value from the generic definition (E=4, M=3, bias=7)."""
    sign = -1 if code & 0x80 else 1
    exp = (code >> 3) & 0xF
    mant = code & 0x7
    if exp == 0xF and mant == 0x7:
        return None  # NaN
    if exp == 0:
        frac = Fraction(mant, 8) * Fraction(2) ** (1 - 7)
    else:
        frac = (1 + Fraction(mant, 8)) * Fraction(2) ** (exp - 7)
    return float(sign * frac)


# 15 distinct FP4 values ascending, paired with their codes.
_SORTED = sorted(
    ((v, c) for c, v in FP4_ORACLE.items() if not (c == 8)), key=lambda t: t[0]
)
_SVALS = np.array([v for v, _ in _SORTED])

# positive magnitudes by code 0..7 (the format is sign-magnitude symmetric)
_MAGS = np.array([FP4_ORACLE[c] for c in range(8)])
_MAG_CODES = np.arange(8, dtype=np.uint8)


def rne_oracle(x: np.ndarray) -> np.ndarray:
    """Brute-force nearest FP4 value with ties to the even mantissa bit.

    Rounding is sign-magnitude: the magnitude rounds on the positive table
    and the sign bit is copied from the input, so -0.25 gives -0.0.
    """
    dist = np.abs(np.abs(x)[:, None] - _MAGS[None, :])
    dmin = dist.min(axis=1, keepdims=True)
    tied = dist == dmin
    even = tied & ((_MAG_CODES[None, :] & 1) == 0)
    idx = np.where(even.any(axis=1), even.argmax(axis=1), tied.argmax(axis=1))
    return (_MAG_CODES[idx] | (np.signbit(x) << 3)).astype(np.uint8)


class TestFp4Decode:
    def test_all_16_codes_match_hand_table(self):
        for code, val in FP4_ORACLE.items():
            got = decode_fp4(np.uint8(code))
            assert got == val
            # signed zero keeps its sign bit through decode
            if code == 0b1000:
                assert np.signbit(got)

    def test_notable_codes(self):
        assert decode_fp4(0b0111) == 6.0
        assert decode_fp4(0b0000) == 0.0
        assert decode_fp4(0b1101) == -3.0

    def test_high_bits_masked(self):
        assert decode_fp4(np.uint8(0xF7)) == 6.0


class TestFp4Rne:
    def test_round_trip_every_code(self):
        for code, val in FP4_ORACLE.items():
            assert encode_fp4_rne(val) == code

    @pytest.mark.parametrize(
        "x,value",
        [
            (4.62, 4.0),
            (0.68, 0.5),
            (2.5, 2.0),
            (6.15, 6.0),
            (0.25, 0.0),
            (0.75, 1.0),
            (1.25, 1.0),
            (1.75, 2.0),
            (3.5, 4.0),
            (5.0, 4.0),
            (-5.0, -4.0),
            (-2.5, -2.0),
            (100.0, 6.0),
            (-100.0, -6.0),
        ],
    )
    def test_spot_values(self, x, value):
        assert decode_fp4(encode_fp4_rne(x)) == value

    def test_oracle_agreement_10e6(self):
        rng = np.random.Generator(np.random.Philox(2024))
        x = rng.uniform(-8.0, 8.0, 1_000_000)
        got = encode_fp4_rne(x)
        want = rne_oracle(x)
        assert np.array_equal(got, want)

    def test_oracle_agreement_near_ties(self):
        # sprinkle exact midpoints and their float neighbors
        mids = np.array([0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0])
        pts = np.concatenate(
            [mids, -mids, np.nextafter(mids, 0), np.nextafter(mids, 10)]
        )
        assert np.array_equal(encode_fp4_rne(pts), rne_oracle(pts))

    def test_rejects_non_finite(self):
        for bad in (np.nan, np.inf, -np.inf):
            with pytest.raises(InvalidInputError):
                encode_fp4_rne(bad)
        with pytest.raises(InvalidInputError):
            encode_fp4_rne(np.array([1.0, np.nan]))

    def test_scalar_in_scalar_out(self):
        out = encode_fp4_rne(1.4)
        assert out.shape == ()
        arr = encode_fp4_rne(np.array([1.4, 2.6]))
        assert arr.shape == (2,)

    def test_negative_zero_keeps_sign(self):
        assert encode_fp4_rne(-0.0) == 0b1000
        assert encode_fp4_rne(0.0) == 0b0000


class TestFp4Stochastic:
    def test_exact_values_ignore_u(self):
        for code, val in FP4_ORACLE.items():
            for u in (0.0, 0.5, 0.999999):
                assert encode_fp4_stochastic(val, u) == code

    def test_midpoint_switchover(self):
        assert decode_fp4(encode_fp4_stochastic(2.5, 0.49)) == 3.0
        assert decode_fp4(encode_fp4_stochastic(2.5, 0.51)) == 2.0

    def test_saturation_is_deterministic(self):
        for u in (0.0, 0.999999):
            assert decode_fp4(encode_fp4_stochastic(7.3, u)) == 6.0
            assert decode_fp4(encode_fp4_stochastic(-9.0, u)) == -6.0

    def test_support_is_the_two_neighbors(self):
        rng = np.random.Generator(np.random.Philox(5))
        x = rng.uniform(-6.0, 6.0, 20_000)
        u = rng.random(20_000)
        dec = decode_fp4(encode_fp4_stochastic(x, u))
        lo = _SVALS[np.searchsorted(_SVALS, x, side="right") - 1]
        hi = _SVALS[np.minimum(np.searchsorted(_SVALS, x), 14)]
        assert np.all((dec == lo) | (dec == hi))

    def test_unbiased_at_a_point(self):
        rng = np.random.Generator(np.random.Philox(6))
        u = rng.random(50_000)
        dec = decode_fp4(encode_fp4_stochastic(np.full(50_000, 2.2), u))
        se = dec.std(ddof=1) / np.sqrt(dec.size)
        assert abs(dec.mean() - 2.2) < 6 * se

    def test_probability_matches_proximity(self):
        # x = 2.75 lies 3/4 of the way from 2 to 3
        rng = np.random.Generator(np.random.Philox(7))
        u = rng.random(100_000)
        dec = decode_fp4(encode_fp4_stochastic(np.full(100_000, 2.75), u))
        p_hi = np.mean(dec == 3.0)
        assert abs(p_hi - 0.75) < 0.01

    def test_u_shape_mismatch_raises(self):
        with pytest.raises(InvalidInputError):
            encode_fp4_stochastic(np.array([1.0, 2.0]), np.array([0.5]))

    def test_non_finite_raises(self):
        with pytest.raises(InvalidInputError):
            encode_fp4_stochastic(np.nan, 0.5)


class TestE4M3:
    def test_decode_against_fraction_oracle(self):
        for code in range(256):
            want = e4m3_oracle_value(code)
            got = decode_fp8_e4m3(np.uint8(code))
            if want is None:
                assert np.isnan(got)
            else:
                assert got == want

    def test_round_trip_every_finite_code(self):
        codes = [c for c in range(256) if e4m3_oracle_value(c) is not None]
        assert len(codes) == 254
        vals = decode_fp8_e4m3(np.array(codes, dtype=np.uint8))
        assert np.array_equal(encode_fp8_e4m3(vals), np.array(codes))

    @pytest.mark.parametrize(
        "x,value",
        [
            (6.67, 6.5),
            (45.0, 44.0),
            (448.0, 448.0),
            (460.0, 448.0),
            (30.0, 30.0),
            (10.0, 10.0),
            (1 / 6, 0.171875),
            (2.0**-10, 0.0),  # below half the subnormal step
            (2.0**-9, 2.0**-9),
        ],
    )
    def test_spot_values(self, x, value):
        assert decode_fp8_e4m3(encode_fp8_e4m3(x)) == value

    def test_extremes(self):
        assert encode_fp8_e4m3(np.inf) == 0x7E  # +448
        assert encode_fp8_e4m3(-np.inf) == 0xFE
        assert np.isnan(decode_fp8_e4m3(encode_fp8_e4m3(np.nan)))

    def test_max_finite_and_nan_pattern(self):
        assert decode_fp8_e4m3(np.uint8(0x7E)) == 448.0
        assert np.isnan(decode_fp8_e4m3(np.uint8(0x7F)))
        assert np.isnan(decode_fp8_e4m3(np.uint8(0xFF)))

    def test_subnormal_minimum(self):
        assert decode_fp8_e4m3(np.uint8(1)) == 2.0**-9

    def test_nearest_even_on_random_values(self):
        # independent oracle: nearest finite E4M3 value, tie to even mantissa
        codes = np.array(
            [c for c in range(0x7F) if e4m3_oracle_value(c) is not None]
        )
        vals = np.array([e4m3_oracle_value(c) for c in codes])
        rng = np.random.Generator(np.random.Philox(9))
        x = rng.uniform(0.0, 500.0, 200_000)
        dist = np.abs(x[:, None] - vals[None, :])
        dmin = dist.min(axis=1, keepdims=True)
        tied = dist == dmin
        even = tied & ((codes[None, :] & 1) == 0)
        idx = np.where(even.any(axis=1), even.argmax(axis=1), tied.argmax(axis=1))
        assert np.array_equal(encode_fp8_e4m3(x), codes[idx].astype(np.uint8))


class TestE8M0:
    def test_decode_is_power_of_two(self):
        for code in range(255):
            v = decode_fp8_e8m0(np.uint8(code))
            assert v == 2.0 ** (code - 127)
            m, _ = np.frexp(v)
            assert m == 0.5  # zero mantissa: exactly a power of two
        assert np.isnan(decode_fp8_e8m0(np.uint8(0xFF)))

    def test_round_trip_every_finite_code(self):
        codes = np.arange(255, dtype=np.uint8)
        assert np.array_equal(encode_fp8_e8m0(decode_fp8_e8m0(codes)), codes)

    def test_round_down_rule(self):
        assert decode_fp8_e8m0(encode_fp8_e8m0(30.0)) == 16.0
        assert decode_fp8_e8m0(encode_fp8_e8m0(1.0)) == 1.0
        assert decode_fp8_e8m0(encode_fp8_e8m0(1.999)) == 1.0
        assert encode_fp8_e8m0(1.0) == 127

    def test_exhaustive_scan_of_exponent_range(self):
        for k in range(-127, 128):
            assert encode_fp8_e8m0(2.0**k) == k + 127
            if k < 127:
                # anything below the next power of two rounds down to 2^k
                assert encode_fp8_e8m0(2.0**k * 1.9) == k + 127

    def test_clamps_and_rejects(self):
        assert encode_fp8_e8m0(np.inf) == 254
        assert encode_fp8_e8m0(2.0**-200) == 0  # clamped to 2^-127
        for bad in (0.0, -1.0, np.nan):
            with pytest.raises(InvalidInputError):
                encode_fp8_e8m0(bad)
