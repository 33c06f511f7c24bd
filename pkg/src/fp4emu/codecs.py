"""Bit-exact codecs for the 4-bit and 8-bit float formats used by block scaling.

FP4 E2M1 (1 sign / 2 exponent, bias 1 / 1 mantissa)
    bit 3 = sign, bits 2..1 = exponent, bit 0 = mantissa.
    Codes 0..7 decode to 0, 0.5, 1, 1.5, 2, 3, 4, 6; bit 3 negates.
    No infinities, no NaN. Conversions saturate at +-6.

FP8 E4M3 (1 sign / 4 exponent, bias 7 / 3 mantissa)
    Max finite 448 (S.1111.110). S.1111.111 is the only NaN pattern; there
    are no infinities. Subnormal minimum positive value is 2^-9.

FP8 E8M0 (8-bit biased exponent, bias 127)
    value = 2^(bits - 127); 0xFF is NaN. Every finite value is a power of two.

All functions are pure and operate elementwise on arrays (scalars pass
through as scalars). Internal math is float64; every representable value of
these formats is a dyadic rational, so decoding and round-trips are exact.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "FP4_MAX",
    "E4M3_MAX",
    "E4M3_MIN_SUBNORMAL",
    "E4M3_NAN_CODE",
    "E8M0_NAN_CODE",
    "decode_fp4",
    "encode_fp4_rne",
    "encode_fp4_stochastic",
    "decode_fp8_e4m3",
    "encode_fp8_e4m3",
    "decode_fp8_e8m0",
    "encode_fp8_e8m0",
]

FP4_MAX = 6.0
E4M3_MAX = 448.0
E4M3_MIN_SUBNORMAL = 2.0 ** -9
E4M3_NAN_CODE = 0x7F
E8M0_NAN_CODE = 0xFF

# Positive FP4 magnitudes indexed by code 0..7.
_FP4_MAGS = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0])


def _build_fp4_table() -> np.ndarray:
    table = np.concatenate([_FP4_MAGS, -_FP4_MAGS])  # code 8 decodes to -0.0
    return table


def _build_e4m3_table() -> np.ndarray:
    table = np.empty(256)
    for code in range(256):
        sign = -1.0 if code & 0x80 else 1.0
        exp = (code >> 3) & 0xF
        mant = code & 0x7
        if exp == 0xF and mant == 0x7:
            table[code] = np.nan
        elif exp == 0:
            table[code] = sign * mant * 2.0 ** -9
        else:
            table[code] = sign * (1.0 + mant / 8.0) * 2.0 ** (exp - 7)
    return table


_FP4_TABLE = _build_fp4_table()
_E4M3_TABLE = _build_e4m3_table()
# Positive finite E4M3 magnitudes, strictly increasing with code 0x00..0x7E.
_E4M3_POS = _E4M3_TABLE[:0x7F]

# All 15 distinct FP4 values in ascending order, with their codes.
_FP4_SORTED_VALS = np.concatenate([-_FP4_MAGS[:0:-1], _FP4_MAGS])
_FP4_SORTED_CODES = np.concatenate(
    [np.arange(15, 8, -1), np.arange(0, 8)]
).astype(np.uint8)


def _prepare(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _restore(out: np.ndarray, scalar: bool):
    return out[()] if scalar else out


def decode_fp4(codes):
    """Map FP4 codes to their exact real values (+0 and -0 both give zero)."""
    arr = np.asarray(codes)
    out = _FP4_TABLE[arr & 0xF]
    return _restore(out, arr.ndim == 0)


def encode_fp4_rne(x):
    """Round to the nearest FP4 value, ties to the even mantissa bit.

    |x| > 6 saturates; the tie cases on the positive axis go
    0.25->0, 0.75->1, 1.25->1, 1.75->2, 2.5->2, 3.5->4, 5->4.
    Non-finite input raises InvalidInputError.
    """
    arr, scalar = _prepare(x)
    if not np.isfinite(arr).all():
        raise InvalidInputError("encode_fp4_rne: input must be finite")
    sign = np.signbit(arr)
    m = np.minimum(np.abs(arr), FP4_MAX)
    _, e = np.frexp(m)
    exp = np.maximum(e - 1, 0)  # subnormal floor: quantum 0.5 below 1.0
    q = np.ldexp(1.0, exp - 1)  # grid spacing 2^(exp-1) for one mantissa bit
    mag = np.rint(m / q) * q
    idx = np.searchsorted(_FP4_MAGS, mag)
    out = (idx + (sign.astype(np.uint8) << 3)).astype(np.uint8)
    return _restore(out, scalar)


def encode_fp4_stochastic(x, u):
    """Stochastically round x onto the FP4 grid using uniforms u in [0, 1).

    Between neighbors lo < x < hi the high neighbor is chosen iff
    u < (x - lo) / (hi - lo), which makes the decoded expectation equal x.
    Exactly representable values return their own code regardless of u, and
    |x| >= 6 saturates deterministically.
    """
    arr, scalar = _prepare(x)
    if not np.isfinite(arr).all():
        raise InvalidInputError("encode_fp4_stochastic: input must be finite")
    uarr = np.asarray(u, dtype=np.float64)
    if uarr.shape != arr.shape:
        raise InvalidInputError(
            "encode_fp4_stochastic: u must have the same shape as x"
        )
    xc = np.clip(arr, -FP4_MAX, FP4_MAX)
    hi_idx = np.searchsorted(_FP4_SORTED_VALS, xc)  # first value >= xc
    exact = _FP4_SORTED_VALS[hi_idx] == xc
    lo_idx = np.maximum(hi_idx - 1, 0)
    lo_v = _FP4_SORTED_VALS[lo_idx]
    hi_v = _FP4_SORTED_VALS[hi_idx]
    gap = np.where(exact, 1.0, hi_v - lo_v)
    take_hi = uarr < (xc - lo_v) / gap
    idx = np.where(exact, hi_idx, np.where(take_hi, hi_idx, lo_idx))
    out = _FP4_SORTED_CODES[idx]
    # -0.0 keeps its sign bit, matching the RNE encoder.
    out = np.where(exact & (xc == 0.0) & np.signbit(arr), np.uint8(8), out)
    return _restore(out, scalar)


def decode_fp8_e4m3(codes):
    """Map E4M3 codes to exact real values; the two NaN codes give NaN."""
    arr = np.asarray(codes)
    out = _E4M3_TABLE[arr & 0xFF]
    return _restore(out, arr.ndim == 0)


def encode_fp8_e4m3(x):
    """Round to the nearest E4M3 value, ties to even mantissa.

    |x| > 448 (and infinities) saturate to +-448; NaN encodes to the NaN
    code. Subnormals round on the 2^-9 grid, so anything at or below 2^-10
    in magnitude becomes (signed) zero.
    """
    arr, scalar = _prepare(x)
    sign = np.signbit(arr)
    nan = np.isnan(arr)
    m = np.abs(arr)
    m = np.where(np.isfinite(m), m, E4M3_MAX)
    m = np.minimum(m, E4M3_MAX)
    _, e = np.frexp(m)
    exp = np.maximum(e - 1, -6)  # subnormal floor
    q = np.ldexp(1.0, exp - 3)  # grid spacing 2^(exp-3) for three mantissa bits
    mag = np.rint(m / q) * q
    idx = np.searchsorted(_E4M3_POS, mag)
    out = (idx + (sign.astype(np.int64) << 7)).astype(np.uint8)
    out = np.where(nan, np.uint8(E4M3_NAN_CODE), out)
    return _restore(out, scalar)


def decode_fp8_e8m0(codes):
    """Map E8M0 codes to 2^(code-127); 0xFF gives NaN."""
    arr = np.asarray(codes)
    vals = np.ldexp(1.0, arr.astype(np.int64) - 127)
    out = np.where(arr == E8M0_NAN_CODE, np.nan, vals)
    return _restore(out, arr.ndim == 0)


def encode_fp8_e8m0(x):
    """Round x down to a power of two: 2^floor(log2 x), exponent clamped.

    This is the shared-scale convention of microscaled formats. x must be
    strictly positive (NaN, zero, or negative input raises; +inf clamps to
    the top exponent).
    """
    arr, scalar = _prepare(x)
    if np.isnan(arr).any() or (arr <= 0).any():
        raise InvalidInputError("encode_fp8_e8m0: input must be > 0")
    _, e = np.frexp(arr)
    exp = e - 1  # floor(log2 x) since frexp mantissa lies in [0.5, 1)
    exp = np.where(np.isinf(arr), 127, exp)
    exp = np.clip(exp, -127, 127)
    out = (exp + 127).astype(np.uint8)
    return _restore(out, scalar)
