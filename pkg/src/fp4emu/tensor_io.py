"""Binary tensor files. Everything is little-endian; writes are canonical
(equal containers always produce byte-identical files).

Real tensors ("FQT1"):

    offset  size  field
    0       4     magic b"FQT1"
    4       1     dtype: 0 = float32, 1 = bfloat16
    5       1     rank r
    6       8*r   dims, uint64 each
    6+8r    ...   payload, row-major: 4 bytes/elem (f32) or 2 (bf16)

Quantized containers ("NVF4"):

    offset  size  field
    0       4     magic b"NVF4"
    4       1     format: 0 = nvfp4 (16-blocks, E4M3 scales),
                          1 = mxfp4 (32-blocks, E8M0 scales)
    5       1     rank r
    6       8*r   dims, uint64 each
    6+8r    4     tensor scale alpha, float32 (always 1.0 for mxfp4)
    ...     S     block scale bytes, S = ceil(last_dim/block) * other_dims
    ...     C     packed FP4 codes, C = ceil(numel/2); two codes per byte,
                  the even (row-major) index in the low nibble; when numel
                  is odd the final high nibble is zero
"""

from __future__ import annotations

import struct

import numpy as np

from .blockquant import QuantizedTensor
from .errors import (
    BadMagicError,
    InvalidInputError,
    TruncatedFileError,
    UnsupportedDtypeError,
    FormatError,
)

__all__ = [
    "read_tensor",
    "write_tensor",
    "read_quantized",
    "write_quantized",
]

_TENSOR_MAGIC = b"FQT1"
_QUANT_MAGIC = b"NVF4"
_FMT_CODE = {"nvfp4": 0, "mxfp4": 1}
_FMT_NAME = {0: "nvfp4", 1: "mxfp4"}


def _f32_to_bf16_bytes(arr: np.ndarray) -> bytes:
    bits = np.ascontiguousarray(arr, dtype="<f4").view(np.uint32)
    rounded = ((bits.astype(np.uint64) + 0x7FFF + ((bits >> 16) & 1)) >> 16)
    return rounded.astype("<u2").tobytes()


def _bf16_bytes_to_f32(raw: bytes) -> np.ndarray:
    half = np.frombuffer(raw, dtype="<u2").astype(np.uint32)
    return (half << 16).view(np.uint32).astype(np.uint32).view(np.float32)


def write_tensor(path, X, dtype: str = "f32") -> None:
    """Write a real tensor; dtype selects the payload width."""
    arr = np.asarray(X, dtype=np.float64)
    if dtype not in ("f32", "bf16"):
        raise InvalidInputError("dtype must be 'f32' or 'bf16'")
    shape = arr.shape
    if len(shape) > 255:
        raise InvalidInputError("rank must fit in one byte")
    head = _TENSOR_MAGIC + struct.pack(
        "<BB", 0 if dtype == "f32" else 1, len(shape)
    )
    head += struct.pack(f"<{len(shape)}Q", *shape)
    f32 = arr.astype("<f4")
    payload = f32.tobytes() if dtype == "f32" else _f32_to_bf16_bytes(f32)
    with open(path, "wb") as fh:
        fh.write(head + payload)


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise TruncatedFileError(f"file ends inside {what}")
    return buf[offset : offset + n], offset + n


def read_tensor(path) -> np.ndarray:
    """Read an FQT1 file; bf16 payloads widen to float32."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, off = _take(buf, 0, 4, "magic")
    if magic != _TENSOR_MAGIC:
        raise BadMagicError(f"expected {_TENSOR_MAGIC!r}, found {magic!r}")
    hdr, off = _take(buf, off, 2, "header")
    dtype, rank = struct.unpack("<BB", hdr)
    if dtype > 1:
        raise UnsupportedDtypeError(f"dtype byte {dtype} is not defined")
    raw, off = _take(buf, off, 8 * rank, "dims")
    dims = struct.unpack(f"<{rank}Q", raw)
    numel = 1
    for d in dims:
        numel *= d
    width = 4 if dtype == 0 else 2
    payload, off = _take(buf, off, numel * width, "payload")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after payload")
    if dtype == 0:
        vals = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    else:
        vals = _bf16_bytes_to_f32(payload)
    return vals.reshape(dims)


def _pack_nibbles(codes: np.ndarray) -> bytes:
    flat = codes.reshape(-1).astype(np.uint8)
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.uint8)])
    pairs = flat.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()


def _unpack_nibbles(raw: bytes, numel: int) -> np.ndarray:
    packed = np.frombuffer(raw, dtype=np.uint8)
    out = np.empty(packed.size * 2, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    if numel % 2 and out[-1] != 0:
        raise FormatError("odd-length code payload has a nonzero tail nibble")
    return out[:numel]


def write_quantized(path, q: QuantizedTensor) -> None:
    if q.fmt not in _FMT_CODE:
        raise InvalidInputError(f"unknown container format {q.fmt!r}")
    shape = tuple(q.shape)
    if len(shape) > 255:
        raise InvalidInputError("rank must fit in one byte")
    head = _QUANT_MAGIC + struct.pack("<BB", _FMT_CODE[q.fmt], len(shape))
    head += struct.pack(f"<{len(shape)}Q", *shape)
    head += struct.pack("<f", q.alpha)
    body = q.scale_codes.astype(np.uint8).tobytes() + _pack_nibbles(q.codes)
    with open(path, "wb") as fh:
        fh.write(head + body)


def read_quantized(path) -> QuantizedTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, off = _take(buf, 0, 4, "magic")
    if magic != _QUANT_MAGIC:
        raise BadMagicError(f"expected {_QUANT_MAGIC!r}, found {magic!r}")
    hdr, off = _take(buf, off, 2, "header")
    fmt_code, rank = struct.unpack("<BB", hdr)
    if fmt_code > 1:
        raise UnsupportedDtypeError(f"format byte {fmt_code} is not defined")
    if rank == 0:
        raise FormatError("containers require at least one dimension")
    raw, off = _take(buf, off, 8 * rank, "dims")
    dims = struct.unpack(f"<{rank}Q", raw)
    raw, off = _take(buf, off, 4, "tensor scale")
    (alpha,) = struct.unpack("<f", raw)
    fmt = _FMT_NAME[fmt_code]
    if fmt == "mxfp4" and alpha != 1.0:
        raise FormatError("mxfp4 containers must carry alpha == 1.0")
    if not np.isfinite(alpha) or alpha <= 0.0:
        raise FormatError(f"tensor scale must be positive, found {alpha}")
    block = 16 if fmt == "nvfp4" else 32
    last = dims[-1]
    rows = 1
    for d in dims[:-1]:
        rows *= d
    if last == 0 or rows == 0:
        raise FormatError("containers must be non-empty")
    nblocks = -(-last // block)
    numel = rows * last
    raw, off = _take(buf, off, rows * nblocks, "scale array")
    scales = np.frombuffer(raw, dtype=np.uint8).reshape(rows, nblocks).copy()
    raw, off = _take(buf, off, (numel + 1) // 2, "code payload")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after codes")
    codes = _unpack_nibbles(raw, numel).reshape(dims)
    return QuantizedTensor(
        shape=dims, fmt=fmt, alpha=float(alpha), scale_codes=scales, codes=codes
    )
