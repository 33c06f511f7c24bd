"""Emulated quantized linear layer: forward, input-gradient, weight-gradient.

Matmuls dequantize both operands, cast them to float32, and accumulate in
float32 in a fixed k order, so results are bit-identical regardless of
thread count. An optional flag narrows the output through bf16
(round-to-nearest-even), mirroring the usual low-precision output cast.

Per-path treatment (x: (batch, in), W: (out, in), dy: (batch, out)):

    forward  y  = x @ W^T    x blocked 1-D and RNE-rounded; W in 16x16
                             tiles, RNE.
    dgrad    dx = dy @ W     dy blocked 1-D along out, rounded per
                             config.rounding (stochastic in the recipe);
                             W reused from its 2-D tiling, RNE.
    wgrad    dW = dy^T @ x   both operands first pass through the
                             randomized Hadamard transform along the batch
                             axis, then are quantized along it (config
                             rounding); requires batch % 16 == 0.

The forward path always rounds RNE regardless of config.rounding: the
stochastic treatment belongs to the gradient paths only. Weight gradients
are unbiased in expectation because the transform is orthonormal and the
two operands draw independent rounding streams.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .adaptive import quantize_tensor_adaptive
from .blockquant import (
    QuantConfig,
    QuantizedTensor,
    dequantize_tensor,
    quantize_tensor,
)
from .errors import InvalidInputError
from .transforms import RhtSpec, apply_rht, quantize_weights_2d

__all__ = [
    "emulated_fp4_matmul",
    "linear_forward",
    "linear_dgrad",
    "linear_wgrad",
    "round_to_bf16",
]

# Stream tags keeping the gradient paths' rounding draws independent.
_TAG_DGRAD = 1
_TAG_WGRAD_DY = 2
_TAG_WGRAD_X = 3


def round_to_bf16(x: np.ndarray) -> np.ndarray:
    """float32 -> bf16 -> float32, round to nearest even."""
    f = np.ascontiguousarray(x, dtype=np.float32)
    bits = f.view(np.uint32)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) & 0xFFFF0000
    return rounded.astype(np.uint32).view(np.float32)


def _accum_matmul_f32(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """(M,K) @ (K,N) with float32 products accumulated in ascending k."""
    M, K = A.shape
    _, N = B.shape
    out = np.zeros((M, N), dtype=np.float32)
    for k in range(K):
        out += A[:, k, None] * B[None, k, :]
    return out


def emulated_fp4_matmul(
    aq: QuantizedTensor,
    bq: QuantizedTensor,
    *,
    transpose_b: bool = False,
    bf16_out: bool = False,
) -> np.ndarray:
    """matmul(dequantize(aq), dequantize(bq)) with 32-bit accumulation."""
    if len(aq.shape) != 2 or len(bq.shape) != 2:
        raise InvalidInputError("emulated matmul is defined for 2-D operands")
    A = dequantize_tensor(aq).astype(np.float32)
    B = dequantize_tensor(bq).astype(np.float32)
    if transpose_b:
        B = B.T
    if A.shape[1] != B.shape[0]:
        raise InvalidInputError(
            f"inner dimensions differ: {A.shape} x {B.shape}"
        )
    out = _accum_matmul_f32(A, np.ascontiguousarray(B))
    return round_to_bf16(out) if bf16_out else out


def _quantize_1d(X, config: QuantConfig, sr_tag: int) -> QuantizedTensor:
    if config.scale_mode == "adaptive":
        return quantize_tensor_adaptive(X, config, sr_tag=sr_tag)
    return quantize_tensor(X, config, sr_tag=sr_tag)


def _check_2d(name: str, arr: np.ndarray):
    if np.asarray(arr).ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D")


def linear_forward(
    x, W, config: QuantConfig, *, bf16_out: bool = False
) -> np.ndarray:
    """y = q(x) @ q(W)^T, both operands RNE."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    _check_2d("x", x)
    _check_2d("W", W)
    if x.shape[1] != W.shape[1]:
        raise InvalidInputError("x and W disagree on the input dimension")
    rne = replace(config, rounding="rne")
    xq = _quantize_1d(x, rne, sr_tag=0)
    wq = quantize_weights_2d(W, rne)
    return emulated_fp4_matmul(xq, wq, transpose_b=True, bf16_out=bf16_out)


def linear_dgrad(
    dy, W, config: QuantConfig, *, bf16_out: bool = False
) -> np.ndarray:
    """dx = q(dy) @ q(W); dy uses the configured rounding."""
    dy = np.asarray(dy, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    _check_2d("dy", dy)
    _check_2d("W", W)
    if dy.shape[1] != W.shape[0]:
        raise InvalidInputError("dy and W disagree on the output dimension")
    dyq = _quantize_1d(dy, config, sr_tag=_TAG_DGRAD)
    wq = quantize_weights_2d(W, replace(config, rounding="rne"))
    return emulated_fp4_matmul(dyq, wq, bf16_out=bf16_out)


def linear_wgrad(
    dy, x, config: QuantConfig, *, bf16_out: bool = False
) -> np.ndarray:
    """dW = q(T dy)^T @ q(T x), transform and quantization along batch."""
    dy = np.asarray(dy, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_2d("dy", dy)
    _check_2d("x", x)
    if dy.shape[0] != x.shape[0]:
        raise InvalidInputError("dy and x disagree on the batch dimension")
    spec = RhtSpec(seed=config.seed)
    if dy.shape[0] % spec.size:
        raise InvalidInputError(
            f"batch dimension must be a multiple of {spec.size} for wgrad"
        )
    # (T dy)^T = dy^T T^T is exactly the transform applied along the last
    # (batch) axis of the transposed matrices.
    a = apply_rht(dy.T, spec)  # (out, batch)
    b = apply_rht(x.T, spec)  # (in, batch)
    aq = _quantize_1d(a, config, sr_tag=_TAG_WGRAD_DY)
    bq = _quantize_1d(b, config, sr_tag=_TAG_WGRAD_X)
    return emulated_fp4_matmul(aq, bq, transpose_b=True, bf16_out=bf16_out)
