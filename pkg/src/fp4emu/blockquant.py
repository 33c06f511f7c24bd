"""Block-scaled tensor quantization pipeline.

A tensor is cut into blocks along its last dimension (16 values for NVFP4,
32 for MXFP4). Each block stores 4-bit codes plus one 8-bit scale; NVFP4
additionally carries one full-precision tensor scale alpha chosen so that
the largest block scale lands at the top of the E4M3 range:

    alpha = max|X| / (M_fp4 * fp8_cap)        (1.0 for an all-zero tensor)
    Delta = e4m3( max|block| / (alpha * M) )
    code_i = fp4( X_i / (alpha * decoded Delta) )
    D_i    = decode(code_i) * alpha * decoded Delta

Values are divided by the *decoded* (post-rounding) Delta, so a scale that
rounds down pushes the block maximum slightly past 6 and it saturates.
MXFP4 has no tensor scale (alpha is fixed at 1) and uses power-of-two block
scales with the shared-exponent convention 2^(floor(log2 max|block|) - 2).

Tail blocks are zero-padded; pad positions are excluded from all error
metrics (the divisor of a block MSE is the count of real values it covers).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .codecs import (
    decode_fp4,
    decode_fp8_e4m3,
    decode_fp8_e8m0,
    encode_fp4_rne,
    encode_fp4_stochastic,
    encode_fp8_e4m3,
    encode_fp8_e8m0,
)
from .errors import ConfigError, InvalidInputError

__all__ = [
    "NVFP4_BLOCK",
    "MXFP4_BLOCK",
    "QuantConfig",
    "BlockQuantResult",
    "QuantizedTensor",
    "compute_tensor_scale",
    "compute_block_scale",
    "quantize_block",
    "quantize_tensor",
    "dequantize_tensor",
    "quantize_tensor_simulated",
    "reconstruction_mse",
]

NVFP4_BLOCK = 16
MXFP4_BLOCK = 32

_FORMATS = ("nvfp4", "mxfp4")
_SCALE_MODES = ("fixed6", "fixed4", "adaptive")
_RULES = ("mse", "l1", "absmax")
_ROUNDINGS = ("rne", "sr")

# E8M0 shared-exponent convention: block max is divided by 2^(largest FP4
# exponent) = 4 before the round-down power-of-two encode.
_MX_DIVISOR = 4.0


@dataclass(frozen=True)
class QuantConfig:
    """Quantization settings.

    fmt         "nvfp4" (16-blocks, E4M3 scales, tensor scale) or "mxfp4"
                (32-blocks, E8M0 scales, no tensor scale).
    scale_mode  "fixed6" scales every block max to 6, "fixed4" to 4,
                "adaptive" picks per block between the two (nvfp4 only).
    rule        error metric for the adaptive choice: mse | l1 | absmax.
    rounding    value rounding: "rne" or "sr" (stochastic, seeded).
    seed        seed for the deterministic stochastic-rounding streams.
    fp8_cap     tensor-scale denominator cap; defaults to 448, forced to
                256 in adaptive mode so a block scale of 256*6/4 = 384
                still fits E4M3.
    sim_hp_scales / sim_hp_values / threshold
                simulation knobs, honored only by quantize_tensor_simulated.
    """

    fmt: str = "nvfp4"
    scale_mode: str = "fixed6"
    rule: str = "mse"
    rounding: str = "rne"
    seed: int = 0
    fp8_cap: Optional[float] = None
    sim_hp_scales: bool = False
    sim_hp_values: bool = False
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.fmt not in _FORMATS:
            raise ConfigError(f"unknown format {self.fmt!r}")
        if self.scale_mode not in _SCALE_MODES:
            raise ConfigError(f"unknown scale_mode {self.scale_mode!r}")
        if self.rule not in _RULES:
            raise ConfigError(f"unknown rule {self.rule!r}")
        if self.rounding not in _ROUNDINGS:
            raise ConfigError(f"unknown rounding {self.rounding!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.fmt == "mxfp4" and self.scale_mode != "fixed6":
            # A power-of-two scale grid cannot express the 6-vs-4 target
            # distinction, so only the baseline mode is meaningful.
            raise ConfigError("mxfp4 supports only scale_mode='fixed6'")
        cap = self.fp8_cap
        if self.scale_mode == "adaptive":
            if cap is None:
                cap = 256.0
            if cap != 256.0:
                raise ConfigError("adaptive mode requires fp8_cap == 256")
        else:
            if cap is None:
                cap = 448.0
            if cap not in (448.0, 256.0):
                raise ConfigError("fp8_cap must be 448 or 256")
        object.__setattr__(self, "fp8_cap", float(cap))
        if self.threshold is not None and not (0.0 <= self.threshold <= 6.0):
            raise InvalidInputError("threshold must lie in [0, 6]")

    @property
    def block_size(self) -> int:
        return NVFP4_BLOCK if self.fmt == "nvfp4" else MXFP4_BLOCK

    @property
    def m_tensor(self) -> float:
        """M_fp4 slot of the tensor-scale formula."""
        return 4.0 if self.scale_mode == "fixed4" else 6.0

    def candidate_ms(self) -> tuple[float, ...]:
        if self.scale_mode == "fixed6":
            return (6.0,)
        if self.scale_mode == "fixed4":
            return (4.0,)
        return (6.0, 4.0)


@dataclass
class BlockQuantResult:
    """Outcome of quantizing one block."""

    codes: np.ndarray  # uint8, one FP4 code per value
    scale_code: int
    chosen_m: int  # block-max target the stored scale corresponds to
    err_mse: float
    err_l1: float
    err_max: float
    dequant: np.ndarray = field(repr=False, default=None)


@dataclass
class QuantizedTensor:
    """Quantized container: shape, format tag, tensor scale, scales, codes.

    codes holds one FP4 code per original element (unpacked, same shape as
    the source tensor); scale_codes has one byte per block, laid out as
    (rows, blocks_per_row) where rows = product of all leading dims.
    """

    shape: tuple
    fmt: str
    alpha: float
    scale_codes: np.ndarray
    codes: np.ndarray

    @property
    def block_size(self) -> int:
        return NVFP4_BLOCK if self.fmt == "nvfp4" else MXFP4_BLOCK

    @property
    def num_blocks(self) -> int:
        return self.scale_codes.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.fmt == other.fmt
            and self.alpha == other.alpha
            and np.array_equal(self.scale_codes, other.scale_codes)
            and np.array_equal(self.codes, other.codes)
        )


def _validated(X) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 0:
        raise InvalidInputError("tensor must have at least one dimension")
    if arr.size == 0:
        raise InvalidInputError("tensor must be non-empty")
    if not np.isfinite(arr).all():
        raise InvalidInputError("tensor must be finite")
    return arr


def _blockify(arr: np.ndarray, block: int) -> tuple[np.ndarray, int]:
    """Reshape to (rows, nblocks, block) with a zero-padded tail."""
    last = arr.shape[-1]
    rows = arr.size // last
    nblocks = -(-last // block)
    flat = arr.reshape(rows, last)
    if nblocks * block == last:
        return flat.reshape(rows, nblocks, block), last
    padded = np.zeros((rows, nblocks * block))
    padded[:, :last] = flat
    return padded.reshape(rows, nblocks, block), last


def compute_tensor_scale(X, m_fp4: float, fp8_cap: float) -> float:
    """Tensor scale alpha = max|X| / (m_fp4 * fp8_cap), rounded through
    32-bit float precision. An all-zero tensor gets alpha = 1.0."""
    arr = _validated(X)
    amax = float(np.max(np.abs(arr)))
    if amax == 0.0:
        return 1.0
    return float(np.float32(amax) / np.float32(m_fp4 * fp8_cap))


def compute_block_scale(block, alpha: float, m: float) -> np.uint8:
    """E4M3 code of max|block| / (alpha * m); all-zero blocks get the
    smallest positive scale so the container never divides by zero."""
    arr = np.asarray(block, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InvalidInputError("block must be finite")
    if alpha <= 0 or not np.isfinite(alpha):
        raise InvalidInputError("alpha must be positive and finite")
    bmax = float(np.max(np.abs(arr))) if arr.size else 0.0
    if bmax == 0.0:
        return np.uint8(1)
    return encode_fp8_e4m3(bmax / (alpha * m))


def _nvfp4_scales(bmax: np.ndarray, alpha: float, m: float):
    sc = encode_fp8_e4m3(bmax / (alpha * m))
    sc = np.where(bmax == 0.0, np.uint8(1), sc)
    return sc, decode_fp8_e4m3(sc)


def _mxfp4_scales(bmax: np.ndarray):
    sc = np.zeros(bmax.shape, dtype=np.uint8)  # zero blocks: smallest scale
    pos = bmax > 0.0
    if pos.any():
        sc[pos] = encode_fp8_e8m0(bmax[pos] / _MX_DIVISOR)
    return sc, decode_fp8_e8m0(sc)


def _sr_uniforms(seed: int, m: float, tag: int, shape) -> np.ndarray:
    """Deterministic uniforms: one Philox stream per (tag, target m); block
    i consumes lanes [i*B, (i+1)*B), so results are schedule-independent."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tag, int(m)))
    return np.random.Generator(np.random.Philox(ss)).random(shape)


def _cast_values(Xb: np.ndarray, alpha: float, sdec: np.ndarray, rounding: str, u):
    """FP4-cast padded blocks against decoded scales; returns (codes, deq).

    A nonzero block whose scale underflowed E4M3 to zero saturates its
    values to +-6 codes and dequantizes to zero, the saturating-convert
    endpoint of the real pipeline.
    """
    denom = alpha * sdec[..., None]
    safe = np.where(denom > 0.0, denom, 1.0)
    scaled = Xb / safe
    scaled = np.where(
        denom > 0.0,
        scaled,
        np.where(Xb != 0.0, np.copysign(6.0, Xb), 0.0),
    )
    if rounding == "rne":
        codes = encode_fp4_rne(scaled)
    else:
        codes = encode_fp4_stochastic(scaled, u)
    deq = decode_fp4(codes) * denom
    return codes, deq


def _block_error_sums(Xb, deq):
    """Per-block error sums (sq, abs, max over the block axis).

    Pad positions carry X = 0 and always dequantize to 0, so plain sums over
    the padded layout already exclude them.
    """
    diff = deq - Xb
    sq = np.sum(diff * diff, axis=-1)
    ab = np.sum(np.abs(diff), axis=-1)
    mx = np.max(np.abs(diff), axis=-1)
    return sq, ab, mx


def _real_counts(last: int, nblocks: int, block: int) -> np.ndarray:
    counts = np.full(nblocks, block, dtype=np.int64)
    counts[-1] = last - (nblocks - 1) * block
    return counts


def _fixed_pass(Xb, alpha, m, fmt, rounding, seed, tag):
    """One full fixed-target pass over padded blocks."""
    bmax = np.max(np.abs(Xb), axis=-1)
    if fmt == "nvfp4":
        sc, sdec = _nvfp4_scales(bmax, alpha, m)
    else:
        sc, sdec = _mxfp4_scales(bmax)
    u = None
    if rounding == "sr":
        u = _sr_uniforms(seed, m, tag, Xb.shape)
    codes, deq = _cast_values(Xb, alpha, sdec, rounding, u)
    return codes, sc, sdec, deq


def _resolve_alpha(arr, config: QuantConfig, alpha) -> float:
    if config.fmt == "mxfp4":
        if alpha not in (None, 1.0):
            raise ConfigError("mxfp4 carries no tensor scale (alpha is 1)")
        return 1.0
    if alpha is None:
        return compute_tensor_scale(arr, config.m_tensor, config.fp8_cap)
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha <= 0.0:
        raise InvalidInputError("alpha override must be positive and finite")
    return alpha


def _strip_pad(blocks3: np.ndarray, shape, last: int) -> np.ndarray:
    rows = blocks3.shape[0]
    return blocks3.reshape(rows, -1)[:, :last].reshape(shape)


def quantize_tensor(
    X, config: QuantConfig, alpha: Optional[float] = None, sr_tag: int = 0
) -> QuantizedTensor:
    """Quantize a tensor under a fixed block-max target (6 or 4).

    Adaptive mode lives in the adaptive module; simulation knobs live in
    quantize_tensor_simulated. alpha overrides the computed tensor scale
    (useful for reproducing worked examples where alpha = 1).
    """
    if config.scale_mode == "adaptive":
        raise ConfigError("use quantize_tensor_adaptive for adaptive mode")
    if config.sim_hp_scales or config.sim_hp_values or config.threshold is not None:
        raise ConfigError("simulation knobs require quantize_tensor_simulated")
    arr = _validated(X)
    a = _resolve_alpha(arr, config, alpha)
    Xb, last = _blockify(arr, config.block_size)
    m = config.candidate_ms()[0]
    codes, sc, _, _ = _fixed_pass(
        Xb, a, m, config.fmt, config.rounding, config.seed, sr_tag
    )
    return QuantizedTensor(
        shape=arr.shape,
        fmt=config.fmt,
        alpha=a,
        scale_codes=sc,
        codes=_strip_pad(codes, arr.shape, last),
    )


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct real values: decode(code) * alpha * decode(scale)."""
    block = q.block_size
    if q.fmt == "nvfp4":
        sdec = decode_fp8_e4m3(q.scale_codes)
    else:
        sdec = decode_fp8_e8m0(q.scale_codes)
    if np.isnan(sdec).any():
        raise InvalidInputError("container holds a NaN scale code")
    last = q.shape[-1]
    rows = int(np.prod(q.shape[:-1], dtype=np.int64)) if len(q.shape) > 1 else 1
    vals = decode_fp4(q.codes).reshape(rows, last)
    per_elem_scale = np.repeat(sdec, block, axis=1)[:, :last]
    return (vals * q.alpha * per_elem_scale).reshape(q.shape)


def quantize_block(
    block, alpha: float, m: float, rounding: str = "rne", u=None
) -> BlockQuantResult:
    """Quantize a single block (any length) at a fixed block-max target.

    Stochastic rounding takes explicit uniforms u (same length as the
    block); the tensor-level API manages its own deterministic streams.
    """
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("block must be a non-empty 1-D array")
    if not np.isfinite(arr).all():
        raise InvalidInputError("block must be finite")
    if rounding not in _ROUNDINGS:
        raise ConfigError(f"unknown rounding {rounding!r}")
    if rounding == "sr":
        if u is None:
            raise InvalidInputError("stochastic rounding requires uniforms u")
        u = np.asarray(u, dtype=np.float64).reshape(1, 1, -1)
        if u.size != arr.size:
            raise InvalidInputError("u must match the block length")
    Xb = arr.reshape(1, 1, -1)
    bmax = np.max(np.abs(Xb), axis=-1)
    sc, sdec = _nvfp4_scales(bmax, alpha, m)
    codes, deq = _cast_values(Xb, alpha, sdec, rounding, u)
    n = arr.size
    diff = (deq - Xb).reshape(-1)
    return BlockQuantResult(
        codes=codes.reshape(-1),
        scale_code=int(sc[0, 0]),
        chosen_m=int(m),
        err_mse=float(np.sum(diff * diff) / n),
        err_l1=float(np.sum(np.abs(diff)) / n),
        err_max=float(np.max(np.abs(diff))),
        dequant=deq.reshape(-1),
    )


def quantize_tensor_simulated(
    X, config: QuantConfig, alpha: Optional[float] = None
) -> np.ndarray:
    """Partially-quantized reconstructions for error-source analysis.

    Exactly one knob must be active:
      sim_hp_values  block scales are quantized but values skip the FP4
                     cast entirely (reconstruction error collapses to
                     float-rounding noise);
      sim_hp_scales  values are FP4-cast against the unrounded real scale;
      threshold x    full pipeline, but only values whose saturated scaled
                     magnitude min(|X/(alpha*Delta)|, 6) is <= x are
                     quantized, the rest pass through unchanged. x = 0 is
                     an exact passthrough and x = 6 is the full pipeline.

    Returns the reconstructed real tensor (no container: hp-values has no
    codes to store).
    """
    knobs = (
        int(config.sim_hp_scales)
        + int(config.sim_hp_values)
        + int(config.threshold is not None)
    )
    if knobs != 1:
        raise ConfigError("exactly one simulation knob must be set")
    if config.fmt != "nvfp4":
        raise ConfigError("simulations are defined for the nvfp4 pipeline")
    if config.scale_mode == "adaptive":
        raise ConfigError("simulations use a fixed block-max target")
    arr = _validated(X)
    a = _resolve_alpha(arr, config, alpha)
    Xb, last = _blockify(arr, config.block_size)
    m = config.candidate_ms()[0]
    bmax = np.max(np.abs(Xb), axis=-1)

    if config.sim_hp_values:
        _, sdec = _nvfp4_scales(bmax, a, m)
        denom = a * sdec[..., None]
        safe = np.where(denom > 0.0, denom, 1.0)
        deq = np.where(denom > 0.0, (Xb / safe) * denom, 0.0)
        return _strip_pad(deq, arr.shape, last)

    if config.sim_hp_scales:
        sdec = bmax / (a * m)  # unrounded
        u = None
        if config.rounding == "sr":
            u = _sr_uniforms(config.seed, m, 0, Xb.shape)
        _, deq = _cast_values(Xb, a, sdec, config.rounding, u)
        return _strip_pad(deq, arr.shape, last)

    x = float(config.threshold)
    u = None
    if config.rounding == "sr":
        u = _sr_uniforms(config.seed, m, 0, Xb.shape)
    _, sdec = _nvfp4_scales(bmax, a, m)
    _, deq = _cast_values(Xb, a, sdec, config.rounding, u)
    denom = a * sdec[..., None]
    safe = np.where(denom > 0.0, denom, 1.0)
    scaled = np.where(
        denom > 0.0,
        Xb / safe,
        np.where(Xb != 0.0, np.copysign(6.0, Xb), 0.0),
    )
    sat_mag = np.minimum(np.abs(scaled), 6.0)
    out = np.where(sat_mag <= x, deq, Xb)
    return _strip_pad(out, arr.shape, last)


def reconstruction_mse(X, D) -> float:
    """Mean squared reconstruction error over all real elements."""
    arr = np.asarray(X, dtype=np.float64)
    diff = np.asarray(D, dtype=np.float64) - arr
    return float(np.mean(diff * diff))
