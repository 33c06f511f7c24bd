"""Randomized Hadamard transform and tile-blocked weight quantization.

The transform multiplies each contiguous group of `size` values along the
last dimension by (1/sqrt(size)) * H * diag(signs), where H is the
Sylvester-ordered Hadamard matrix and signs is a +-1 diagonal drawn once
from the seed. It is orthonormal, so it preserves norms and spreads
outliers across the group before quantization; the inverse applies
diag(signs) * H^T / sqrt(size).

Weights are quantized with one scale per 16x16 tile (shared by the tile's
16 row-blocks) so a matrix and its transpose quantize consistently: the
tile of W^T is the transposed tile of W, with the same maximum and hence
the same scale. The tile scale byte is replicated across the tile's rows,
which keeps the container layout identical to the 1-D case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .blockquant import (
    NVFP4_BLOCK,
    QuantConfig,
    QuantizedTensor,
    _cast_values,
    _nvfp4_scales,
    _resolve_alpha,
    _sr_uniforms,
    _validated,
)
from .errors import ConfigError, InvalidInputError

__all__ = ["RhtSpec", "apply_rht", "invert_rht", "quantize_weights_2d"]

TILE = NVFP4_BLOCK  # 16x16 weight tiles

# Stream tag namespacing the sign-diagonal draw away from value rounding.
_SIGN_TAG = 0x5D


@dataclass(frozen=True, eq=False)
class RhtSpec:
    """Transform parameters; signs derive from the seed unless given."""

    size: int = 16
    seed: int = 0
    signs: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.size
        if n < 1 or n & (n - 1):
            raise ConfigError("transform size must be a power of two")
        if self.signs is None:
            ss = np.random.SeedSequence(
                entropy=self.seed, spawn_key=(_SIGN_TAG,)
            )
            rng = np.random.Generator(np.random.Philox(ss))
            signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
            object.__setattr__(self, "signs", signs)
        else:
            signs = np.asarray(self.signs, dtype=np.float64)
            if signs.shape != (n,) or not np.isin(signs, (-1.0, 1.0)).all():
                raise ConfigError("signs must be +-1 and match size")
            object.__setattr__(self, "signs", signs)


def _fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the last axis."""
    n = a.shape[-1]
    h = 1
    while h < n:
        a = a.reshape(*a.shape[:-1], n // (2 * h), 2, h)
        top = a[..., 0, :] + a[..., 1, :]
        bot = a[..., 0, :] - a[..., 1, :]
        a = np.stack([top, bot], axis=-2).reshape(*a.shape[:-3], n)
        h *= 2
    return a


def _grouped(X, size: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] % size:
        raise InvalidInputError(
            f"last dimension must be a positive multiple of {size}"
        )
    return arr


def apply_rht(X, spec: RhtSpec) -> np.ndarray:
    arr = _grouped(X, spec.size)
    shape = arr.shape
    g = arr.reshape(*shape[:-1], shape[-1] // spec.size, spec.size)
    y = _fwht(g * spec.signs) / np.sqrt(spec.size)
    return y.reshape(shape)


def invert_rht(Y, spec: RhtSpec) -> np.ndarray:
    arr = _grouped(Y, spec.size)
    shape = arr.shape
    g = arr.reshape(*shape[:-1], shape[-1] // spec.size, spec.size)
    x = (_fwht(g) / np.sqrt(spec.size)) * spec.signs
    return x.reshape(shape)


def _tile_pass(Wt, alpha, m, rounding, seed, tag):
    """One fixed-target pass over (TR, TC, 16, 16) tiles."""
    tmax = np.max(np.abs(Wt), axis=(-1, -2))
    sc, sdec = _nvfp4_scales(tmax, alpha, m)
    u = None
    if rounding == "sr":
        u = _sr_uniforms(seed, m, tag, Wt.shape)
    # Broadcast the tile scale over both tile axes for the value cast.
    codes, deq = _cast_values(
        Wt.reshape(*Wt.shape[:2], -1),
        alpha,
        sdec,
        rounding,
        None if u is None else u.reshape(*u.shape[:2], -1),
    )
    codes = codes.reshape(Wt.shape)
    deq = deq.reshape(Wt.shape)
    diff = deq - Wt
    errs = (
        np.sum(diff * diff, axis=(-1, -2)),
        np.sum(np.abs(diff), axis=(-1, -2)),
        np.max(np.abs(diff), axis=(-1, -2)),
    )
    return codes, sc, errs


def quantize_weights_2d(
    W, config: QuantConfig, alpha: Optional[float] = None, sr_tag: int = 0
) -> QuantizedTensor:
    """Quantize a 2-D weight matrix with one scale per 16x16 tile.

    Honors fixed6 / fixed4 / adaptive scale modes (the adaptive choice is
    made per tile over all 256 values). Tiles at the bottom/right edges are
    zero-padded; pad positions never influence maxima or errors.
    """
    if config.fmt != "nvfp4":
        raise ConfigError("2-D tile quantization is defined for nvfp4")
    arr = _validated(W)
    if arr.ndim != 2:
        raise InvalidInputError("weights must be 2-D")
    a = _resolve_alpha(arr, config, alpha)
    R, C = arr.shape
    TR, TC = -(-R // TILE), -(-C // TILE)
    padded = np.zeros((TR * TILE, TC * TILE))
    padded[:R, :C] = arr
    # (TR, TC, 16, 16) tile view
    Wt = padded.reshape(TR, TILE, TC, TILE).transpose(0, 2, 1, 3).copy()

    if config.scale_mode == "adaptive":
        cands = {
            m: _tile_pass(Wt, a, m, config.rounding, config.seed, sr_tag)
            for m in (6.0, 4.0)
        }
        k = {"mse": 0, "l1": 1, "absmax": 2}[config.rule]
        pick4 = cands[4.0][2][k] < cands[6.0][2][k]
        codes = np.where(pick4[..., None, None], cands[4.0][0], cands[6.0][0])
        sc_tiles = np.where(pick4, cands[4.0][1], cands[6.0][1])
    else:
        m = config.candidate_ms()[0]
        codes, sc_tiles, _ = _tile_pass(
            Wt, a, m, config.rounding, config.seed, sr_tag
        )

    full_codes = codes.transpose(0, 2, 1, 3).reshape(TR * TILE, TC * TILE)
    scale_rows = np.repeat(sc_tiles, TILE, axis=0)[:R, :]
    return QuantizedTensor(
        shape=(R, C),
        fmt="nvfp4",
        alpha=a,
        scale_codes=scale_rows.astype(np.uint8),
        codes=full_codes[:R, :C],
    )
