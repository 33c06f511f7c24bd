"""Per-block adaptive choice between block-max targets 6 and 4.

Every block is quantized twice, once scaling its maximum toward 6 (the full
FP4 range) and once toward 4 (a coarser max but a finer grid for the rest
of the block). The candidate with the strictly smaller error under the
configured rule wins; ties keep the 6 candidate. The chosen target is
absorbed into the stored block scale, so the container format is unchanged
and the decoder never learns which target was used.

The tensor scale uses cap 256 instead of 448 so the 4-target scale of the
block holding the tensor max (256 * 6/4 = 384) still fits E4M3.

Stochastic rounding draws an independent deterministic substream per
candidate, keyed by (seed, stream tag, target m) with block i consuming
lanes [16i, 16(i+1)); selection then compares realized errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .blockquant import (
    BlockQuantResult,
    QuantConfig,
    QuantizedTensor,
    _blockify,
    _block_error_sums,
    _cast_values,
    _fixed_pass,
    _nvfp4_scales,
    _real_counts,
    _resolve_alpha,
    _strip_pad,
    _validated,
)
from .errors import ConfigError, InvalidInputError

__all__ = [
    "quantize_block_adaptive",
    "quantize_tensor_adaptive",
    "SelectionStats",
    "selection_stats",
]

_RULE_INDEX = {"mse": 0, "l1": 1, "absmax": 2}


def _require_adaptive(config: QuantConfig):
    if config.fmt != "nvfp4":
        raise ConfigError("adaptive mode requires the nvfp4 format")
    if config.scale_mode != "adaptive":
        raise ConfigError("config.scale_mode must be 'adaptive'")
    if config.sim_hp_scales or config.sim_hp_values or config.threshold is not None:
        raise ConfigError("simulation knobs require quantize_tensor_simulated")


def _dual_pass(Xb, alpha, config: QuantConfig, sr_tag: int):
    """Both candidate passes plus per-block error sums for all three rules."""
    out = {}
    for m in (6.0, 4.0):
        codes, sc, sdec, deq = _fixed_pass(
            Xb, alpha, m, "nvfp4", config.rounding, config.seed, sr_tag
        )
        sq, ab, mx = _block_error_sums(Xb, deq)
        out[m] = {
            "codes": codes,
            "sc": sc,
            "deq": deq,
            "errs": (sq, ab, mx),
        }
    return out


def _select(out, rule: str) -> np.ndarray:
    """True where the 4 candidate strictly beats the 6 candidate."""
    k = _RULE_INDEX[rule]
    return out[4.0]["errs"][k] < out[6.0]["errs"][k]


def quantize_tensor_adaptive(
    X, config: QuantConfig, alpha: Optional[float] = None, sr_tag: int = 0
) -> QuantizedTensor:
    """Adaptively quantized container; selection metadata is not stored."""
    _require_adaptive(config)
    arr = _validated(X)
    a = _resolve_alpha(arr, config, alpha)
    Xb, last = _blockify(arr, config.block_size)
    out = _dual_pass(Xb, a, config, sr_tag)
    pick4 = _select(out, config.rule)
    codes = np.where(pick4[..., None], out[4.0]["codes"], out[6.0]["codes"])
    sc = np.where(pick4, out[4.0]["sc"], out[6.0]["sc"])
    return QuantizedTensor(
        shape=arr.shape,
        fmt="nvfp4",
        alpha=a,
        scale_codes=sc,
        codes=_strip_pad(codes, arr.shape, last),
    )


def quantize_block_adaptive(
    block,
    alpha: float,
    rule: str = "mse",
    rounding: str = "rne",
    u6=None,
    u4=None,
) -> BlockQuantResult:
    """Adaptive quantization of a single block (explicit uniforms under SR)."""
    if rule not in _RULE_INDEX:
        raise ConfigError(f"unknown rule {rule!r}")
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("block must be a non-empty 1-D array")
    if not np.isfinite(arr).all():
        raise InvalidInputError("block must be finite")
    n = arr.size
    Xb = arr.reshape(1, 1, -1)
    candidates = {}
    for m, u in ((6.0, u6), (4.0, u4)):
        if rounding == "sr":
            if u is None:
                raise InvalidInputError("stochastic rounding requires uniforms")
            u = np.asarray(u, dtype=np.float64).reshape(1, 1, -1)
            if u.size != n:
                raise InvalidInputError("uniforms must match the block length")
        bmax = np.max(np.abs(Xb), axis=-1)
        sc, sdec = _nvfp4_scales(bmax, alpha, m)
        codes, deq = _cast_values(Xb, alpha, sdec, rounding, u)
        diff = (deq - Xb).reshape(-1)
        candidates[m] = BlockQuantResult(
            codes=codes.reshape(-1),
            scale_code=int(sc[0, 0]),
            chosen_m=int(m),
            err_mse=float(np.sum(diff * diff) / n),
            err_l1=float(np.sum(np.abs(diff)) / n),
            err_max=float(np.max(np.abs(diff))),
            dequant=deq.reshape(-1),
        )
    key = {"mse": "err_mse", "l1": "err_l1", "absmax": "err_max"}[rule]
    a6 = getattr(candidates[6.0], key)
    a4 = getattr(candidates[4.0], key)
    return candidates[4.0] if a4 < a6 else candidates[6.0]


@dataclass
class SelectionStats:
    """How often each rule prefers the 4 target, and at what cost."""

    n_blocks: int
    fraction_4: dict  # rule -> fraction of blocks choosing the 4 target
    disagreements: dict  # rule-pair -> number of blocks where picks differ
    aggregate_mse: dict  # rule -> whole-tensor reconstruction MSE


def selection_stats(
    X, config: QuantConfig, alpha: Optional[float] = None, sr_tag: int = 0
) -> SelectionStats:
    _require_adaptive(config)
    arr = _validated(X)
    a = _resolve_alpha(arr, config, alpha)
    Xb, last = _blockify(arr, config.block_size)
    out = _dual_pass(Xb, a, config, sr_tag)
    nblocks = int(Xb.shape[0] * Xb.shape[1])
    counts = np.tile(
        _real_counts(last, Xb.shape[1], Xb.shape[2]), (Xb.shape[0], 1)
    )
    picks = {rule: _select(out, rule) for rule in _RULE_INDEX}
    frac = {rule: float(np.mean(p)) for rule, p in picks.items()}
    pairs = (("mse", "l1"), ("mse", "absmax"), ("l1", "absmax"))
    disagree = {
        f"{r1}_vs_{r2}": int(np.sum(picks[r1] != picks[r2])) for r1, r2 in pairs
    }
    total = int(np.sum(counts))
    agg = {}
    for rule, p in picks.items():
        sq = np.where(p, out[4.0]["errs"][0], out[6.0]["errs"][0])
        agg[rule] = float(np.sum(sq) / total)
    return SelectionStats(
        n_blocks=nblocks,
        fraction_4=frac,
        disagreements=disagree,
        aggregate_mse=agg,
    )
