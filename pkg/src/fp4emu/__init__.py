"""Bit-exact software emulation of FP4 block-scaled quantization.

Covers the FP4/FP8 scalar codecs, block quantization with fixed or
per-block-adaptive scaling targets, randomized Hadamard transforms,
emulated quantized linear layers, error analyses, and a binary wire
format, with a file-in report-out CLI on top.
"""

from .adaptive import (
    SelectionStats,
    quantize_block_adaptive,
    quantize_tensor_adaptive,
    selection_stats,
)
from .analysis import (
    DEFAULT_THRESHOLDS,
    ablation_report,
    compare_formats,
    error_curve,
    threshold_sweep,
)
from .blockquant import (
    MXFP4_BLOCK,
    NVFP4_BLOCK,
    BlockQuantResult,
    QuantConfig,
    QuantizedTensor,
    compute_block_scale,
    compute_tensor_scale,
    dequantize_tensor,
    quantize_block,
    quantize_tensor,
    quantize_tensor_simulated,
    reconstruction_mse,
)
from .codecs import (
    E4M3_MAX,
    FP4_MAX,
    decode_fp4,
    decode_fp8_e4m3,
    decode_fp8_e8m0,
    encode_fp4_rne,
    encode_fp4_stochastic,
    encode_fp8_e4m3,
    encode_fp8_e8m0,
)
from .errors import (
    BadMagicError,
    ConfigError,
    FormatError,
    InvalidInputError,
    QuantError,
    TruncatedFileError,
    UnsupportedDtypeError,
)
from .qlinear import (
    emulated_fp4_matmul,
    linear_dgrad,
    linear_forward,
    linear_wgrad,
    round_to_bf16,
)
from .tensor_io import (
    read_quantized,
    read_tensor,
    write_quantized,
    write_tensor,
)
from .transforms import RhtSpec, apply_rht, invert_rht, quantize_weights_2d

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BadMagicError",
    "BlockQuantResult",
    "ConfigError",
    "DEFAULT_THRESHOLDS",
    "E4M3_MAX",
    "FP4_MAX",
    "FormatError",
    "InvalidInputError",
    "MXFP4_BLOCK",
    "NVFP4_BLOCK",
    "QuantConfig",
    "QuantError",
    "QuantizedTensor",
    "RhtSpec",
    "SelectionStats",
    "TruncatedFileError",
    "UnsupportedDtypeError",
    "ablation_report",
    "apply_rht",
    "compare_formats",
    "compute_block_scale",
    "compute_tensor_scale",
    "decode_fp4",
    "decode_fp8_e4m3",
    "decode_fp8_e8m0",
    "dequantize_tensor",
    "emulated_fp4_matmul",
    "encode_fp4_rne",
    "encode_fp4_stochastic",
    "encode_fp8_e4m3",
    "encode_fp8_e8m0",
    "error_curve",
    "invert_rht",
    "linear_dgrad",
    "linear_forward",
    "linear_wgrad",
    "quantize_block",
    "quantize_block_adaptive",
    "quantize_tensor",
    "quantize_tensor_adaptive",
    "quantize_tensor_simulated",
    "quantize_weights_2d",
    "read_quantized",
    "read_tensor",
    "reconstruction_mse",
    "round_to_bf16",
    "selection_stats",
    "threshold_sweep",
    "write_quantized",
    "write_tensor",
]
