"""Command-line interface: file-in, report-out.

Exit codes: 0 success, 1 usage, 2 I/O, 3 data/format, 4 invalid config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from . import __version__
from .adaptive import quantize_tensor_adaptive, selection_stats
from .analysis import (
    DEFAULT_THRESHOLDS,
    ablation_report,
    compare_formats,
    error_curve,
    threshold_sweep,
)
from .blockquant import (
    QuantConfig,
    dequantize_tensor,
    quantize_tensor,
    reconstruction_mse,
)
from .errors import ConfigError, FormatError, InvalidInputError
from .qlinear import linear_dgrad, linear_forward, linear_wgrad
from .tensor_io import read_quantized, read_tensor, write_quantized, write_tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_CONFIG = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which collides with the I/O code.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_from(args, allow_adaptive=True) -> QuantConfig:
    mode = {"6": "fixed6", "4": "fixed4", "adaptive": "adaptive"}[args.mode]
    if mode == "adaptive" and not allow_adaptive:
        raise ConfigError("adaptive mode is not valid here")
    return QuantConfig(
        fmt=args.format,
        scale_mode=mode,
        rule=args.rule,
        rounding=args.round,
        seed=args.seed,
    )


def _quantize_any(X, config, alpha=None):
    if config.scale_mode == "adaptive":
        return quantize_tensor_adaptive(X, config, alpha=alpha)
    return quantize_tensor(X, config, alpha=alpha)


def _cmd_quantize(args) -> int:
    X = read_tensor(args.input).astype(np.float64)
    config = _config_from(args)
    q = _quantize_any(X, config, alpha=args.alpha)
    write_quantized(args.output, q)
    mse = reconstruction_mse(X, dequantize_tensor(q))
    if config.scale_mode == "adaptive":
        stats = selection_stats(X, config, alpha=args.alpha)
        frac4 = stats.fraction_4[config.rule]
    else:
        frac4 = 1.0 if config.scale_mode == "fixed4" else 0.0
    print(f"alpha       {q.alpha:.9e}")
    print(f"blocks      {q.num_blocks}")
    print(f"fraction_4  {frac4:.6f}")
    print(f"mse         {mse:.9e}")
    return EXIT_OK


def _cmd_dequantize(args) -> int:
    q = read_quantized(args.input)
    D = dequantize_tensor(q)
    write_tensor(args.output, D, dtype="f32")
    print(f"shape       {'x'.join(str(d) for d in q.shape)}")
    print(f"format      {q.fmt}")
    return EXIT_OK


def _report_rows(name: str, payload) -> tuple[list[str], list[tuple]]:
    """(csv header, csv rows) for one report."""
    if name == "curve":
        header = ["m", "v", "relative_error"]
        rows = [(m, float(v), float(e)) for m, pts in payload for v, e in pts]
    elif name == "threshold_sweep":
        header = ["threshold", "mse"]
        rows = [(float(x), float(v)) for x, v in payload]
    elif name == "ablation":
        header = ["mode", "mse"]
        rows = [
            ("full", payload["mse_full"]),
            ("hp_scales", payload["mse_hp_scales"]),
            ("hp_values", payload["mse_hp_values"]),
        ]
    else:  # compare
        header = ["format", "mse"]
        rows = [
            (k, v)
            for k, v in payload.items()
            if k != "dominance_ok" and v is not None
        ]
    return header, rows


def _emit_csv(out, name, payload):
    header, rows = _report_rows(name, payload)
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(str(c) for c in row) + "\n")


def _emit_table(out, name, payload):
    header, rows = _report_rows(name, payload)
    out.write(f"[{name}]\n")
    widths = [
        max(len(str(h)), max((len(str(r[i])) for r in rows), default=0))
        for i, h in enumerate(header)
    ]
    out.write("  ".join(h.ljust(w) for h, w in zip(header, widths)) + "\n")
    for row in rows:
        out.write("  ".join(str(c).ljust(w) for c, w in zip(row, widths)) + "\n")
    out.write("\n")


def _cmd_analyze(args) -> int:
    X = read_tensor(args.input).astype(np.float64)
    config = QuantConfig(seed=args.seed)
    reports = {}
    if args.curve:
        reports["curve"] = [(6, error_curve(6.0)), (4, error_curve(4.0))]
    if args.ablation:
        reports["ablation"] = ablation_report(X, config, alpha=args.alpha)
    if args.threshold_sweep:
        reports["threshold_sweep"] = threshold_sweep(
            X, DEFAULT_THRESHOLDS, config, alpha=args.alpha
        )
    if args.compare:
        reports["compare"] = compare_formats(X, alpha=args.alpha, seed=args.seed)
    if not reports:
        raise ConfigError(
            "choose at least one of --curve --ablation --threshold-sweep --compare"
        )

    def to_jsonable(name, payload):
        if name == "curve":
            return [
                {"m": m, "v": float(v), "relative_error": float(e)}
                for m, pts in payload
                for v, e in pts
            ]
        if name == "threshold_sweep":
            return [{"threshold": float(x), "mse": float(v)} for x, v in payload]
        return payload

    if args.out_format == "json":
        doc = {
            "schema": 1,
            "reports": {k: to_jsonable(k, v) for k, v in reports.items()},
        }
        text = json.dumps(doc, indent=2) + "\n"
    elif args.out_format == "csv":
        if len(reports) != 1:
            raise ConfigError("csv output takes exactly one report flag")
        import io

        sink = io.StringIO()
        name = next(iter(reports))
        _emit_csv(sink, name, reports[name])
        text = sink.getvalue()
    else:
        import io

        sink = io.StringIO()
        for name, payload in reports.items():
            _emit_table(sink, name, payload)
        text = sink.getvalue()

    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_size(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3 or not all(p.isdigit() and int(p) > 0 for p in parts):
        raise ConfigError("--size must look like 64x64x64")
    return tuple(int(p) for p in parts)


def _sha(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def _cmd_bench(args) -> int:
    M, N, K = _parse_size(args.size)
    config = _config_from(args)
    rng = np.random.Generator(np.random.Philox(args.seed))
    x = rng.standard_normal((M, K))
    W = rng.standard_normal((N, K))
    dy = rng.standard_normal((M, N))

    y = linear_forward(x, W, config)
    oracle_y = x @ W.T
    dx = linear_dgrad(dy, W, config)
    oracle_dx = dy @ W
    lines = [
        ("size", args.size),
        ("seed", str(args.seed)),
        ("mode", args.mode),
        ("round", args.round),
        ("fprop_rel_err", f"{_rel(y, oracle_y):.6e}"),
        ("dgrad_rel_err", f"{_rel(dx, oracle_dx):.6e}"),
        ("fprop_sha", _sha(y)),
        ("dgrad_sha", _sha(dx)),
    ]
    if M % 16 == 0:
        dW = linear_wgrad(dy, x, config)
        lines.append(("wgrad_rel_err", f"{_rel(dW, dy.T @ x):.6e}"))
        lines.append(("wgrad_sha", _sha(dW)))

    quant_elems = max(M * K, 1 << 16) // 256 * 256
    data = rng.standard_normal(quant_elems).reshape(-1, 256)
    t0 = time.perf_counter()
    quantize_tensor(data, QuantConfig(scale_mode="fixed6", seed=args.seed))
    t_fixed = time.perf_counter() - t0
    t0 = time.perf_counter()
    quantize_tensor_adaptive(
        data, QuantConfig(scale_mode="adaptive", seed=args.seed)
    )
    t_adaptive = time.perf_counter() - t0
    lines.append(("time_fixed6_s", f"{t_fixed:.4f}"))
    lines.append(("time_adaptive_s", f"{t_adaptive:.4f}"))
    lines.append(("time_adaptive_over_fixed6", f"{t_adaptive / t_fixed:.3f}"))
    for key, val in lines:
        print(f"{key:<26}{val}")
    return EXIT_OK


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / denom) if denom else 0.0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fp4emu", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_quant_flags(p, with_alpha=True):
        p.add_argument("--format", choices=["nvfp4", "mxfp4"], default="nvfp4")
        p.add_argument("--mode", choices=["6", "4", "adaptive"], default="6")
        p.add_argument("--rule", choices=["mse", "l1", "absmax"], default="mse")
        p.add_argument("--round", choices=["rne", "sr"], default="rne")
        p.add_argument("--seed", type=int, default=0)
        if with_alpha:
            p.add_argument(
                "--alpha",
                type=float,
                default=None,
                help="override the computed tensor scale",
            )

    q = sub.add_parser("quantize", parents=[], help="FQT1 tensor -> NVF4 container")
    q.add_argument("input")
    q.add_argument("output")
    add_quant_flags(q)
    q.set_defaults(func=_cmd_quantize)

    d = sub.add_parser("dequantize", help="NVF4 container -> FQT1 tensor")
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(func=_cmd_dequantize)

    a = sub.add_parser("analyze", help="error reports over a FQT1 tensor")
    a.add_argument("input")
    a.add_argument("--curve", action="store_true")
    a.add_argument("--ablation", action="store_true")
    a.add_argument("--threshold-sweep", action="store_true")
    a.add_argument("--compare", action="store_true")
    a.add_argument(
        "--out-format", choices=["table", "csv", "json"], default="table"
    )
    a.add_argument("--out", default=None, help="write the report to a file")
    a.add_argument("--alpha", type=float, default=None)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=_cmd_analyze)

    b = sub.add_parser("bench", help="linear-layer emulation benchmark")
    b.add_argument("--size", default="64x64x64", help="MxNxK")
    add_quant_flags(b, with_alpha=False)
    b.set_defaults(func=_cmd_bench)
    b.set_defaults(mode="adaptive")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except OSError as exc:
        print(f"fp4emu: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FormatError as exc:
        print(f"fp4emu: format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidInputError as exc:
        print(f"fp4emu: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"fp4emu: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
