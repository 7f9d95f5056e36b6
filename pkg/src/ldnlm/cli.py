"""``ldnlm`` command-line interface.

stdout carries machine-readable output (CSV or one JSON document); logs go to
stderr.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .attention import attention_linear, attention_softmax
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, DegenerateError, FormatError, NumericError, ParameterError, ShapeError
from .metrics import Region, no_reference_report, reference_report
from .model import MODES, denoise_image, export_embeddings, peak_memory_estimate
from .nlm import NlmConfig, nlm_denoise, resolve_h
from .raster import default_peak, read_raster, save_ldnr, write_raster
from .speckle import NoiseSpec, make_rng, synthesize_speckled, synthetic_textures
from .training import TrainConfig, train

log = logging.getLogger("ldnlm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RASTER_SUFFIXES = (".png", ".ldnr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _size_list(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(sizes) < 2 or min(sizes) < 1:
        raise argparse.ArgumentTypeError("need at least two positive sizes for a scaling fit")
    return sizes


def _emit_json(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _write_sidecar(output: Path, doc: dict) -> Path:
    side = output.with_name(output.name + ".json")
    side.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return side


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    src = Path(args.input)
    clean, _ = read_raster(src)
    noisy = synthesize_speckled(clean, NoiseSpec(args.looks, args.seed))
    out = Path(args.output)
    write_raster(out, noisy)
    doc = {"input": str(src), "input_sha256": _sha256(src), "looks": args.looks, "seed": args.seed,
           "output": str(out), "height": noisy.shape[0], "width": noisy.shape[1]}
    _write_sidecar(out, doc)
    _emit_json(doc)
    return EXIT_OK


def _load_dataset(directory: Path) -> list[np.ndarray]:
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)
    if not files:
        raise FormatError(f"no .png or .ldnr images in {directory}")
    return [read_raster(p)[0] for p in files]


def cmd_train(args) -> int:
    tc = TrainConfig.from_json(args.config)
    if args.seed is not None:
        tc = TrainConfig.from_dict({**tc.to_dict(), "seed": args.seed})
    if args.strict_deterministic:
        tc = TrainConfig.from_dict({**tc.to_dict(), "strict_deterministic": True})
    if args.synthetic:
        images = synthetic_textures(args.synthetic, args.synthetic_size, seed=tc.seed)
    else:
        images = _load_dataset(Path(args.data))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["step", "train_loss", "val_mse"])

    def on_log(step, loss, val):
        writer.writerow([step, "" if math.isnan(loss) else f"{loss:.6g}", "" if math.isnan(val) else f"{val:.6g}"])
        sys.stdout.flush()

    t0 = time.perf_counter()
    result = train(tc, images, on_log=on_log, checkpoint_path=args.out)
    save_checkpoint(args.out, result.params, result.config, meta={"step": tc.steps, "train": tc.to_dict()})
    log.info("trained %d steps in %.1fs; validation MSE %.4g -> %.4g", tc.steps, time.perf_counter() - t0,
             result.initial_val_mse, result.final_val_mse)
    return EXIT_OK


def cmd_denoise(args) -> int:
    params, config = load_checkpoint(args.ckpt)
    image, _ = read_raster(args.input)
    mode = args.mode or config.attention_mode
    t0 = time.perf_counter()
    out = denoise_image(image, params, config, stride=args.stride, mode=mode, threads=args.threads)
    elapsed = time.perf_counter() - t0
    dest = Path(args.output)
    write_raster(dest, out)
    doc = {"input": str(args.input), "output": str(dest), "mode": mode,
           "stride": args.stride or config.window_side, "threads": args.threads, "seconds": round(elapsed, 6),
           "peak_memory_estimate_bytes": peak_memory_estimate(config, mode), "backend": backend_name(),
           "height": out.shape[0], "width": out.shape[1]}
    _write_sidecar(dest, doc)
    _emit_json(doc)
    return EXIT_OK


def cmd_nlm(args) -> int:
    image, _ = read_raster(args.input)
    cfg = NlmConfig(search_radius=args.search_radius, patch_radius=args.patch_radius, h=args.h, looks=args.looks)
    t0 = time.perf_counter()
    out = nlm_denoise(image, cfg)
    dest = Path(args.output)
    write_raster(dest, out)
    _emit_json({"input": str(args.input), "output": str(dest), "search_radius": cfg.search_radius,
                "patch_radius": cfg.patch_radius, "h": resolve_h(image, cfg),
                "seconds": round(time.perf_counter() - t0, 6), "backend": backend_name()})
    return EXIT_OK


def _read_regions(path) -> list[Region]:
    try:
        doc = json.loads(Path(path).read_text())
        return [Region(str(r["name"]), int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"])) for r in doc["regions"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid regions file {path}: {exc}") from None


def cmd_eval(args) -> int:
    with_ref = args.reference is not None or args.test is not None
    no_ref = args.noisy is not None or args.denoised is not None
    if with_ref and no_ref:
        raise UsageError("eval: choose either --reference/--test or --noisy/--denoised, not both")
    if with_ref:
        if args.reference is None or args.test is None:
            raise UsageError("eval: --reference and --test go together")
        ref, kind = read_raster(args.reference)
        test, _ = read_raster(args.test)
        report = reference_report(ref, test, args.peak or default_peak(ref, kind))
    elif no_ref:
        if args.noisy is None or args.denoised is None:
            raise UsageError("eval: --noisy and --denoised go together")
        noisy, _ = read_raster(args.noisy)
        den, _ = read_raster(args.denoised)
        regions = _read_regions(args.regions) if args.regions else []
        report = no_reference_report(noisy, den, args.looks, regions)
    else:
        raise UsageError("eval: give --reference/--test or --noisy/--denoised")
    sys.stdout.write(report.to_csv() if args.format == "csv" else report.to_text() + "\n")
    return EXIT_OK


def _fit_slope(ns, values) -> float:
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def run_bench(sizes, dk: int, modes, repeats: int, seed: int = 0) -> list[dict]:
    rows = []
    for mode in modes:
        fn = attention_linear if mode == "linear" else attention_softmax
        for n in sizes:
            rng = make_rng(seed, n, dk)
            q, k, v = (rng.standard_normal((n, dk)).astype(np.float32) for _ in range(3))
            fn(q[:2], k[:2], v[:2])  # compile / warm up
            best, flops = None, None
            for _ in range(repeats):
                t0 = time.perf_counter_ns()
                _, count = fn(q, k, v, return_flops=True)
                dt = time.perf_counter_ns() - t0
                best = dt if best is None else min(best, dt)
                if flops is not None and count != flops:
                    raise NumericError(f"FLOP counter changed between repeats ({flops} vs {count})")
                flops = count
            rows.append({"mode": mode, "N": n, "d_k": dk, "wall_ns": best, "flop_count": flops})
    return rows


def bench_slopes(rows) -> dict[str, tuple[float, float]]:
    out = {}
    for mode in dict.fromkeys(r["mode"] for r in rows):
        sub = [r for r in rows if r["mode"] == mode]
        ns = [r["N"] for r in sub]
        out[mode] = (_fit_slope(ns, [r["wall_ns"] for r in sub]), _fit_slope(ns, [r["flop_count"] for r in sub]))
    return out


def cmd_bench(args) -> int:
    modes = list(MODES) if args.mode == "both" else [args.mode]
    rows = run_bench(args.sizes, args.dk, modes, args.repeats, args.seed)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["mode", "N", "d_k", "wall_ns", "flop_count"])
    for r in rows:
        writer.writerow([r["mode"], r["N"], r["d_k"], r["wall_ns"], r["flop_count"]])
    for mode, (wall, flop) in bench_slopes(rows).items():
        writer.writerow([f"{mode}_fit", "slope", args.dk, f"{wall:.4f}", f"{flop:.4f}"])
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    params, config = load_checkpoint(args.ckpt)
    image, _ = read_raster(args.input)
    side = config.window_side
    if image.shape[0] < side or image.shape[1] < side:
        raise ShapeError(f"image {image.shape} is smaller than the {side}x{side} search window")
    r = (image.shape[0] - side) // 2 if args.row is None else args.row
    c = (image.shape[1] - side) // 2 if args.col is None else args.col
    if not (0 <= r <= image.shape[0] - side and 0 <= c <= image.shape[1] - side):
        raise ShapeError(f"window at ({r}, {c}) does not fit inside image {image.shape}")
    tokens = export_embeddings(image[r:r + side, c:c + side], params, config, args.layer, args.mode)
    save_ldnr(args.output, tokens)
    _emit_json({"output": str(args.output), "layer": args.layer, "row": r, "col": c,
                "tokens": tokens.shape[0], "channels": tokens.shape[1], "format": "LDNR"})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ldnlm", description="Linear-attention deep nonlocal means despeckling.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="apply multiplicative gamma speckle to a clean image")
    s.add_argument("--input", required=True)
    s.add_argument("--looks", type=_positive_float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on synthesized speckle pairs")
    s.add_argument("--config", required=True, help="train.json")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of clean .png/.ldnr images")
    src.add_argument("--synthetic", type=_positive_int, help="train on N generated textures instead")
    s.add_argument("--synthetic-size", type=_positive_int, default=64)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.add_argument("--strict-deterministic", action="store_true", help="disable the batch prefetcher")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="denoise an image with a trained checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--mode", choices=MODES, default=None)
    s.add_argument("--stride", type=_positive_int, default=None)
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("nlm", help="classic non-local means baseline")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--search-radius", type=_positive_int, default=NlmConfig.search_radius)
    s.add_argument("--patch-radius", type=int, default=NlmConfig.patch_radius)
    s.add_argument("--h", type=_positive_float, default=None, help="bandwidth (default: from --looks)")
    s.add_argument("--looks", type=_positive_float, default=1.0)
    s.set_defaults(func=cmd_nlm)

    s = sub.add_parser("eval", help="quality metrics as CSV")
    s.add_argument("--reference")
    s.add_argument("--test")
    s.add_argument("--noisy")
    s.add_argument("--denoised")
    s.add_argument("--looks", type=_positive_float, default=1.0)
    s.add_argument("--regions", help="regions.json with homogeneous ENL rectangles")
    s.add_argument("--peak", type=_positive_float, default=None)
    s.add_argument("--format", choices=("csv", "text"), default="csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="attention scaling benchmark")
    s.add_argument("--sizes", type=_size_list, default=[1024, 2048, 4096, 8192])
    s.add_argument("--dk", type=_positive_int, default=8)
    s.add_argument("--mode", choices=("both",) + MODES, default="both")
    s.add_argument("--repeats", type=_positive_int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("dump-embeddings", help="export token activations of one window")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--layer", type=int, default=1)
    s.add_argument("--row", type=int, default=None, help="window top row (default: centered)")
    s.add_argument("--col", type=int, default=None, help="window left column (default: centered)")
    s.add_argument("--mode", choices=MODES, default=None)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_dump_embeddings)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (NumericError, DegenerateError) as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC
    except (ParameterError, ContractError) as exc:
        log.error("invalid argument: %s", exc)
        return EXIT_USAGE
    except (FormatError, ShapeError, OSError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
