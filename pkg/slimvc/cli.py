"""Command-line entry point: ``slimvc <command> [options]``.

Exit codes: 0 success, 1 usage, 2 I/O, 3 format or consistency, 4 numerical.
"""

from __future__ import annotations

import argparse
import base64
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

import uvicorn
from pydantic import ValidationError

from . import __version__
from .bitstream import BitstreamContainer
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import SequenceEncoder, SlimVCModel, decode_sequence
from .config import settings
from .datasets import PATTERNS, FrameDirectoryDataset, SyntheticDataset, synthetic_mix
from .errors import SlimVCError, StorageError, UsageError
from .frames import read_frames, write_frames
from .models import CONFIG_KEYS, InspectRequest, TrainingConfig
from .profiler import bench_latency, cost_report, parse_resolution, report_csv, report_table
from .service import CodecProcessor, create_app
from .trainer import compare_independent, compare_intra, train_stage1, train_stage2

logger = logging.getLogger(__name__)

ENCODE_HEADER = ("width_factor", "frame", "type", "bits", "bpp", "mse", "psnr")
EVALUATE_HEADER = (
    "width_factor", "gop", "bpp", "mse", "psnr", "intra_bpp", "intra_mse", "intra_psnr",
    "independent_bpp", "independent_mse", "independent_psnr",
)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises :class:`UsageError` instead of exiting."""

    def error(self, message: str):
        raise UsageError(message)


def parse_config_file(path: Path | str) -> dict[str, str]:
    """UTF-8 ``key=value`` lines; ``#`` comments and blank lines are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError:
        raise UsageError(f"config {path} is not valid UTF-8") from None
    entries: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise UsageError(f"{path}:{number}: expected key=value, got '{line}'")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{number}: unknown key '{key}'")
        if key in entries:
            raise UsageError(f"{path}:{number}: duplicate key '{key}'")
        entries[key] = value
    return entries


def resolve_config(path: Path | str | None, **overrides) -> TrainingConfig:
    entries = parse_config_file(path) if path else {}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return TrainingConfig.from_entries(entries, **overrides)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}" for error in exc.errors()
        )
        raise UsageError("invalid configuration", detail=problems) from None
    except ValueError as exc:
        raise UsageError("invalid configuration", detail=str(exc)) from None


def _write_text(path: Path | str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_bytes(path: Path | str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc.strerror or exc}") from exc


def cmd_synth(args: argparse.Namespace) -> int:
    width, height = parse_resolution(args.size)
    if width < 48 or height < 48:
        raise UsageError(f"frames must be at least 48x48, got {width}x{height}")
    if args.frames < 1:
        raise UsageError("--frames must be at least 1")
    dataset = SyntheticDataset(args.pattern, args.frames, args.seed)
    paths = write_frames(args.out, dataset.clip(height, width))
    logger.info("Wrote %d %s frames of %dx%d to %s", len(paths), args.pattern, width, height, args.out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    if args.stage == 2 and not args.ckpt_in:
        raise UsageError("stage 2 needs --ckpt-in with a stage-1 checkpoint")
    model = load_checkpoint(args.ckpt_in) if args.ckpt_in else None
    preset = args.preset or (model.preset if model else None)
    config = resolve_config(args.config, stage=args.stage, preset=preset, width=args.width_idx)
    if model is None:
        model = SlimVCModel(config.preset, seed=config.seed)
    elif model.preset != config.preset:
        raise UsageError(f"checkpoint preset '{model.preset}' differs from configured '{config.preset}'")
    print("\n".join(config.resolved_lines()))

    dataset = FrameDirectoryDataset(args.data, config.seed) if args.data else synthetic_mix(config.seed)

    train = train_stage1 if args.stage == 1 else train_stage2
    result = train(model, config, dataset)
    save_checkpoint(model, args.ckpt_out)
    trace = args.trace or f"{args.ckpt_out}.trace.csv"
    result.write_trace(trace)
    logger.info("Stage %d finished: checkpoint %s, trace %s", args.stage, args.ckpt_out, trace)
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.ckpt)
    model.check_width(args.width_idx)
    frames = read_frames(args.input)
    encoder = SequenceEncoder(model, args.width_idx, args.gop)
    container = encoder.encode(frames)
    try:
        Path(args.out).write_bytes(container.to_bytes())
    except OSError as exc:
        raise StorageError(f"cannot write {args.out}: {exc.strerror or exc}") from exc

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(ENCODE_HEADER)
    for m in encoder.metrics.frames:
        writer.writerow([encoder.metrics.width_factor, m.frame, m.frame_type, m.bits,
                         repr(m.bpp), repr(m.mse), repr(m.psnr)])
    if args.metrics:
        _write_text(args.metrics, buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())
    if args.recon:
        write_frames(args.recon, encoder.reconstructions)
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    container = BitstreamContainer.from_bytes(_read_bytes(args.input))
    model = load_checkpoint(args.ckpt)
    frames = decode_sequence(container, model)
    write_frames(args.out, frames)
    logger.info("Decoded %d frames to %s", len(frames), args.out)
    return 0


def cmd_profile(args: argparse.Namespace) -> int:
    width, height = parse_resolution(args.resolution)
    report = cost_report(args.preset, width, height)
    parts = []
    if args.format in ("csv", "both"):
        parts.append(report_csv(report))
    if args.format in ("table", "both"):
        parts.append(report_table(report))
    text = "\n".join(parts)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_independent(entries: Sequence[str] | None) -> dict[int, Path]:
    """``K=CKPT`` pairs naming a checkpoint trained at width K alone."""
    models: dict[int, Path] = {}
    for entry in entries or []:
        key, sep, path = entry.partition("=")
        if not sep or not key.strip().isdigit() or not path:
            raise UsageError(f"--independent expects K=CHECKPOINT, got '{entry}'")
        k = int(key)
        if k in models:
            raise UsageError(f"--independent given twice for width {k}")
        models[k] = Path(path)
    return models


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.ckpt)
    widths = [model.check_width(k) for k in args.widths] if args.widths else None
    independent = {k: load_checkpoint(path) for k, path in _parse_independent(args.independent).items()}
    frames = read_frames(args.input)
    single = {coded.width_index: alone
              for coded, alone in compare_independent(model, independent, frames, args.gop)}
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(EVALUATE_HEADER)
    for coded, intra in compare_intra(model, frames, args.gop, widths):
        alone = single.get(coded.width_index)
        writer.writerow([coded.width_factor, coded.gop, repr(coded.bpp), repr(coded.mse), repr(coded.psnr),
                         repr(intra.bpp), repr(intra.mse), repr(intra.psnr),
                         *((repr(alone.bpp), repr(alone.mse), repr(alone.psnr)) if alone else ("", "", ""))])
    sys.stdout.write(buffer.getvalue())
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    data = _read_bytes(args.input)
    info = CodecProcessor().handle_inspect(InspectRequest(container=base64.b64encode(data).decode("ascii")))
    for key, value in info.model_dump(exclude={"frames"}).items():
        print(f"{key}={value}")
    for frame in info.frames:
        print(f"frame {frame.index}: {frame.frame_type} hyper={frame.hyper_bytes} main={frame.main_bytes}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.ckpt) if args.ckpt else SlimVCModel(args.preset)
    width, height = parse_resolution(args.resolution)
    widths = args.widths or list(range(model.widths))
    print("width_factor,encode_seconds,decode_seconds,macs_encode,macs_decode")
    for k in widths:
        report = bench_latency(model, model.check_width(k), args.frames, (width, height), args.warmup)
        print(f"{model.width_factor(k)},{report.encode_seconds:.6f},{report.decode_seconds:.6f},"
              f"{report.macs_encode},{report.macs_decode}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="slimvc", description="Slimmable neural video codec")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    synth = commands.add_parser("synth", help="write a synthetic PPM sequence")
    synth.add_argument("--pattern", choices=PATTERNS, default="translate")
    synth.add_argument("--frames", type=int, default=12)
    synth.add_argument("--size", default="96x96", help="WIDTHxHEIGHT")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, type=Path)
    synth.set_defaults(handler=cmd_synth)

    train = commands.add_parser("train", help="run one training stage")
    train.add_argument("--stage", type=int, choices=(1, 2), required=True)
    train.add_argument("--config", type=Path)
    train.add_argument("--preset", choices=("desk", "paper"))
    train.add_argument("--data", type=Path, help="frame directory (synthetic clips when omitted)")
    train.add_argument("--width-idx", type=int, help="train this width alone (an independent codec)")
    train.add_argument("--ckpt-in", type=Path)
    train.add_argument("--ckpt-out", required=True, type=Path)
    train.add_argument("--trace", type=Path, help="loss trace CSV (default: CKPT_OUT.trace.csv)")
    train.set_defaults(handler=cmd_train)

    encode = commands.add_parser("encode", help="code a frame directory into a container")
    encode.add_argument("--ckpt", required=True, type=Path)
    encode.add_argument("--width-idx", type=int, required=True)
    encode.add_argument("--gop", type=int, default=10)
    encode.add_argument("--in", dest="input", required=True, type=Path)
    encode.add_argument("--out", required=True, type=Path)
    encode.add_argument("--metrics", type=Path, help="per-frame CSV (default: stdout)")
    encode.add_argument("--recon", type=Path, help="write encoder-side reconstructions here")
    encode.set_defaults(handler=cmd_encode)

    decode = commands.add_parser("decode", help="decode a container into PPM frames")
    decode.add_argument("--ckpt", required=True, type=Path)
    decode.add_argument("--in", dest="input", required=True, type=Path)
    decode.add_argument("--out", required=True, type=Path)
    decode.set_defaults(handler=cmd_decode)

    profile = commands.add_parser("profile", help="parameter/MAC cost report")
    profile.add_argument("--preset", choices=("desk", "paper"), default=settings.default_preset)
    profile.add_argument("--resolution", default="1920x1080", help="WIDTHxHEIGHT")
    profile.add_argument("--format", choices=("csv", "table", "both"), default="both")
    profile.add_argument("--out", type=Path)
    profile.set_defaults(handler=cmd_profile)

    evaluate = commands.add_parser("evaluate", help="GOP vs intra-only rate and distortion per width")
    evaluate.add_argument("--ckpt", required=True, type=Path)
    evaluate.add_argument("--in", dest="input", required=True, type=Path)
    evaluate.add_argument("--gop", type=int, default=10)
    evaluate.add_argument("--widths", type=int, nargs="+")
    evaluate.add_argument("--independent", action="append", metavar="K=CKPT",
                          help="checkpoint trained at width K alone, compared at that width")
    evaluate.set_defaults(handler=cmd_evaluate)

    inspect_cmd = commands.add_parser("inspect", help="print a container header")
    inspect_cmd.add_argument("input", type=Path)
    inspect_cmd.set_defaults(handler=cmd_inspect)

    bench = commands.add_parser("bench", help="median per-frame latency per width")
    bench.add_argument("--ckpt", type=Path)
    bench.add_argument("--preset", choices=("desk", "paper"), default=settings.default_preset)
    bench.add_argument("--widths", type=int, nargs="+")
    bench.add_argument("--frames", type=int, default=settings.bench_frames)
    bench.add_argument("--warmup", type=int, default=settings.bench_warmup)
    bench.add_argument("--resolution", default="48x48", help="WIDTHxHEIGHT")
    bench.set_defaults(handler=cmd_bench)

    serve = commands.add_parser("serve", help="run the HTTP profiling service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        level = logging.DEBUG if args.verbose else settings.log_level
        logging.basicConfig(level=level, format=settings.log_format)
        return args.handler(args)
    except SlimVCError as exc:
        message = exc.message if not exc.detail else f"{exc.message}: {exc.detail.splitlines()[0]}"
        print(f"slimvc: error: {message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
