"""Command-line entry point: compress / decompress / eval / train / baseline.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .checkpoint import CheckpointError
from .codec import (
    UPSAMPLERS, CodecError, ConfigurationError, ContainerError, compress, decompress, load_image,
    read_container, save_image, serialize, write_container,
)
from .data import load_corpus
from .evaluate import BUILTIN_METHODS, csv_text, evaluate, format_table, summary_json
from .metrics import evaluate_pair
from .train import NonFiniteLossError, TrainConfig, read_config_file, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


def _build_parser() -> _Parser:
    parser = _Parser(prog="rlsrgan", description="Downsample-and-super-resolve image compression toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="downsample and encode an image into a container")
    p.add_argument("input")
    p.add_argument("--factor", type=int, default=4, choices=(2, 4, 8))
    p.add_argument("--quality", type=int, default=75)
    p.add_argument("--codec", default="jpeg", choices=("jpeg", "png"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("decompress", help="reconstruct an image from a container")
    p.add_argument("input")
    p.add_argument("--upsampler", default="lanczos", choices=UPSAMPLERS)
    p.add_argument("--model")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate reconstruction methods over an image directory")
    p.add_argument("corpus")
    p.add_argument("--split", default="valid")
    p.add_argument("--methods", default="lanczos,nearest")
    p.add_argument("--factor", type=int, default=4, choices=(2, 4, 8))
    p.add_argument("--quality", type=int, default=75)
    p.add_argument("--codec", default="jpeg", choices=("jpeg", "png"))
    p.add_argument("--model")
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the generator (procedural corpus when no directory is given)")
    p.add_argument("corpus", nargs="?")
    p.add_argument("--split", default="train")
    p.add_argument("--config")
    p.add_argument("--factor", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--k-window", type=int)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="newline-delimited JSON loss log path")

    p = sub.add_parser("baseline", help="downsample an image and score a non-learned upsampler")
    p.add_argument("input")
    p.add_argument("--factor", type=int, default=4, choices=(2, 4, 8))
    p.add_argument("--quality", type=int, default=75)
    p.add_argument("--codec", default="jpeg", choices=("jpeg", "png"))
    p.add_argument("--upsampler", default="lanczos", choices=("lanczos", "bicubic", "nearest"))
    p.add_argument("--out")
    return parser


def _print_config(values: Dict[str, object]) -> None:
    sys.stderr.write("# effective config\n")
    for key in sorted(values):
        sys.stderr.write(f"{key}={values[key]}\n")


def _cmd_compress(args) -> int:
    _print_config({"factor": args.factor, "quality": args.quality, "codec": args.codec, "out": args.out})
    container = compress(load_image(args.input), args.factor, args.quality, args.codec)
    write_container(args.out, container)
    print(f"{args.out}: {len(serialize(container))} bytes")
    return EXIT_OK


def _cmd_decompress(args) -> int:
    _print_config({"upsampler": args.upsampler, "model": args.model, "out": args.out})
    if args.upsampler == "model" and not args.model:
        raise ConfigurationError("--upsampler model requires --model CHECKPOINT")
    container = read_container(args.input)
    model = args.model if args.upsampler == "model" else None
    save_image(args.out, decompress(container, args.upsampler, model))
    print(f"{args.out}: {container.orig_width}x{container.orig_height}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in BUILTIN_METHODS]
    if bad or not methods:
        raise UsageError(f"--methods: unknown method(s) {', '.join(bad) or '(none)'}", _usage("eval"))
    if "model" in methods and not args.model:
        raise ConfigurationError("--methods model requires --model CHECKPOINT")
    _print_config({"methods": ",".join(methods), "factor": args.factor, "quality": args.quality,
                   "codec": args.codec, "model": args.model, "format": args.format, "split": args.split,
                   "out": args.out})
    corpus = load_corpus(args.corpus, args.split)
    result = evaluate(corpus, methods, args.factor, args.quality, args.model, args.codec)
    text = csv_text(result.rows) if args.format == "csv" else summary_json(result.summary)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(format_table(result.summary))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_train(args) -> int:
    values: Dict[str, object] = read_config_file(args.config) if args.config else {}
    overrides = {"r": args.factor, "seed": args.seed, "iters": args.iters, "gamma": args.gamma,
                 "k_window": args.k_window, "checkpoint_path": args.out, "log_path": args.log}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = TrainConfig.from_mapping(values)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc), _usage("train")) from exc
    _print_config(config.as_dict())
    corpus = load_corpus(args.corpus, args.split) if args.corpus else None
    result = train(config, corpus, progress=True)
    last = result.reports[-1]
    print(f"trained {config.iters} iterations; final l_mse={last['l_mse']:.6f} "
          f"psnr={last['measured_psnr']:.3f} rl_applications={result.rl_applications}")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    _print_config({"factor": args.factor, "quality": args.quality, "codec": args.codec,
                   "upsampler": args.upsampler, "out": args.out})
    image = load_image(args.input)
    container = compress(image, args.factor, args.quality, args.codec)
    rec = decompress(container, args.upsampler)
    scores = evaluate_pair(image, rec)
    if args.out:
        save_image(args.out, rec)
    print(f"method={args.upsampler} psnr_db={scores.psnr_db:.4f} ms_ssim={scores.ms_ssim:.4f} "
          f"bytes_compressed={len(serialize(container))}")
    return EXIT_OK


_COMMANDS = {"compress": _cmd_compress, "decompress": _cmd_decompress, "eval": _cmd_eval,
             "train": _cmd_train, "baseline": _cmd_baseline}


def _usage(command: Optional[str] = None) -> str:
    parser = _build_parser()
    if command is None:
        return parser.format_usage()
    return f"usage: rlsrgan {command} ... (see rlsrgan {command} --help)\n"


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n{exc.usage}")
        return EXIT_USAGE
    except ConfigurationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        sys.stderr.write(f"numerical abort: {exc}\n")
        return EXIT_NUMERIC
    except (OSError, ContainerError, CodecError, CheckpointError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
