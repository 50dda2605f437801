"""Compress -> reconstruct -> measure harness producing per-image rows and
per-method summaries (PSNR / MS-SSIM / byte totals)."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .codec import compress, decompress, serialize
from .data import Corpus
from .metrics import evaluate_pair

log = logging.getLogger(__name__)

CSV_HEADER = ("image_id", "method", "psnr_db", "ms_ssim", "bytes_original", "bytes_compressed")
BUILTIN_METHODS = ("lanczos", "bicubic", "nearest", "model")


@dataclass
class EvalRow:
    image_id: str
    method: str
    psnr_db: float
    ms_ssim: float
    bytes_original: int
    bytes_compressed: int
    failed: bool = False
    error: str = ""


@dataclass
class EvalResult:
    rows: List[EvalRow]
    summary: Dict[str, object]


class CustomMethod:
    """Wrap ``fn(image) -> (reconstruction, bytes_compressed)`` as an eval method."""

    def __init__(self, name: str, fn: Callable[[np.ndarray], Tuple[np.ndarray, int]]):
        self.name = name
        self.fn = fn

    def __call__(self, image: np.ndarray) -> Tuple[np.ndarray, int]:
        return self.fn(image)


MethodSpec = Union[str, CustomMethod]


def _method_name(method: MethodSpec) -> str:
    return method if isinstance(method, str) else method.name


def evaluate(corpus: Corpus, methods: Sequence[MethodSpec], r: int = 4, quality: int = 75,
             model_checkpoint=None, payload_codec: Union[int, str] = "jpeg") -> EvalResult:
    if not methods:
        raise ValueError("evaluate needs at least one method")
    for m in methods:
        if isinstance(m, str) and m not in BUILTIN_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(BUILTIN_METHODS)}")
    model = None
    if "model" in methods:
        if model_checkpoint is None:
            raise ValueError("the 'model' method needs a model checkpoint")
        from .model import Generator, load_generator

        model = model_checkpoint if isinstance(model_checkpoint, Generator) else load_generator(model_checkpoint)
        model.eval()

    rows = []
    for index, image_id in enumerate(corpus.ids):
        image = corpus.image(index)
        original = corpus.original_bytes(index)
        container = None
        for method in methods:
            name = _method_name(method)
            try:
                if isinstance(method, str):
                    if container is None:
                        container = compress(image, r, quality, payload_codec)
                    rec = decompress(container, method, model if method == "model" else None)
                    nbytes = len(serialize(container))
                else:
                    rec, nbytes = method(image)
                scores = evaluate_pair(image, rec)
                rows.append(EvalRow(image_id, name, scores.psnr_db, scores.ms_ssim, original, nbytes))
            except Exception as exc:
                log.warning("evaluation of %s with %s failed: %s", image_id, name, exc)
                rows.append(EvalRow(image_id, name, math.nan, math.nan, original, 0, True, str(exc)))
    return EvalResult(rows, summarize(rows, [_method_name(m) for m in methods], r=r, quality=quality))


def summarize(rows: Sequence[EvalRow], methods: Sequence[str], **extra) -> Dict[str, object]:
    per_method = {}
    for name in methods:
        ok = [row for row in rows if row.method == name and not row.failed]
        failed = sum(1 for row in rows if row.method == name and row.failed)
        per_method[name] = {
            "images": len(ok),
            "failed": failed,
            "mean_psnr_db": float(np.mean([row.psnr_db for row in ok])) if ok else math.nan,
            "mean_ms_ssim": float(np.mean([row.ms_ssim for row in ok])) if ok else math.nan,
            "bytes_original": int(sum(row.bytes_original for row in ok)),
            "bytes_compressed": int(sum(row.bytes_compressed for row in ok)),
        }
    return {"methods": per_method, **extra}


def _fmt(value: float) -> str:
    if math.isnan(value):
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def write_csv(rows: Sequence[EvalRow], out: Union[str, Path, TextIO]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_csv(rows, fh)
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row.image_id, row.method, _fmt(row.psnr_db), _fmt(row.ms_ssim),
                         row.bytes_original, row.bytes_compressed])


def csv_text(rows: Sequence[EvalRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def summary_json(summary: Dict[str, object]) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def format_table(summary: Dict[str, object]) -> str:
    """Method / PSNR / MS-SSIM table, one row per method."""
    lines = [f"{'Method':<10} {'PSNR':>8} {'MS-SSIM':>8}"]
    for name, stats in summary["methods"].items():
        lines.append(f"{name.upper():<10} {stats['mean_psnr_db']:>8.2f} {stats['mean_ms_ssim']:>8.3f}")
    return "\n".join(lines)
