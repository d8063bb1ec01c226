"""Serialize run reports: JSON, RFC-4180 CSV matrices and an SVG heatmap."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable
from xml.sax.saxutils import escape

import numpy as np

from .histories import DecoherenceMatrix
from .linalg import HistkitError

FORMATS = ("json", "csv", "svg")

LOG_FLOOR = -12.0
CELL = 28


class EmitError(HistkitError, OSError):
    pass


def _atomic_write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise EmitError(f"{path}: {exc.strerror or exc}") from None


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def matrix_csv(d: DecoherenceMatrix, part: str = "real") -> str:
    """One CSV table; the header row lists the history labels."""
    values = np.real(d.entries) if part == "real" else np.imag(d.entries)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["history", *d.names])
    for name, row in zip(d.names, values):
        writer.writerow([name, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def _ramp(t: float) -> str:
    # white -> deep blue
    lo = np.array([247, 251, 255])
    hi = np.array([8, 48, 107])
    c = np.rint(lo + (hi - lo) * min(max(t, 0.0), 1.0)).astype(int)
    return f"#{c[0]:02x}{c[1]:02x}{c[2]:02x}"


def heatmap_svg(d: DecoherenceMatrix, title: str = "") -> str:
    """``|D(a,b)|`` on a log10 color scale from 1e-12 to 1, one square per pair."""
    n = d.n
    label_px = 8 + 7 * max((len(s) for s in d.names), default=1)
    top = label_px + (20 if title else 0)
    width = label_px + n * CELL + 10
    height = top + n * CELL + 10
    mag = np.abs(d.entries)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">'
    ]
    if title:
        out.append(f'<text x="4" y="14">{escape(title)}</text>')
    for i, name in enumerate(d.names):
        y = top + i * CELL + CELL // 2 + 4
        out.append(f'<text x="{label_px - 4}" y="{y}" text-anchor="end">{escape(name)}</text>')
        x = label_px + i * CELL + CELL // 2
        out.append(
            f'<text x="{x}" y="{top - 4}" text-anchor="start" transform="rotate(-90 {x} {top - 4})">'
            f"{escape(name)}</text>"
        )
    for i in range(n):
        for j in range(n):
            v = float(mag[i, j])
            level = LOG_FLOOR if v <= 10 ** LOG_FLOOR else min(np.log10(v), 0.0)
            t = (level - LOG_FLOOR) / -LOG_FLOOR
            out.append(
                f'<rect x="{label_px + j * CELL}" y="{top + i * CELL}" width="{CELL}" height="{CELL}" '
                f'fill="{_ramp(t)}" stroke="#cccccc"><title>|D({escape(d.names[i])}; '
                f'{escape(d.names[j])})| = {v:.3e}</title></rect>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit(report: dict, d: DecoherenceMatrix, out_dir, formats: Iterable[str] = ("json",),
         stem: str | None = None) -> list[Path]:
    """Write the requested formats to ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    stem = stem or report["scenario"]
    written = []
    for fmt in formats:
        if fmt not in FORMATS:
            raise EmitError(f"unknown format {fmt!r}; choose from {FORMATS}")
        if fmt == "json":
            path = out / f"{stem}.json"
            _atomic_write(path, report_json(report))
            written.append(path)
        elif fmt == "csv":
            for part, suffix in (("real", "re"), ("imag", "im")):
                path = out / f"{stem}_D_{suffix}.csv"
                _atomic_write(path, matrix_csv(d, part))
                written.append(path)
        else:
            path = out / f"{stem}_D.svg"
            _atomic_write(path, heatmap_svg(d, report.get("scenario", "")))
            written.append(path)
    return written


def emit_timing(out_dir, stem: str, seconds: float) -> Path:
    path = Path(out_dir) / f"{stem}.timing.json"
    _atomic_write(path, json.dumps({"scenario": stem, "wall_time_s": seconds}, indent=2) + "\n")
    return path
