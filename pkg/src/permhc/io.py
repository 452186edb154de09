"""CSV readers for stream matrices and series panels.

Every parse failure raises :class:`ParseError` with 1-based row and column
numbers of the offending cell.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import StreamMatrix
from .errors import ParseError
from .pipeline import SeriesPanel

__all__ = ["read_matrix", "read_panel", "read_population", "normalize_panel", "write_matrix"]


def _rows(path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _number(cell: str, row: int, col: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", row, col) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {cell!r}", row, col)
    return v


def _is_header(row: list[str]) -> bool:
    for c in row:
        try:
            float(c)
        except ValueError:
            return True
    return False


def _wide(rows: list[list[str]], label_column: bool):
    if not rows:
        raise ParseError("empty input", 1, 1)
    header = None
    first = 1
    probe = rows[0][1:] if label_column else rows[0]
    if _is_header(probe):
        header, rows, first = rows[0], rows[1:], 2
    if not rows:
        raise ParseError("no data rows", first, 1)
    width = len(header) if header is not None else len(rows[0])
    labels, data = [], []
    off = 1 if label_column else 0
    for r, row in enumerate(rows, start=first):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", r, min(len(row), width) + 1)
        if label_column:
            labels.append(row[0].strip())
        data.append([_number(c, r, j + 1 + off) for j, c in enumerate(row[off:])])
    return header, labels, np.array(data, dtype=np.float64)


_LONG_KEYS = {"matrix": ("stream_id", "time_index", "value"), "panel": ("stream_id", "date", "value")}


def _long(rows: list[list[str]], kind: str):
    names = _LONG_KEYS[kind]
    if not rows:
        raise ParseError("empty input", 1, 1)
    head = [c.strip().lower() for c in rows[0]]
    if all(k in head for k in names):
        idx = [head.index(k) for k in names]
        body, first = rows[1:], 2
    elif _is_header(rows[0][2:3]) or len(rows[0]) != 3:
        raise ParseError(f"long layout needs columns {','.join(names)}", 1, 1)
    else:
        idx, body, first = [0, 1, 2], rows, 1
    cells: dict[tuple[str, str], float] = {}
    streams: dict[str, int] = {}
    keys: dict[str, None] = {}
    for r, row in enumerate(body, start=first):
        if len(row) <= max(idx):
            raise ParseError("missing cells", r, len(row) + 1)
        sid, key = row[idx[0]].strip(), row[idx[1]].strip()
        if kind == "matrix":
            try:
                int(key)
            except ValueError:
                raise ParseError(f"time_index must be an integer: {key!r}", r, idx[1] + 1) from None
        if (sid, key) in cells:
            raise ParseError(f"duplicate entry for stream {sid!r} at {key!r}", r, idx[1] + 1)
        cells[sid, key] = _number(row[idx[2]], r, idx[2] + 1)
        streams.setdefault(sid, r)
        keys.setdefault(key)
    order = sorted(keys, key=int) if kind == "matrix" else sorted(keys)
    out = np.empty((len(streams), len(order)))
    for i, sid in enumerate(streams):
        for j, key in enumerate(order):
            if (sid, key) not in cells:
                raise ParseError(f"stream {sid!r} has no value at {key!r}", streams[sid], idx[1] + 1)
            out[i, j] = cells[sid, key]
    return list(streams), order, out


def read_matrix(path, layout: str = "wide") -> StreamMatrix:
    """Stream matrix from CSV.

    ``wide``: one row per stream, one column per time point, optional header
    row. ``long``: columns ``stream_id,time_index,value``; streams keep their
    first-appearance order and time points are sorted numerically.
    """
    rows = _rows(path)
    if layout == "wide":
        _, _, v = _wide(rows, label_column=False)
    elif layout == "long":
        _, _, v = _long(rows, "matrix")
    else:
        raise ParseError(f"unknown layout {layout!r}")
    return StreamMatrix(v)


def read_panel(path, layout: str = "long") -> SeriesPanel:
    """Series panel from CSV.

    ``long``: columns ``stream_id,date,value``; days sort lexicographically
    (ISO dates sort chronologically). ``wide``: first column holds the
    stream label, the header row holds the day labels.
    """
    rows = _rows(path)
    if layout == "long":
        labels, days, v = _long(rows, "panel")
    elif layout == "wide":
        header, labels, v = _wide(rows, label_column=True)
        days = [c.strip() for c in header[1:]] if header else [str(j + 1) for j in range(v.shape[1])]
    else:
        raise ParseError(f"unknown layout {layout!r}")
    return SeriesPanel(v, tuple(labels), tuple(days))


def read_population(path, column: str) -> dict[str, float]:
    """``stream_id -> value of column`` from a CSV with a header row."""
    rows = _rows(path)
    if not rows:
        raise ParseError("empty population file", 1, 1)
    head = [c.strip() for c in rows[0]]
    if "stream_id" not in head or column not in head:
        raise ParseError(f"population file needs columns stream_id and {column}", 1, 1)
    si, ci = head.index("stream_id"), head.index(column)
    out = {}
    for r, row in enumerate(rows[1:], start=2):
        v = _number(row[ci] if ci < len(row) else "", r, ci + 1)
        if v <= 0:
            raise ParseError("population must be positive", r, ci + 1)
        out[row[si].strip()] = v
    return out


def normalize_panel(panel: SeriesPanel, population: dict[str, float], per: float = 100_000.0) -> SeriesPanel:
    """Rescale each series to a rate per ``per`` inhabitants."""
    missing = [s for s in panel.stream_labels if s not in population]
    if missing:
        raise ParseError(f"no population for streams {missing[:5]}")
    pop = np.array([population[s] for s in panel.stream_labels])
    return SeriesPanel(panel.values * (per / pop)[:, None], panel.stream_labels, panel.day_labels)


def write_matrix(x, path) -> None:
    """Wide CSV without header; values written with full precision."""
    v = np.asarray(x, dtype=np.float64)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in v:
            w.writerow([repr(float(c)) for c in row])
