"""Cycler log records and their delimited-text file format.

A log file is a block of ``# key=value`` metadata lines followed by a CSV
table whose header is exactly :data:`COLUMNS`.  Floats are written with six
decimals; the integer columns are written as integers.  A ``.gz`` suffix
selects gzip compression on both read and write.
"""

from __future__ import annotations

import csv
import gzip
import io
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Union

import numpy as np
import pandas as pd

SCHEMA_VERSION = "1"

COLUMNS = (
    "time_s",
    "segment_id",
    "i_module_a",
    "v_module_v",
    "v1_v",
    "v2_v",
    "v3_v",
    "s1",
    "s2",
    "s3",
    "t_tc1_c",
    "t_tc2_c",
    "t_tc3_c",
    "balancing_enabled",
)
INT_COLUMNS = frozenset({"segment_id", "s1", "s2", "s3", "balancing_enabled"})
REQUIRED_META = ("schema_version", "seed", "plan", "pulse_order", "sample_period_s", "setpoint_c", "segments")

PathLike = Union[str, os.PathLike]


class LogFormatError(ValueError):
    """Malformed or incompatible log file."""

    def __init__(self, message: str, path: Optional[PathLike] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class LogRecord:
    time_s: float
    segment_id: int
    i_module_a: float
    v_module_v: float
    v1_v: float
    v2_v: float
    v3_v: float
    s1: int
    s2: int
    s3: int
    t_tc1_c: float
    t_tc2_c: float
    t_tc3_c: float
    balancing_enabled: int


@dataclass(frozen=True)
class SegmentInfo:
    segment_id: int
    kind: str
    tag: str


def encode_segments(segments: Iterable[SegmentInfo]) -> str:
    return ";".join(f"{s.segment_id}:{s.kind}:{s.tag}" for s in segments)


def decode_segments(text: str) -> dict[int, SegmentInfo]:
    out = {}
    if not text:
        return out
    for item in text.split(";"):
        sid, kind, tag = item.split(":", 2)
        out[int(sid)] = SegmentInfo(int(sid), kind, tag)
    return out


@dataclass
class TestLog:
    """Column-oriented cycler log plus its metadata header."""

    __test__ = False  # not a pytest class

    meta: dict[str, str]
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name in COLUMNS:
            if name not in self.columns:
                raise LogFormatError(f"missing column {name!r}")
        n = {len(v) for v in self.columns.values()}
        if len(n) > 1:
            raise LogFormatError("columns have different lengths")

    @classmethod
    def from_records(cls, meta: Mapping[str, str], records: Iterable[LogRecord]) -> TestLog:
        rows = [asdict(r) for r in records]
        cols = {}
        for name in COLUMNS:
            dtype = np.int64 if name in INT_COLUMNS else np.float64
            cols[name] = np.array([r[name] for r in rows], dtype=dtype)
        return cls(dict(meta), cols)

    def __len__(self) -> int:
        return len(self.columns["time_s"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def time(self) -> np.ndarray:
        return self.columns["time_s"]

    @property
    def current(self) -> np.ndarray:
        return self.columns["i_module_a"]

    @property
    def v_cells(self) -> np.ndarray:
        """(N, 3) array of the reported Cell voltages."""
        c = self.columns
        return np.column_stack([c["v1_v"], c["v2_v"], c["v3_v"]])

    @property
    def switches(self) -> np.ndarray:
        c = self.columns
        return np.column_stack([c["s1"], c["s2"], c["s3"]])

    @property
    def module_temp(self) -> np.ndarray:
        c = self.columns
        return (c["t_tc1_c"] + c["t_tc2_c"] + c["t_tc3_c"]) / 3.0

    @property
    def segments(self) -> dict[int, SegmentInfo]:
        return decode_segments(self.meta.get("segments", ""))

    @property
    def status(self) -> str:
        return self.meta.get("status", "completed")

    def segment_ids(self, tag: str) -> list[int]:
        return [sid for sid, s in self.segments.items() if s.tag == tag]

    def mask(self, tag: str) -> np.ndarray:
        return np.isin(self.columns["segment_id"], self.segment_ids(tag))

    def select(self, mask: np.ndarray) -> TestLog:
        return TestLog(dict(self.meta), {k: v[mask] for k, v in self.columns.items()})

    def records(self) -> Iterator[LogRecord]:
        cols = [self.columns[name] for name in COLUMNS]
        for row in zip(*cols):
            yield LogRecord(*(int(x) if n in INT_COLUMNS else float(x) for n, x in zip(COLUMNS, row)))


def write_log(path: PathLike, log: TestLog) -> None:
    missing = [k for k in REQUIRED_META if k not in log.meta]
    if missing:
        raise LogFormatError(f"missing metadata keys {missing}", path)
    buf = io.StringIO()
    for key, value in log.meta.items():
        value = str(value)
        if "\n" in value:
            raise LogFormatError(f"metadata value for {key!r} contains a newline", path)
        buf.write(f"# {key}={value}\n")
    frame = pd.DataFrame({name: log.columns[name] for name in COLUMNS})
    for name in INT_COLUMNS:
        frame[name] = frame[name].astype(np.int64)
    frame.to_csv(buf, index=False, float_format="%.6f", lineterminator="\n")
    data = buf.getvalue().encode("utf-8")
    if str(path).endswith(".gz"):
        # mtime=0 keeps compressed logs byte-identical across runs
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def _parse_meta(lines: list[str], path) -> dict[str, str]:
    meta = {}
    for n, line in enumerate(lines, start=1):
        body = line[1:].strip()
        if not body:
            continue
        if "=" not in body:
            raise LogFormatError(f"metadata line is not key=value: {line.strip()!r}", path, n)
        key, value = body.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def _locate_bad_row(text_rows: list[str], first_line: int, path) -> None:
    reader = csv.reader(text_rows)
    for offset, row in enumerate(reader):
        line = first_line + offset
        if len(row) != len(COLUMNS):
            raise LogFormatError(f"expected {len(COLUMNS)} fields, found {len(row)}", path, line)
        for name, cell in zip(COLUMNS, row):
            try:
                value = float(cell)
            except ValueError:
                raise LogFormatError(f"column {name!r}: not a number: {cell!r}", path, line) from None
            if name in INT_COLUMNS and value != int(value):
                raise LogFormatError(f"column {name!r}: expected integer, got {cell!r}", path, line)


def read_log(path: PathLike) -> TestLog:
    raw = Path(path).read_bytes()
    if str(path).endswith(".gz"):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise LogFormatError(f"corrupt compressed log: {exc}", path) from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise LogFormatError(f"log is not UTF-8 text: {exc}", path) from None
    lines = text.splitlines()
    n_meta = 0
    while n_meta < len(lines) and lines[n_meta].startswith("#"):
        n_meta += 1
    meta = _parse_meta(lines[:n_meta], path)
    missing = [k for k in REQUIRED_META if k not in meta]
    if missing:
        raise LogFormatError(f"missing metadata keys {missing}", path)
    if meta["schema_version"] != SCHEMA_VERSION:
        raise LogFormatError(
            f"log schema version {meta['schema_version']!r} is not supported (expected {SCHEMA_VERSION})",
            path,
        )
    if n_meta >= len(lines):
        raise LogFormatError("no column header", path, n_meta + 1)
    header_line = n_meta + 1
    header = next(csv.reader([lines[n_meta]]))
    unknown = [c for c in header if c not in COLUMNS]
    if unknown:
        raise LogFormatError(f"unknown columns {unknown}", path, header_line)
    if tuple(header) != COLUMNS:
        missing_cols = [c for c in COLUMNS if c not in header]
        raise LogFormatError(
            f"column header does not match schema (missing {missing_cols})" if missing_cols
            else "column order does not match schema",
            path,
            header_line,
        )
    body = lines[n_meta + 1:]
    try:
        frame = pd.read_csv(io.StringIO("\n".join(body)), header=None, names=list(COLUMNS), dtype=np.float64)
    except (ValueError, pd.errors.ParserError):
        _locate_bad_row(body, header_line + 1, path)
        raise LogFormatError("unparseable table", path)
    if frame.isna().any().any():
        _locate_bad_row(body, header_line + 1, path)
        row = int(np.flatnonzero(frame.isna().any(axis=1).to_numpy())[0])
        raise LogFormatError("empty field", path, header_line + 1 + row)
    cols = {}
    for name in COLUMNS:
        values = frame[name].to_numpy()
        if name in INT_COLUMNS:
            if np.any(values != np.round(values)):
                _locate_bad_row(body, header_line + 1, path)
            values = values.astype(np.int64)
        cols[name] = values
    validate_columns(cols, path=path, first_line=header_line + 1)
    return TestLog(meta, cols)


def validate_columns(cols: Mapping[str, np.ndarray], path=None, first_line: int = 1) -> None:
    t = cols["time_s"]
    if len(t) > 1:
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise LogFormatError(
                f"time not strictly increasing ({t[i - 1]} -> {t[i]})", path, first_line + i
            )
    for name in ("s1", "s2", "s3", "balancing_enabled"):
        bad = np.flatnonzero((cols[name] != 0) & (cols[name] != 1))
        if bad.size:
            raise LogFormatError(f"column {name!r} must be 0 or 1", path, first_line + int(bad[0]))
    for name in ("v_module_v", "v1_v", "v2_v", "v3_v", "i_module_a"):
        bad = np.flatnonzero(~np.isfinite(cols[name]))
        if bad.size:
            raise LogFormatError(f"column {name!r} is not finite", path, first_line + int(bad[0]))


def format_float(x: float) -> str:
    """The textual form a float takes in a log file."""
    if not math.isfinite(x):
        raise ValueError("log values must be finite")
    return f"{x:.6f}"
