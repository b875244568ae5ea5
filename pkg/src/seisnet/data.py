"""Traces, labels, window extraction and training-set assembly.

Binary trace format (little-endian)::

    magic        4 bytes  b"STRC"
    version      u16      1
    station_len  u16
    sample_rate  f64      Hz
    start_time   f64      epoch seconds
    count        u64      number of samples
    station      station_len bytes, UTF-8
    samples      count x f32

CSV traces have a ``timestamp_index,amplitude`` header; optional leading
``# key=value`` comment lines carry sample_rate, start_time and station.
Label files are CSV with ``trace_id,start_index,end_index`` rows describing
half-open sample intervals.
"""

from __future__ import annotations

import csv
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .train import LabeledWindow, preprocess

DAY_SAMPLES = 17_280_001
SAMPLE_RATE = 200.0

_MAGIC = b"STRC"
_VERSION = 1
_HEAD = struct.Struct("<4sHHddQ")


class TraceFormatError(ValueError):
    """Unparseable trace file; the message names the byte offset or row."""


@dataclass
class Trace:
    samples: np.ndarray
    sample_rate: float = SAMPLE_RATE
    start_time: float = 0.0
    station: str = ""
    trace_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError(f"trace needs a non-empty 1-D sample vector, got shape {self.samples.shape}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return self.samples.size


def _check_intervals(intervals, length, what):
    out = sorted((int(s), int(e)) for s, e in intervals)
    prev_end = 0
    for s, e in out:
        if not 0 <= s < e:
            raise ValueError(f"{what} interval ({s}, {e}) is empty or negative")
        if length is not None and e > length:
            raise ValueError(f"{what} interval ({s}, {e}) runs past trace length {length}")
        if s < prev_end:
            raise ValueError(f"{what} intervals overlap at ({s}, {e})")
        prev_end = e
    return out


@dataclass
class LabelSet:
    """Ground-truth event intervals on one trace, plus hand-picked non-events."""
    events: list[tuple[int, int]] = field(default_factory=list)
    trace_length: int | None = None
    negatives: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.events = _check_intervals(self.events, self.trace_length, "event")
        self.negatives = _check_intervals(self.negatives, self.trace_length, "negative")

    def intersects_event(self, start: int, end: int) -> bool:
        return any(s < end and start < e for s, e in self.events)


def write_trace(trace: Trace, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _write_trace_csv(trace, path)
        return
    station = trace.station.encode()
    head = _HEAD.pack(_MAGIC, _VERSION, len(station), trace.sample_rate, trace.start_time, len(trace))
    with fileio.atomic_write(path, "wb") as fh:
        fh.write(head)
        fh.write(station)
        fh.write(trace.samples.astype("<f4").tobytes())


def read_trace(path, trace_id: str | None = None) -> Trace:
    path = Path(path)
    tid = trace_id if trace_id is not None else path.stem
    if path.suffix.lower() == ".csv":
        return _read_trace_csv(path, tid)
    blob = path.read_bytes()
    if len(blob) < _HEAD.size:
        raise TraceFormatError(f"{path}: header truncated at byte offset {len(blob)}, need {_HEAD.size} bytes")
    magic, version, slen, rate, t0, count = _HEAD.unpack_from(blob)
    if magic != _MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != _VERSION:
        raise TraceFormatError(f"{path}: unsupported version {version} at byte offset 4")
    body = _HEAD.size + slen
    if len(blob) < body:
        raise TraceFormatError(f"{path}: station id truncated at byte offset {len(blob)}")
    found = (len(blob) - body) // 4
    if len(blob) - body != 4 * count:
        raise TraceFormatError(f"{path}: expected {count} samples, found {found} "
                               f"({len(blob) - body} body bytes from byte offset {body})")
    samples = np.frombuffer(blob, dtype="<f4", count=count, offset=body).astype(np.float32)
    return Trace(samples, rate, t0, blob[_HEAD.size:body].decode(), tid)


def _write_trace_csv(trace: Trace, path: Path) -> None:
    with fileio.atomic_write(path, "w", newline="") as fh:
        fh.write(f"# sample_rate={trace.sample_rate!r}\n# start_time={trace.start_time!r}\n"
                 f"# station={trace.station}\n")
        fh.write("timestamp_index,amplitude\n")
        # float32 -> float64 repr round-trips exactly
        fh.writelines(f"{i},{float(v)!r}\n" for i, v in enumerate(trace.samples))


def _read_trace_csv(path: Path, tid: str) -> Trace:
    meta = {}
    values = []
    with open(path, newline="") as fh:
        rows = iter(enumerate(fh, start=1))
        for lineno, line in rows:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line.strip() != "timestamp_index,amplitude":
                raise TraceFormatError(f"{path}: line {lineno}: expected header 'timestamp_index,amplitude'")
            break
        for lineno, line in rows:
            if not line.strip():
                continue
            try:
                idx, amp = line.split(",")
                idx = int(idx)
                values.append(float(amp))
            except ValueError:
                raise TraceFormatError(f"{path}: line {lineno}: cannot parse {line.strip()!r}") from None
            if idx != len(values) - 1:
                raise TraceFormatError(f"{path}: line {lineno}: timestamp_index {idx} out of sequence")
    if not values:
        raise TraceFormatError(f"{path}: no samples")
    return Trace(np.array(values, dtype=np.float32), float(meta.get("sample_rate", SAMPLE_RATE)),
                 float(meta.get("start_time", 0.0)), meta.get("station", ""), tid)


def write_labels(intervals: dict[str, list[tuple[int, int]]], path) -> None:
    with fileio.atomic_write(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace_id", "start_index", "end_index"])
        for tid in sorted(intervals):
            for s, e in sorted(intervals[tid]):
                w.writerow([tid, s, e])


def read_labels(path) -> dict[str, list[tuple[int, int]]]:
    out: dict[str, list[tuple[int, int]]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"trace_id", "start_index", "end_index"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns trace_id,start_index,end_index")
        for row in reader:
            try:
                out[row["trace_id"]].append((int(row["start_index"]), int(row["end_index"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: line {reader.line_num}: bad interval {row}") from None
    return dict(out)


def label_sets(traces: list[Trace], events: dict, negatives: dict | None = None) -> dict[str, LabelSet]:
    negatives = negatives or {}
    return {t.trace_id: LabelSet(events.get(t.trace_id, []), len(t), negatives.get(t.trace_id, []))
            for t in traces}


def extract_window(trace, start: int, length: int) -> np.ndarray:
    samples = trace.samples if isinstance(trace, Trace) else np.asarray(trace)
    if start < 0 or length < 1 or start + length > samples.size:
        raise IndexError(f"window [{start}, {start + length}) outside trace of length {samples.size}")
    return samples[start:start + length].copy()


def centered_start(s: int, e: int, length: int, n: int) -> int:
    """Start of the ``length`` window centred on ``[s, e)``, clamped into the trace."""
    start = (s + e) // 2 - length // 2
    return min(max(start, 0), n - length)


@dataclass
class NegativePolicy:
    """How negatives are drawn.

    ``picked_shifts`` lists offsets (in samples) from the centred position
    at which each picked interval is cut; ``(0,)`` gives one centred window
    per interval. Shifted copies are clamped into the trace.
    """
    random_count: int = 330
    use_picked: bool = True
    seed: int = 0
    max_tries: int = 100_000
    picked_shifts: tuple[int, ...] = (0,)


def make_training_set(traces: list[Trace], labels: dict[str, LabelSet], length: int,
                      policy: NegativePolicy | None = None) -> list[LabeledWindow]:
    """One centred positive per event, picked negatives, then random clean negatives.

    Every window is z-scored with :func:`preprocess`.
    """
    policy = policy or NegativePolicy()
    rng = np.random.default_rng(policy.seed)
    out = []

    def add(trace, start, label, source):
        w = preprocess(extract_window(trace, start, length)).astype(np.float32)
        out.append(LabeledWindow(w, label, trace.trace_id, int(start), source))

    for tr in traces:
        ls = labels.get(tr.trace_id, LabelSet())
        if len(tr) < length:
            raise ValueError(f"trace {tr.trace_id} has {len(tr)} samples, shorter than window {length}")
        for s, e in ls.events:
            if e - s > length:
                raise ValueError(f"event ({s}, {e}) on {tr.trace_id} spans {e - s} samples, longer than window {length}")
            add(tr, centered_start(s, e, length, len(tr)), 1, "event")
        if policy.use_picked:
            for s, e in ls.negatives:
                c = centered_start(s, e, length, len(tr))
                for shift in policy.picked_shifts:
                    add(tr, min(max(c + shift, 0), len(tr) - length), -1, "hand-picked-negative")

    if policy.random_count:
        spans = np.array([len(t) - length + 1 for t in traces], dtype=np.float64)
        weights = spans / spans.sum()
        drawn = 0
        for _ in range(policy.max_tries):
            if drawn == policy.random_count:
                break
            i = rng.choice(len(traces), p=weights)
            tr = traces[i]
            start = int(rng.integers(0, len(tr) - length + 1))
            ls = labels.get(tr.trace_id)
            if ls is not None and ls.intersects_event(start, start + length):
                continue
            add(tr, start, -1, "random-negative")
            drawn += 1
        else:
            if drawn < policy.random_count:
                raise RuntimeError(f"found only {drawn} of {policy.random_count} event-free random windows")
    return out
