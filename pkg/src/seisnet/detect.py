"""Sliding-window detection, duplicate suppression and scoring against labels."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import fileio
from .data import LabelSet, Trace, read_trace
from .model import ModelParams, load_weights, predict
from .train import preprocess


@dataclass(frozen=True)
class Detection:
    start: int
    end: int
    score: float
    trace_id: str = ""

    def overlaps(self, other: "Detection") -> bool:
        return self.trace_id == other.trace_id and self.start < other.end and other.start < self.end


def window_count(n: int, length: int, offset: int) -> int:
    """Number of windows ``[s, s+length)`` with ``s = 0, offset, 2*offset, ...`` inside ``n`` samples."""
    if n < length:
        return 0
    return (n - length) // offset + 1


def window_starts(n: int, length: int, offset: int) -> range:
    return range(0, window_count(n, length, offset) * offset, offset)


Scorer = Callable[[np.ndarray], np.ndarray]


def _scorer(model) -> tuple[Scorer, int | None]:
    if isinstance(model, ModelParams):
        return (lambda w: predict(model, w)), model.spec.input_length
    if callable(model):
        return model, None
    raise TypeError("model must be ModelParams or a callable mapping (n, L) windows to n scores")


def scan(trace: Trace, model, length: int | None = None, offset: int = 6000,
         threshold: float = 0.0, batch_size: int = 64) -> list[Detection]:
    """Score every window and keep those with ``z > threshold``.

    ``model`` is a :class:`ModelParams` (scored in infer mode) or any callable
    taking a ``(n, length)`` array of z-scored windows. Each window is
    normalised on its own before scoring.
    """
    score, model_len = _scorer(model)
    if length is None:
        if model_len is None:
            raise ValueError("window length is required with a callable model")
        length = model_len
    if model_len is not None and length != model_len:
        raise ValueError(f"window length {length} does not match the model input length {model_len}")
    if offset < 1:
        raise ValueError(f"offset must be >= 1, got {offset}")
    n = len(trace)
    if n < length:
        raise ValueError(f"trace {trace.trace_id!r} has {n} samples, fewer than the window length {length}")
    starts = np.asarray(window_starts(n, length, offset))
    found = []
    x = trace.samples
    for i in range(0, len(starts), batch_size):
        chunk = starts[i:i + batch_size]
        windows = np.stack([x[s:s + length] for s in chunk])
        z = np.asarray(score(preprocess(windows).astype(np.float32)), dtype=np.float64)
        for s, zi in zip(chunk, z):
            if zi > threshold:
                found.append(Detection(int(s), int(s) + length, float(zi), trace.trace_id))
    return found


def dedup(detections: Iterable[Detection]) -> list[Detection]:
    """Collapse chains of overlapping windows to their highest-scoring member.

    Windows are grouped transitively by interval overlap (per trace); ties on
    score go to the earlier start, then the earlier end. Output is sorted by
    (trace, start).
    """
    dets = sorted(detections, key=lambda d: (d.trace_id, d.start, d.end))
    out = []
    group: list[Detection] = []
    reach = None
    for d in dets:
        if group and (d.trace_id != group[0].trace_id or d.start >= reach):
            out.append(_best(group))
            group = []
        if not group:
            reach = d.end
        group.append(d)
        reach = max(reach, d.end)
    if group:
        out.append(_best(group))
    return out


def _best(group):
    return min(group, key=lambda d: (-d.score, d.start, d.end))


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    matches: list[tuple[Detection, tuple[str, int, int]]] = field(default_factory=list)

    @property
    def precision(self) -> float:
        return precision_recall(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return precision_recall(self.tp, self.fp, self.fn)[1]

    def summary(self) -> str:
        return (f"TP={self.tp} FP={self.fp} FN={self.fn}  "
                f"precision={self.precision:.3f} recall={self.recall:.3f}")


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Precision and recall, each 1.0 when its denominator is zero."""
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def _as_label_map(labels) -> dict[str, list[tuple[int, int]]]:
    if isinstance(labels, LabelSet):
        return {None: list(labels.events)}
    out = {}
    for tid, ls in labels.items():
        out[tid] = list(ls.events) if isinstance(ls, LabelSet) else [tuple(e) for e in ls]
    return out


def evaluate(detections: Iterable[Detection], labels) -> EvalReport:
    """Match detections to events one-to-one and count TP / FP / FN.

    ``labels`` is a :class:`LabelSet` (all detections are on that trace) or
    a mapping ``trace_id -> LabelSet | intervals``. Detections are visited in
    descending score order; each claims the unmatched event its window
    overlaps most (earliest on ties) and is a true positive if there is one.
    """
    label_map = _as_label_map(labels)
    single = None in label_map
    unmatched = {tid: set(range(len(ev))) for tid, ev in label_map.items()}
    dets = sorted(detections, key=lambda d: (-d.score, d.trace_id, d.start))
    tp = fp = 0
    matches = []
    for d in dets:
        tid = None if single else d.trace_id
        events = label_map.get(tid, [])
        best = None
        best_overlap = 0
        for j in sorted(unmatched.get(tid, ())):
            s, e = events[j]
            ov = min(e, d.end) - max(s, d.start)
            if ov > best_overlap:
                best, best_overlap = j, ov
        if best is None:
            fp += 1
            continue
        unmatched[tid].discard(best)
        tp += 1
        s, e = events[best]
        matches.append((d, (d.trace_id if single else tid, s, e)))
    fn = sum(len(v) for v in unmatched.values())
    return EvalReport(tp, fp, fn, matches)


DETECTION_HEADER = ["trace_id", "start_index", "end_index", "score"]


def write_detections(detections: list[Detection], path) -> None:
    with fileio.atomic_write(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DETECTION_HEADER)
        for d in sorted(detections, key=lambda d: (d.trace_id, d.start)):
            w.writerow([d.trace_id, d.start, d.end, repr(d.score)])


def read_detections(path) -> list[Detection]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != DETECTION_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DETECTION_HEADER)}")
        return [Detection(int(r["start_index"]), int(r["end_index"]), float(r["score"]), r["trace_id"])
                for r in reader]


def write_metrics(report: EvalReport, path) -> None:
    with fileio.atomic_write(path, "w", newline="") as fh:
        fh.write("precision,recall,tp,fp,fn\n")
        fh.write(f"{report.precision:.3f},{report.recall:.3f},{report.tp},{report.fp},{report.fn}\n")


def write_plot_csv(trace: Trace, detections: list[Detection], path) -> None:
    """One row per sample: ``timestamp_index,amplitude,detection_flag``."""
    flag = np.zeros(len(trace), dtype=np.int8)
    for d in detections:
        if d.trace_id == trace.trace_id:
            flag[d.start:d.end] = 1
    with fileio.atomic_write(path, "w", newline="") as fh:
        fh.write("timestamp_index,amplitude,detection_flag\n")
        step = 200_000
        for i in range(0, len(trace), step):
            idx = np.arange(i, min(i + step, len(trace)))
            amp = trace.samples[idx]
            fh.writelines(f"{j},{float(a)!r},{f}\n" for j, a, f in zip(idx, amp, flag[idx]))


@dataclass
class PipelineResult:
    detections: list[Detection]
    raw_count: int
    windows: int
    seconds: float
    report: EvalReport | None = None

    @property
    def windows_per_second(self) -> float:
        return self.windows / self.seconds if self.seconds > 0 else float("inf")


def detect_pipeline(traces, weights, offset: int = 6000, labels=None,
                    threshold: float = 0.0) -> PipelineResult:
    """scan -> dedup -> (optionally) evaluate over several traces.

    ``traces`` are :class:`Trace` objects or paths; ``weights`` a
    :class:`ModelParams` or weight-file path. Traces are read and checked
    before the weights are loaded.
    """
    loaded = [t if isinstance(t, Trace) else read_trace(t) for t in traces]
    if not loaded:
        raise ValueError("no traces given")
    params = weights if isinstance(weights, ModelParams) else load_weights(weights)
    length = params.spec.input_length
    t0 = time.perf_counter()
    raw = []
    windows = 0
    for tr in loaded:
        raw.extend(scan(tr, params, length, offset, threshold))
        windows += window_count(len(tr), length, offset)
    seconds = time.perf_counter() - t0
    dets = dedup(raw)
    report = None
    if labels is not None:
        report = evaluate(dets, labels)
    return PipelineResult(dets, len(raw), windows, seconds, report)
