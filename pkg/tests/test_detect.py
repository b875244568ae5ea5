import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seisnet.data import LabelSet, Trace, write_trace
from seisnet.detect import (
    Detection,
    dedup,
    detect_pipeline,
    evaluate,
    precision_recall,
    read_detections,
    scan,
    window_count,
    window_starts,
    write_detections,
    write_metrics,
    write_plot_csv,
)
from seisnet.layers import Mode
from seisnet.model import ArchSpec, build_model, forward, save_weights


def dedup_oracle(dets):
    # connected components of the overlap graph (union-find), argmax per component
    n = len(dets)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if dets[i].overlaps(dets[j]):
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(dets[i])
    best = [max(g, key=lambda d: (d.score, -d.start, -d.end)) for g in groups.values()]
    return sorted(best, key=lambda d: (d.trace_id, d.start))


def random_detections(rng, k):
    out = []
    for _ in range(k):
        s = int(rng.integers(0, 200))
        out.append(Detection(s, s + int(rng.integers(1, 40)), float(rng.integers(0, 5)),
                             str(rng.choice(["a", "b"]))))
    return out


def test_dedup_matches_oracle_500():
    rng = np.random.default_rng(0)
    for _ in range(500):
        dets = random_detections(rng, int(rng.integers(0, 21)))
        got = dedup(dets)
        assert got == dedup_oracle(dets)
        for i, a in enumerate(got):
            assert not any(a.overlaps(b) for b in got[i + 1:])


def test_dedup_chain_and_tie():
    a = Detection(0, 10, 1.0)
    b = Detection(8, 18, 2.0)
    c = Detection(16, 26, 2.0)  # overlaps b only: chain a-b-c is one group
    assert dedup([c, a, b]) == [b]
    assert dedup([Detection(0, 5, 1.0), Detection(5, 9, 3.0)]) == [Detection(0, 5, 1.0), Detection(5, 9, 3.0)]


@settings(max_examples=200)
@given(st.integers(1, 10**7), st.integers(1, 10**5), st.integers(1, 10**5))
def test_window_count_law(n, length, offset):
    k = window_count(n, length, offset)
    if n < length:
        assert k == 0
        return
    assert k == (n - length) // offset + 1
    last = (k - 1) * offset
    assert last + length <= n < last + offset + length


def test_window_count_day():
    assert window_count(17_280_001, 18_000, 6_000) == 2878
    starts = window_starts(10, 4, 3)
    assert list(starts) == [0, 3, 6]


def test_scan_with_callable_sees_zscored_windows():
    x = np.random.default_rng(0).standard_normal(1000).astype(np.float32) * 5 + 10
    seen = []

    def model(w):
        seen.append(w)
        return np.where(np.arange(len(w)) % 2 == 0, 1.0, -1.0)

    dets = scan(Trace(x, trace_id="x"), model, length=100, offset=50, batch_size=1000)
    allw = np.concatenate(seen)
    assert allw.shape == (window_count(1000, 100, 50), 100)
    np.testing.assert_allclose(allw.mean(axis=1), 0, atol=1e-5)
    assert [d.start for d in dets] == list(range(0, 901, 100))


def test_scan_threshold_and_validation():
    tr = Trace(np.ones(100, np.float32))
    with pytest.raises(ValueError):
        scan(tr, lambda w: np.zeros(len(w)), offset=10)
    with pytest.raises(ValueError):
        scan(tr, lambda w: np.zeros(len(w)), length=200)
    assert scan(tr, lambda w: np.zeros(len(w)), length=10, offset=10) == []
    assert len(scan(tr, lambda w: np.full(len(w), 0.5), length=10, offset=10, threshold=0.4)) == 10


def test_evaluate_reference_counts():
    p, r = precision_recall(24, 3, 2)
    assert round(p, 3) == 0.889 and round(r, 3) == 0.923
    assert precision_recall(0, 0, 0) == (1.0, 1.0)


def test_evaluate_greedy_matching():
    labels = LabelSet([(100, 200), (1000, 1100)])
    dets = [Detection(150, 250, 0.5), Detection(50, 160, 2.0), Detection(500, 600, 1.0)]
    rep = evaluate(dets, labels)
    assert (rep.tp, rep.fp, rep.fn) == (1, 2, 1)
    assert rep.matches[0][0].score == 2.0


def test_evaluate_prefers_largest_overlap():
    labels = LabelSet([(0, 100), (150, 400)])
    rep = evaluate([Detection(90, 300, 1.0)], labels)
    assert rep.matches[0][1][1:] == (150, 400)


def test_evaluate_multi_trace():
    labels = {"a": LabelSet([(0, 10)]), "b": [(0, 10)]}
    rep = evaluate([Detection(0, 5, 1.0, "b"), Detection(0, 5, 1.0, "c")], labels)
    assert (rep.tp, rep.fp, rep.fn) == (1, 1, 1)


def test_detection_and_metrics_files(tmp_path):
    dets = [Detection(10, 20, 0.1 + 0.2, "b"), Detection(0, 5, 3.0, "a")]
    write_detections(dets, tmp_path / "d.csv")
    assert read_detections(tmp_path / "d.csv") == sorted(dets, key=lambda d: (d.trace_id, d.start))
    write_detections([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "trace_id,start_index,end_index,score\n"
    rep = evaluate([], LabelSet())
    rep.tp, rep.fp, rep.fn = 24, 3, 2
    write_metrics(rep, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[1].startswith("0.889,0.923")


def test_plot_csv_rows(tmp_path):
    tr = Trace(np.arange(50, dtype=np.float32), trace_id="p")
    write_plot_csv(tr, [Detection(10, 20, 1.0, "p"), Detection(0, 50, 1.0, "other")], tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "timestamp_index,amplitude,detection_flag"
    assert len(lines) == 51
    flags = [int(l.split(",")[2]) for l in lines[1:]]
    assert flags == [0] * 10 + [1] * 10 + [0] * 30


def test_pipeline_with_model(tmp_path):
    spec = ArchSpec(input_length=200, block_count=1, layers_per_block=1, growth_rate=4, stem_filters=4)
    params = build_model(spec, seed=0)
    forward(np.random.default_rng(0).standard_normal((4, 200, 1)).astype(np.float32), params, Mode.TRAIN)
    params.head.weight[...] = 0.0
    params.head.bias[...] = 100.0  # every window scores the same, positive
    wpath = tmp_path / "m.weights"
    save_weights(params, wpath)
    tr = Trace(np.random.default_rng(1).standard_normal(1000).astype(np.float32), trace_id="day")
    write_trace(tr, tmp_path / "day.bin")
    res = detect_pipeline([tmp_path / "day.bin"], wpath, offset=100, labels={"day": LabelSet([(10, 20)])})
    assert res.windows == window_count(1000, 200, 100) == res.raw_count
    assert len(res.detections) == 1  # one overlapping chain
    assert (res.report.tp, res.report.fp, res.report.fn) == (1, 0, 0)


def test_pipeline_mismatched_length():
    spec = ArchSpec(input_length=200, block_count=0)
    with pytest.raises(ValueError):
        scan(Trace(np.zeros(500, np.float32)), build_model(spec), length=100)


def _constant_model(bias):
    spec = ArchSpec(input_length=100, block_count=0)
    params = build_model(spec, init="zeros")
    for bn in params.batchnorms().values():
        bn.initialized = True
    params.head.bias[...] = bias
    return params


def test_scan_constant_models():
    tr = Trace(np.random.default_rng(0).standard_normal(1000).astype(np.float32), trace_id="t")
    assert len(scan(tr, _constant_model(1.0), offset=50)) == window_count(1000, 100, 50)
    assert scan(tr, _constant_model(-1.0), offset=50) == []


def test_dedup_examples():
    a, b = Detection(0, 18000, 0.3), Detection(6000, 24000, 0.9)
    assert dedup([a, b]) == [b]
    c = Detection(30000, 48000, 0.1)
    assert dedup([a, c]) == [a, c]


def test_evaluate_counting_identities():
    rng = np.random.default_rng(3)
    for _ in range(200):
        events = sorted({(int(s), int(s) + 50) for s in rng.integers(0, 20, 6) * 100})
        dets = [Detection(int(s), int(s) + 120, float(rng.random())) for s in rng.integers(0, 2000, 5)]
        rep = evaluate(dets, LabelSet(events))
        assert rep.tp + rep.fn == len(events)
        assert rep.tp + rep.fp == len(dets)
        more = evaluate(dets + [Detection(int(rng.integers(0, 2000)), 2100, 0.5)], LabelSet(events))
        assert more.tp >= rep.tp and more.tp + more.fp >= rep.tp + rep.fp
    rep = evaluate([Detection(i * 100, i * 100 + 10, 1.0) for i in range(5)],
                   LabelSet([(i * 100, i * 100 + 5) for i in range(5)]))
    assert (rep.precision, rep.recall) == (1.0, 1.0)


def test_pipeline_empty_trace_fails_before_model_load(tmp_path):
    (tmp_path / "empty.bin").write_bytes(b"")
    with pytest.raises(ValueError):
        detect_pipeline([tmp_path / "empty.bin"], tmp_path / "missing.weights")
