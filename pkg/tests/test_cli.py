import numpy as np
import pytest

from seisnet import cli
from seisnet.data import read_labels, read_trace
from seisnet.detect import EvalReport, Detection
from seisnet.model import canonical_spec, count_parameters


RUN_CFG = """\
[synth]
preset = mini_day
days = 2
events_min = 1
[arch]
preset = mini
block_count = 1
layers_per_block = 1
[train]
epochs = 1
batch_size = 25
[negatives]
random_count = 10
[detect]
offset = 4500
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "run.cfg").write_text(RUN_CFG)
    assert cli.run(["generate", "--config", str(root / "run.cfg"), "--out", str(root / "corpus"), "--seed", "4"]) == 0
    assert cli.run(["train", "--config", str(root / "run.cfg"), "--traces", str(root / "corpus" / "traces"),
                    "--labels", str(root / "corpus" / "labels.csv"),
                    "--negatives", str(root / "corpus" / "negatives.csv"),
                    "--out", str(root / "m.weights"), "--seed", "2"]) == 0
    return root


def test_generate_outputs(workspace):
    labels = read_labels(workspace / "corpus" / "labels.csv")
    traces = sorted((workspace / "corpus" / "traces").iterdir())
    assert [p.name for p in traces] == ["SYN.day000.bin", "SYN.day001.bin"]
    assert len(read_trace(traces[0])) == 1_728_000
    assert set(labels) <= {"SYN.day000", "SYN.day001"}
    assert (workspace / "corpus" / "synth.cfg").exists()


def test_generate_deterministic(workspace, tmp_path):
    assert cli.run(["generate", "--config", str(workspace / "run.cfg"), "--out", str(tmp_path), "--seed", "4"]) == 0
    for name in ("labels.csv", "negatives.csv", "traces/SYN.day001.bin"):
        assert (tmp_path / name).read_bytes() == (workspace / "corpus" / name).read_bytes()


def test_train_reproducible_bytes(workspace, tmp_path):
    out = tmp_path / "again.weights"
    assert cli.run(["train", "--config", str(workspace / "run.cfg"), "--traces", str(workspace / "corpus" / "traces"),
                    "--labels", str(workspace / "corpus" / "labels.csv"),
                    "--negatives", str(workspace / "corpus" / "negatives.csv"),
                    "--out", str(out), "--seed", "2"]) == 0
    assert out.read_bytes() == (workspace / "m.weights").read_bytes()


def test_detect_and_evaluate(workspace, tmp_path, capsys):
    rep = tmp_path / "rep"
    assert cli.run(["detect", "--config", str(workspace / "run.cfg"), "--weights", str(workspace / "m.weights"),
                    "--traces", str(workspace / "corpus" / "traces" / "SYN.day000.bin"),
                    "--labels", str(workspace / "corpus" / "labels.csv"), "--out", str(rep)]) == 0
    assert (rep / "detections.csv").exists() and (rep / "metrics.csv").exists()
    plot = (rep / "plot_SYN.day000.csv").read_text().count("\n")
    assert plot == 1_728_000 + 1
    err = capsys.readouterr().err
    assert "offset = 4500" in err  # config value reached the effective settings
    assert cli.run(["evaluate", "--detections", str(rep / "detections.csv"),
                    "--labels", str(workspace / "corpus" / "labels.csv"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.csv").read_text().startswith("precision,recall,tp,fp,fn\n")


def test_flag_overrides_config(workspace, tmp_path, capsys):
    assert cli.run(["detect", "--config", str(workspace / "run.cfg"), "--weights", str(workspace / "m.weights"),
                    "--traces", str(workspace / "corpus" / "traces" / "SYN.day001.bin"),
                    "--out", str(tmp_path), "--offset", "9000", "--no-plot"]) == 0
    assert "offset = 9000" in capsys.readouterr().err


def test_inspect_canonical(capsys):
    assert cli.run(["inspect"]) == 0
    out = capsys.readouterr().out
    assert f"parameters: {count_parameters(canonical_spec())}" in out
    assert "744" in out


def test_inspect_weights(workspace, capsys):
    assert cli.run(["inspect", "--weights", str(workspace / "m.weights")]) == 0
    assert "input_length = 4500" in capsys.readouterr().out


def test_gradcheck_exit_zero(capsys):
    assert cli.run(["gradcheck", "--trials", "2", "--layer", "relu", "--layer", "linear"]) == 0
    assert "all gradient checks passed" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["detect", "--weights"],
    ["train", "--unknown-flag", "1"],
    ["inspect", "--weights", "/nonexistent/m.weights"],
    ["evaluate", "--detections", "/nonexistent.csv", "--labels", "/nonexistent.csv"],
    ["gradcheck", "--trials", "0"],
    ["generate", "--out", "/tmp/x", "--config", "/nonexistent.cfg"],
])
def test_validation_errors_exit_one(argv, capsys):
    assert cli.run(argv) == 1
    assert capsys.readouterr().err


def test_arch_mismatch_exit_one(workspace, tmp_path):
    blob = bytearray((workspace / "m.weights").read_bytes())
    blob[-1] ^= 1
    (tmp_path / "bad.weights").write_bytes(bytes(blob))
    assert cli.run(["inspect", "--weights", str(tmp_path / "bad.weights")]) == 1


def test_bad_config_key_exit_one(tmp_path):
    (tmp_path / "c.cfg").write_text("[arch]\nwidth = 3\n")
    assert cli.run(["inspect", "--config", str(tmp_path / "c.cfg")]) == 1


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("SEISNET_THREADS", "1")
    assert cli.run(["inspect"]) == 0
    monkeypatch.setenv("SEISNET_THREADS", "zero")
    assert cli.run(["inspect"]) == 1


def test_unwritable_sink_exit_two(workspace, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.run(["detect", "--weights", str(workspace / "m.weights"), "--no-plot",
                    "--traces", str(workspace / "corpus" / "traces" / "SYN.day000.bin"),
                    "--offset", "200000", "--out", str(blocker / "sub")]) == 2


def test_emit_report_files(tmp_path):
    rep = EvalReport(24, 3, 2)
    written = cli.emit_report(rep, [Detection(0, 10, 1.0, "a")], tmp_path)
    assert [p.name for p in written] == ["detections.csv", "metrics.csv"]
    assert (tmp_path / "metrics.csv").read_text().splitlines()[1] == "0.889,0.923,24,3,2"
    cli.emit_report(None, [], tmp_path / "empty")
    assert (tmp_path / "empty" / "detections.csv").read_text() == "trace_id,start_index,end_index,score\n"


def test_backend_flag(capsys):
    assert cli.run(["--backend", "numpy", "gradcheck", "--trials", "1", "--layer", "relu"]) == 0
    assert "backend = numpy" in capsys.readouterr().err
