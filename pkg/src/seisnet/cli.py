"""``seisnet`` command line: generate, train, detect, evaluate, inspect, gradcheck.

Settings come from built-in defaults, then an optional INI file
(``--config``; sections ``[synth]``, ``[arch]``, ``[train]``,
``[negatives]``, ``[detect]``), then command-line flags. The effective
values are printed to standard error before any work starts.

Exit status: 0 on success, 1 for invalid input (bad flags, missing or
malformed files, ArchSpec/weight mismatch), 2 for failures while running.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data, detect, fileio, gradcheck, kernels, model, synth, train


class UsageError(Exception):
    """Invalid input; reported with exit status 1."""


EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

TRACE_SUFFIXES = (".bin", ".csv")


@dataclass
class CommandConfig:
    subcommand: str
    config: Path | None = None
    weights: Path | None = None
    traces: list[Path] = field(default_factory=list)
    labels: Path | None = None
    negatives: Path | None = None
    out: Path | None = None
    seed: int | None = None
    epochs: int | None = None
    lr: float | None = None
    threshold: float | None = None
    offset: int | None = None
    threads: int | None = None

    @classmethod
    def from_args(cls, args) -> "CommandConfig":
        known = {k: getattr(args, k) for k in cls.__dataclass_fields__ if hasattr(args, k)}
        known["traces"] = list(known.get("traces") or [])
        return cls(**known)

    def validate(self) -> None:
        """Check that every named input exists; run before any computation."""
        for what in ("config", "weights", "labels", "negatives"):
            _require_file(getattr(self, what), f"{what} file")
        for p in self.traces:
            if not p.exists():
                raise UsageError(f"trace not found: {p}")
        if self.out is not None and self.out.exists() and self.subcommand == "train" and self.out.is_dir():
            raise UsageError(f"--out {self.out} is a directory; train writes a weight file")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seisnet", description="Dense 1-D CNN event detector for continuous seismic traces.")
    p.add_argument("--backend", choices=["compiled", "numpy"], help="kernel backend (default: compiled if built)")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", type=Path, help="INI file with [synth]/[arch]/[train]/[negatives]/[detect]")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed for every random choice")
        sp.add_argument("--threads", type=int,
                        help="cap on BLAS threads (fallback: SEISNET_THREADS)")

    g = sub.add_parser("generate", help="write a synthetic corpus (traces + label files)")
    common(g)
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.add_argument("--days", type=int, help="number of traces")
    g.add_argument("--preset", choices=["day", "mini_day"], help="trace length preset")
    g.add_argument("--format", choices=["bin", "csv"], default="bin", help="trace file format")

    t = sub.add_parser("train", help="fit a model to labelled traces")
    common(t)
    t.add_argument("--traces", type=Path, nargs="+", required=True, help="trace files or directories")
    t.add_argument("--labels", type=Path, required=True, help="event label CSV")
    t.add_argument("--negatives", type=Path, help="hand-picked negative intervals (label CSV format)")
    t.add_argument("--out", type=Path, required=True, help="weight file to write")
    t.add_argument("--arch", choices=["canonical", "mini"], help="ArchSpec preset ([arch] keys apply on top)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--random-negatives", type=int, help="random event-free windows to draw")
    t.add_argument("--history", type=Path, help="per-epoch loss/accuracy CSV")

    d = sub.add_parser("detect", help="scan traces with a trained model")
    common(d, seed=False)
    d.add_argument("--weights", type=Path, required=True)
    d.add_argument("--traces", type=Path, nargs="+", required=True)
    d.add_argument("--labels", type=Path, help="if given, also score detections against these events")
    d.add_argument("--out", type=Path, required=True, help="report directory")
    d.add_argument("--offset", type=int, help="window step in samples (default 6000)")
    d.add_argument("--threshold", type=float, help="score threshold (default 0)")
    d.add_argument("--no-plot", action="store_true", help="skip the per-trace plot CSVs")

    e = sub.add_parser("evaluate", help="score a detection CSV against labels")
    common(e, seed=False)
    e.add_argument("--detections", type=Path, required=True)
    e.add_argument("--labels", type=Path, required=True)
    e.add_argument("--out", type=Path, help="directory for metrics.csv")

    i = sub.add_parser("inspect", help="print ArchSpec, parameter count and shape ladder")
    common(i, seed=False)
    i.add_argument("--weights", type=Path, help="weight file (otherwise the configured ArchSpec)")
    i.add_argument("--arch", choices=["canonical", "mini"])

    c = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    common(c)
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--layer", choices=sorted(gradcheck.CASES), action="append",
                   help="restrict to these layers (repeatable)")
    return p


# -- helpers ------------------------------------------------------------------

def _require_file(path: Path | None, what: str):
    if path is not None and not path.is_file():
        raise UsageError(f"{what} not found: {path}")


def _load_config(path: Path | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is None:
        return parser
    _require_file(path, "config file")
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    return parser


def _section(parser, name) -> dict[str, str]:
    return dict(parser[name]) if parser.has_section(name) else {}


def _expand_traces(paths: list[Path]) -> list[Path]:
    out = []
    for p in paths:
        if p.is_dir():
            found = sorted(q for q in p.iterdir() if q.suffix.lower() in TRACE_SUFFIXES)
            if not found:
                raise UsageError(f"no trace files ({', '.join(TRACE_SUFFIXES)}) in {p}")
            out.extend(found)
        elif p.is_file():
            out.append(p)
        else:
            raise UsageError(f"trace not found: {p}")
    return out


def _read_traces(paths):
    try:
        return [data.read_trace(p) for p in paths]
    except (data.TraceFormatError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _read_label_file(path):
    if path is None:
        return {}
    _require_file(path, "label file")
    try:
        return data.read_labels(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _threads(flag: int | None) -> int | None:
    if flag is not None:
        value = flag
    elif os.environ.get("SEISNET_THREADS"):
        try:
            value = int(os.environ["SEISNET_THREADS"])
        except ValueError:
            raise UsageError(f"SEISNET_THREADS must be an integer, got {os.environ['SEISNET_THREADS']!r}") from None
    else:
        return None
    if value < 1:
        raise UsageError(f"--threads must be >= 1, got {value}")
    return value


@contextlib.contextmanager
def _thread_cap(n: int | None):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


def _seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def _print_effective(name: str, settings: dict):
    print(f"[{name}]", file=sys.stderr)
    for k, v in settings.items():
        print(f"  {k} = {v}", file=sys.stderr)


def _arch_spec(parser, preset_flag: str | None) -> model.ArchSpec:
    sect = configparser.ConfigParser()
    keys = _section(parser, "arch")
    preset = preset_flag or keys.pop("preset", "canonical")
    keys.pop("preset", None)
    if preset not in ("canonical", "mini"):
        raise UsageError(f"[arch] unknown preset {preset!r}")
    base = model.canonical_spec() if preset == "canonical" else model.mini_spec()
    sect["arch"] = keys
    try:
        return model.ArchSpec.from_config(sect, base=base)
    except model.SpecError as exc:
        raise UsageError(str(exc)) from None


def _int_option(parser, section, key, default):
    try:
        return parser.getint(section, key, fallback=default)
    except ValueError:
        raise UsageError(f"[{section}] {key} must be an integer") from None


def _float_option(parser, section, key, default):
    try:
        return parser.getfloat(section, key, fallback=default)
    except ValueError:
        raise UsageError(f"[{section}] {key} must be a number") from None


# -- reporting ------------------------------------------------------------------

def emit_report(report: detect.EvalReport | None, detections: list[detect.Detection], sink,
                traces: list[data.Trace] = ()) -> list[Path]:
    """Write ``detections.csv``, ``metrics.csv`` (when scored) and one plot CSV per trace."""
    sink = Path(sink)
    sink.mkdir(parents=True, exist_ok=True)
    written = [sink / "detections.csv"]
    detect.write_detections(detections, written[0])
    if report is not None:
        written.append(sink / "metrics.csv")
        detect.write_metrics(report, written[-1])
    for tr in traces:
        written.append(sink / f"plot_{tr.trace_id}.csv")
        detect.write_plot_csv(tr, detections, written[-1])
    return written


# -- subcommands ------------------------------------------------------------------

def cmd_generate(args, parser) -> int:
    overrides = {"days": args.days, "seed": args.seed}
    if args.preset:
        parser = _copy_with(parser, "synth", preset=args.preset)
    try:
        cfg = synth.SynthConfig.from_config(parser, **overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    settings = asdict(cfg)
    settings["format"] = args.format
    _print_effective("synth", settings)
    traces, labels = synth.generate_synthetic(cfg)
    out = args.out
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for tr in traces:
        data.write_trace(tr, out / "traces" / f"{tr.trace_id}.{args.format}")
    data.write_labels({t.trace_id: ls.events for t, ls in zip(traces, labels)}, out / "labels.csv")
    data.write_labels({t.trace_id: ls.negatives for t, ls in zip(traces, labels)}, out / "negatives.csv")
    with fileio.atomic_write(out / "synth.cfg", "w") as fh:
        cfg.to_config().write(fh)
    n_events = sum(len(ls.events) for ls in labels)
    print(f"wrote {len(traces)} traces with {n_events} events to {out}")
    return EXIT_OK


def _copy_with(parser, section, **kw):
    fresh = configparser.ConfigParser()
    fresh.read_dict({s: dict(parser[s]) for s in parser.sections()})
    if not fresh.has_section(section):
        fresh.add_section(section)
    for k, v in kw.items():
        fresh[section][k] = str(v)
    return fresh


def cmd_train(args, parser) -> int:
    paths = _expand_traces(args.traces)
    events = _read_label_file(args.labels)
    picked = _read_label_file(args.negatives)
    spec = _arch_spec(parser, args.arch)
    try:
        cfg = train.TrainConfig.from_config(parser, epochs=args.epochs, lr=args.lr, seed=args.seed,
                                            batch_size=args.batch_size)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    neg = _section(parser, "negatives")
    unknown = set(neg) - {"random_count", "use_picked", "picked_shifts"}
    if unknown:
        raise UsageError(f"[negatives] unknown keys {sorted(unknown)}")
    random_count = args.random_negatives if args.random_negatives is not None else \
        _int_option(parser, "negatives", "random_count", 330)
    try:
        use_picked = parser.getboolean("negatives", "use_picked", fallback=True)
        shifts = tuple(int(v) for v in neg.get("picked_shifts", "0").split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"[negatives] {exc}") from None
    init_seed, neg_seed, shuffle_seed = _seeds(cfg.seed, 3)
    policy = data.NegativePolicy(random_count=random_count, use_picked=use_picked, seed=neg_seed,
                                 picked_shifts=shifts or (0,))
    _print_effective("arch", spec.to_dict())
    _print_effective("train", asdict(cfg))
    _print_effective("negatives", {"random_count": policy.random_count, "use_picked": policy.use_picked,
                                   "picked_shifts": ",".join(map(str, policy.picked_shifts))})

    traces = _read_traces(paths)
    ids = {t.trace_id for t in traces}
    for name, table in (("labels", events), ("negatives", picked)):
        stray = sorted(set(table) - ids)
        if stray:
            raise UsageError(f"{name} mention traces that were not given: {', '.join(stray)}")
    try:
        labels = data.label_sets(traces, events, picked)
        dataset = data.make_training_set(traces, labels, spec.input_length, policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    n_pos = sum(w.label > 0 for w in dataset)
    print(f"training on {len(dataset)} windows ({n_pos} events) from {len(traces)} traces", file=sys.stderr)
    run_cfg = train.TrainConfig(**{**asdict(cfg), "seed": shuffle_seed})
    try:
        params, history, _ = train.train(dataset, model.build_model(spec, seed=init_seed), run_cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    params.extra = {"seed": cfg.seed, "epochs": cfg.epochs}
    model.save_weights(params, args.out)
    if args.history:
        train.write_history_csv(history, args.history)
    if history:
        last = history[-1]
        print(f"epoch {last.epoch}: loss {last.mean_loss:.5f} accuracy {last.train_accuracy:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_detect(args, parser) -> int:
    _require_file(args.weights, "weight file")
    paths = _expand_traces(args.traces)
    events = _read_label_file(args.labels) if args.labels else None
    offset = args.offset if args.offset is not None else _int_option(parser, "detect", "offset", 6000)
    threshold = args.threshold if args.threshold is not None else \
        _float_option(parser, "detect", "threshold", 0.0)
    if offset < 1:
        raise UsageError(f"offset must be >= 1, got {offset}")
    _print_effective("detect", {"offset": offset, "threshold": threshold, "weights": args.weights,
                                "traces": len(paths)})
    traces = _read_traces(paths)
    try:
        params = model.load_weights(args.weights)
    except model.WeightFileError as exc:
        raise UsageError(f"{args.weights}: {exc}") from None
    short = [t.trace_id for t in traces if len(t) < params.spec.input_length]
    if short:
        raise UsageError(f"traces shorter than the model window ({params.spec.input_length}): {', '.join(short)}")
    labels = None
    if events is not None:
        labels = data.label_sets(traces, events)
    result = detect.detect_pipeline(traces, params, offset, labels, threshold)
    emit_report(result.report, result.detections, args.out, [] if args.no_plot else traces)
    print(f"{result.windows} windows in {result.seconds:.1f} s ({result.windows_per_second:.1f}/s), "
          f"{result.raw_count} positive, {len(result.detections)} after dedup")
    if result.report is not None:
        print(result.report.summary())
    return EXIT_OK


def cmd_evaluate(args, parser) -> int:
    _require_file(args.detections, "detection file")
    events = _read_label_file(args.labels)
    try:
        dets = detect.read_detections(args.detections)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    try:
        report = detect.evaluate(dets, {tid: data.LabelSet(ev) for tid, ev in events.items()})
    except ValueError as exc:
        raise UsageError(f"{args.labels}: {exc}") from None
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        detect.write_metrics(report, args.out / "metrics.csv")
    print(report.summary())
    return EXIT_OK


def cmd_inspect(args, parser) -> int:
    if args.weights is not None:
        _require_file(args.weights, "weight file")
        try:
            params = model.load_weights(args.weights)
        except model.WeightFileError as exc:
            raise UsageError(f"{args.weights}: {exc}") from None
        spec = params.spec
        count = model.count_parameters(params)
        print(f"weights: {args.weights} (step {params.step}, dtype {np.dtype(params.dtype).name})")
    else:
        spec = _arch_spec(parser, args.arch)
        count = model.count_parameters(spec)
    print("ArchSpec:")
    for k, v in spec.to_dict().items():
        print(f"  {k} = {v}")
    print(f"  digest = {spec.digest()}")
    print(f"parameters: {count}")
    print("shape ladder:")
    print(f"  {'stage':<12s} {'layers':<24s} {'length':>7s} {'channels':>8s}")
    for stage, layers, length, channels in spec.shape_ladder():
        print(f"  {stage:<12s} {layers:<24s} {length:>7d} {channels:>8d}")
    return EXIT_OK


def cmd_gradcheck(args, parser) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    seed = args.seed if args.seed is not None else 0
    layers = args.layer or list(gradcheck.CASES)
    _print_effective("gradcheck", {"trials": args.trials, "seed": seed, "layers": ",".join(layers),
                                   "backend": kernels.active.NAME})
    reports = [gradcheck.check_gradients(name, args.trials, seed=seed) for name in layers]
    for r in reports:
        print("\n".join(r.lines()))
    ok = all(r.passed for r in reports)
    print("all gradient checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "detect": cmd_detect,
            "evaluate": cmd_evaluate, "inspect": cmd_inspect, "gradcheck": cmd_gradcheck}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        CommandConfig.from_args(args).validate()
        if args.backend and args.backend not in kernels.available():
            raise UsageError(f"kernel backend {args.backend!r} is not available; have {kernels.available()}")
        config = _load_config(args.config)
        threads = _threads(args.threads)
        with contextlib.ExitStack() as stack:
            if args.backend:
                stack.enter_context(kernels.using(args.backend))
            stack.enter_context(_thread_cap(threads))
            return COMMANDS[args.subcommand](args, config)
    except UsageError as exc:
        print(f"seisnet {args.subcommand}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - anything past validation is a runtime failure
        print(f"seisnet {args.subcommand}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
