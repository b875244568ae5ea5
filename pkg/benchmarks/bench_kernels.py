"""Time the compiled kernels against the numpy fallback.

Shapes follow the mini network on a training batch (50 windows of 4,500
samples) plus one full-model training step and one canonical inference
window. Run from the repository root::

    python benchmarks/bench_kernels.py [--repeat N] [--csv out.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from seisnet import kernels
from seisnet.layers import Mode
from seisnet.model import backward, build_model, canonical_spec, forward, mini_spec
from seisnet.train import logistic_loss_grad


def _best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    k = kernels.get  # resolved per call so the active backend is picked up
    b, n, c = 50, 1125, 48
    x = rng.standard_normal((b, n, c)).astype(np.float32)
    w = (0.1 * rng.standard_normal((3, c, 12))).astype(np.float32)
    bias = np.zeros(12, np.float32)
    gy = rng.standard_normal((b, n, 12)).astype(np.float32)
    xs = rng.standard_normal((b, 4500, 1)).astype(np.float32)
    ws = (0.1 * rng.standard_normal((7, 1, 24))).astype(np.float32)
    gamma, beta = np.ones(c, np.float32), np.zeros(c, np.float32)
    _, x_hat, _, _, inv_std = k().batchnorm_train_forward(x, gamma, beta, 1e-5)
    yield "conv k3 stride1 fwd", lambda: k().conv1d_forward(x, w, bias, 1, 1, n)
    yield "conv k3 stride1 bwd", lambda: k().conv1d_backward(gy, x, w, 1, 1)
    yield "conv k7 stride2 fwd", lambda: k().conv1d_forward(xs, ws, np.zeros(24, np.float32), 2, 2, 2250)
    yield "avgpool 2/2 fwd", lambda: k().avgpool1d_forward(x, 2, 2, 0, (n + 1) // 2)
    yield "batchnorm train fwd", lambda: k().batchnorm_train_forward(x, gamma, beta, 1e-5)
    yield "batchnorm train bwd", lambda: k().batchnorm_train_backward(x, x_hat, gamma, inv_std)
    yield "relu fwd", lambda: k().relu_forward(x)
    yield "relu bwd", lambda: k().relu_backward(x, x)

    spec = mini_spec()
    params = build_model(spec, seed=0)
    batch = rng.standard_normal((50, spec.input_length, 1)).astype(np.float32)
    y = np.where(np.arange(50) % 2 == 0, 1.0, -1.0)

    def step():
        z, tape = forward(batch, params, Mode.TRAIN, update_stats=False)
        backward(logistic_loss_grad(y, z) / 50, tape, params)

    yield "mini model train step (b=50)", step

    big = build_model(canonical_spec(), seed=0)
    window = rng.standard_normal((1, 18000, 1)).astype(np.float32)
    forward(window, big, Mode.TRAIN)  # initialise BN statistics
    yield "canonical infer (1 window)", lambda: forward(window, big, Mode.INFER)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write results here")
    args = ap.parse_args(argv)

    backends = kernels.available()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy backend is timed", file=sys.stderr)
    rows = []
    for name in backends:
        with kernels.using(name):
            for label, fn in cases(np.random.default_rng(0)):
                rows.append((label, name, _best_of(fn, args.repeat)))

    table = {}
    for label, name, t in rows:
        table.setdefault(label, {})[name] = t
    print(f"{'case':<30s} " + " ".join(f"{b + ' ms':>12s}" for b in backends) + "   speedup")
    for label, times in table.items():
        cols = " ".join(f"{1e3 * times.get(b, float('nan')):12.2f}" for b in backends)
        speed = ""
        if "compiled" in times and "numpy" in times:
            speed = f"{times['numpy'] / times['compiled']:8.2f}x"
        print(f"{label:<30s} {cols}   {speed}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "backend", "seconds"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
