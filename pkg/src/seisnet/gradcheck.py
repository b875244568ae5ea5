"""Finite-difference checks of every hand-written backward pass.

Each case draws a random small instance in double precision, forms a
scalar loss ``sum(output * R)`` for a fixed random ``R`` (the full model
uses the mean logistic loss instead), and compares the analytic gradient
against central differences. The error of a group is
``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import (
    BatchNormParams,
    ConvParams,
    LinearParams,
    Mode,
    avgpool1d,
    avgpool1d_backward,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
)

DEFAULT_TOLERANCE = {"conv1d": 1e-4, "avgpool1d": 1e-4, "batchnorm": 1e-4, "relu": 1e-4,
                     "linear": 1e-4, "model": 1e-3}


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6,
                       indices=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place and restored).

    With ``indices`` (flat positions) only those entries are filled; the rest
    stay NaN.
    """
    flat = arr.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(arr.shape)


def relative_error(analytic, numeric, floor=1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / scale)


@dataclass
class GradCheckReport:
    layer: str
    tolerance: float
    trials: int
    errors: dict[str, float] = field(default_factory=dict)  # worst error per group over trials

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def record(self, group, err):
        self.errors[group] = max(self.errors.get(group, 0.0), err)

    def lines(self) -> list[str]:
        status = "PASS" if self.passed else "FAIL"
        out = [f"{self.layer}: {status} (tol {self.tolerance:g}, {self.trials} trials)"]
        out += [f"  {g:<28s} max rel err {e:.3e}" for g, e in self.errors.items()]
        return out


def _case_conv(rng):
    k = int(rng.integers(1, 6))
    stride = int(rng.integers(1, 4))
    n = int(rng.integers(5, 16))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = rng.standard_normal((2, n, cin))
    p = ConvParams(rng.standard_normal((k, cin, cout)), rng.standard_normal(cout), stride)
    r = rng.standard_normal(conv1d_forward(x, p)[0].shape)

    def loss():
        return float(np.sum(conv1d_forward(x, p)[0] * r))

    y, saved = conv1d_forward(x, p)
    gx, gp = conv1d_backward(r, saved, p)
    return loss, [("input", x, gx), ("weight", p.weight, gp.weight), ("bias", p.bias, gp.bias)]


def _case_pool(rng):
    window = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 4))
    x = rng.standard_normal((2, int(rng.integers(3, 20)), 3))
    r = rng.standard_normal(avgpool1d(x, window, stride)[0].shape)

    def loss():
        return float(np.sum(avgpool1d(x, window, stride)[0] * r))

    _, saved = avgpool1d(x, window, stride)
    return loss, [("input", x, avgpool1d_backward(r, saved))]


def _case_bn(rng):
    c = int(rng.integers(1, 5))
    x = rng.standard_normal((3, int(rng.integers(2, 9)), c)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
    p = BatchNormParams(rng.standard_normal(c), rng.standard_normal(c), np.zeros(c), np.ones(c))
    r = rng.standard_normal(x.shape)

    def loss():
        return float(np.sum(batchnorm_forward(x, p, Mode.TRAIN, update_stats=False)[0] * r))

    _, saved = batchnorm_forward(x, p, Mode.TRAIN, update_stats=False)
    gx, gg, gb = batchnorm_backward(r, saved, p)
    return loss, [("input", x, gx), ("gamma", p.gamma, gg), ("beta", p.beta, gb)]


def _case_relu(rng):
    x = rng.standard_normal((2, 9, 3))
    # keep inputs clear of the kink
    x = np.sign(x) * (np.abs(x) + 1e-2)
    r = rng.standard_normal(x.shape)

    def loss():
        return float(np.sum(relu(x)[0] * r))

    _, saved = relu(x)
    return loss, [("input", x, relu_backward(r, saved))]


def _case_linear(rng):
    din, dout = int(rng.integers(1, 8)), int(rng.integers(1, 4))
    x = rng.standard_normal((3, din))
    p = LinearParams(rng.standard_normal((dout, din)), rng.standard_normal(dout))
    r = rng.standard_normal((3, dout))

    def loss():
        return float(np.sum(linear_forward(x, p)[0] * r))

    _, saved = linear_forward(x, p)
    gx, gp = linear_backward(r, saved, p)
    return loss, [("input", x, gx), ("weight", p.weight, gp.weight), ("bias", p.bias, gp.bias)]


def gradcheck_spec():
    from .model import ArchSpec
    return ArchSpec(input_length=64, stem_kernel=7, stem_filters=8, stem_stride=2,
                    block_count=2, layers_per_block=2, growth_rate=4)


def _case_model(rng, coords_per_group=4):
    from .model import backward, build_model, forward
    from .train import logistic_loss, logistic_loss_grad

    spec = gradcheck_spec()
    params = build_model(spec, seed=int(rng.integers(2**31)), dtype=np.float64)
    # non-trivial BN affine parameters and biases
    for name, arr in params.trainable().items():
        if not name.endswith("weight"):
            arr += 0.1 * rng.standard_normal(arr.shape)
    x = rng.standard_normal((4, spec.input_length, 1))
    y = np.array([1.0, -1.0, 1.0, -1.0])

    def loss():
        z, _ = forward(x, params, Mode.TRAIN, update_stats=False)
        return float(np.mean(logistic_loss(y, z)))

    z, tape = forward(x, params, Mode.TRAIN, update_stats=False)
    grads = backward(logistic_loss_grad(y, z) / len(y), tape, params)
    groups = []
    for name, arr in params.trainable().items():
        groups.append((name, arr, grads[name]))
    return loss, groups, coords_per_group


CASES = {"conv1d": _case_conv, "avgpool1d": _case_pool, "batchnorm": _case_bn,
         "relu": _case_relu, "linear": _case_linear, "model": _case_model}


def check_gradients(layer: str, trial_count: int = 20, tolerance: float | None = None,
                    seed: int = 0, eps: float = 1e-6) -> GradCheckReport:
    """Run ``trial_count`` randomised finite-difference checks of ``layer``.

    ``layer`` is one of ``CASES``. A failing check is reported, not raised.
    """
    if layer not in CASES:
        raise ValueError(f"unknown layer {layer!r}; choose from {sorted(CASES)}")
    tol = DEFAULT_TOLERANCE[layer] if tolerance is None else tolerance
    report = GradCheckReport(layer, tol, trial_count)
    for trial in range(trial_count):
        rng = np.random.default_rng([seed, trial])
        case = CASES[layer](rng)
        loss, groups = case[0], case[1]
        per_group = case[2] if len(case) > 2 else None
        for name, arr, analytic in groups:
            idx = None
            if per_group is not None and arr.size > per_group:
                idx = rng.choice(arr.size, size=per_group, replace=False)
            numeric = numerical_gradient(loss, arr, eps, idx)
            report.record(name if per_group is None else _group_name(name), relative_error(analytic, numeric))
    return report


def _group_name(name):
    # fold per-layer names into kinds so reports stay short: block1.layer0.bn.gamma -> bn.gamma
    parts = name.split(".")
    return ".".join(parts[2:]) if parts[0].startswith("block") else name


def run_all(trial_count: int = 20, seed: int = 0) -> list[GradCheckReport]:
    return [check_gradients(name, trial_count, seed=seed) for name in CASES]
