"""Seismic-Net: a densely connected 1D CNN that scores fixed-length windows.

Layout: stem convolution, then ``block_count`` dense blocks with an average
pool in front of each one (the first pool follows the stem), a global mean
over time, and a one-output linear head. Inside a block, layer ``l`` sees
the concatenation of the block input and all earlier layer outputs, so its
input width is ``d0 + growth_rate * l``, and applies BN -> ReLU -> conv.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import fileio
from .layers import (
    BatchNormParams,
    ConvParams,
    LinearParams,
    Mode,
    ShapeError,
    avgpool1d,
    avgpool1d_backward,
    batchnorm_backward,
    batchnorm_forward,
    concat_channels,
    conv1d_backward,
    conv1d_forward,
    global_avgpool,
    global_avgpool_backward,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    same_ceil,
)


class SpecError(ValueError):
    """An ArchSpec whose pieces do not fit together."""


class WeightFileError(ValueError):
    """Weight file that cannot be loaded (corrupt, truncated, wrong architecture)."""


@dataclass(frozen=True)
class ArchSpec:
    input_length: int = 18000
    input_channels: int = 1
    stem_kernel: int = 7
    stem_filters: int = 24
    stem_stride: int = 2
    block_count: int = 10
    layers_per_block: int = 6
    growth_rate: int = 12
    block_kernel: int = 3
    pool_window: int = 2
    pool_stride: int = 2
    head_outputs: int = 1
    # Optional declared window of the final (global) pool; when given it must
    # equal the length actually reaching the pool.
    final_pool_window: int | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "final_pool_window" and v is None:
                continue
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise SpecError(f"{f.name} must be an integer, got {v!r}")
            minimum = 0 if f.name in ("block_count",) else 1
            if v < minimum:
                raise SpecError(f"{f.name} must be >= {minimum}, got {v}")
        if self.block_count > 0 and self.layers_per_block < 1:
            raise SpecError("dense blocks need at least one layer")
        if self.final_pool_window is not None:
            final = self.final_length()
            if self.final_pool_window != final:
                raise SpecError(
                    f"global pool window {self.final_pool_window} does not match final length {final}")

    def block_input_channels(self, block: int) -> int:
        return self.stem_filters + block * self.layers_per_block * self.growth_rate

    def layer_input_channels(self, block: int, layer: int) -> int:
        return self.block_input_channels(block) + layer * self.growth_rate

    @property
    def feature_channels(self) -> int:
        return self.block_input_channels(self.block_count)

    def stem_length(self) -> int:
        return same_ceil(self.input_length, self.stem_kernel, self.stem_stride)[0]

    def block_lengths(self) -> list[int]:
        n = self.stem_length()
        out = []
        for _ in range(self.block_count):
            n = same_ceil(n, self.pool_window, self.pool_stride)[0]
            out.append(n)
        return out

    def final_length(self) -> int:
        if self.block_count == 0:
            return same_ceil(self.stem_length(), self.pool_window, self.pool_stride)[0]
        return self.block_lengths()[-1]

    def shape_ladder(self) -> list[tuple[str, str, int, int]]:
        """``(stage, layers, length, channels)`` rows from input to pooled features."""
        rows = [("Input", "-", self.input_length, self.input_channels)]
        n = self.stem_length()
        rows.append(("Convolution", f"conv{self.stem_kernel}, {self.stem_filters}, /{self.stem_stride}",
                     n, self.stem_filters))
        pool = f"avg-pool{self.pool_window}, /{self.pool_stride}"
        if self.block_count == 0:
            n = same_ceil(n, self.pool_window, self.pool_stride)[0]
            rows.append(("Pool", pool, n, self.stem_filters))
        for b in range(self.block_count):
            n = same_ceil(n, self.pool_window, self.pool_stride)[0]
            rows.append(("Pool", pool, n, self.block_input_channels(b)))
            rows.append((f"D{b + 1}", f"[conv{self.block_kernel}, {self.growth_rate}] x {self.layers_per_block}",
                         n, self.block_input_channels(b + 1)))
        rows.append(("Pool", f"avg-pool{n}, {n}", 1, self.feature_channels))
        return rows

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown ArchSpec keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # config files: an INI [arch] section, one key per field
    def to_config(self, parser: configparser.ConfigParser | None = None, section: str = "arch"):
        parser = parser or configparser.ConfigParser()
        parser[section] = {k: str(v) for k, v in self.to_dict().items() if v is not None}
        return parser

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser, section: str = "arch",
                    base: "ArchSpec | None" = None) -> "ArchSpec":
        d = (base or cls()).to_dict()
        if parser.has_section(section):
            for key, raw in parser[section].items():
                if key not in d:
                    raise SpecError(f"[{section}] unknown key {key!r}")
                try:
                    d[key] = None if raw.strip().lower() in ("", "none") else int(raw)
                except ValueError:
                    raise SpecError(f"[{section}] {key} must be an integer, got {raw!r}") from None
        return cls(**d)


def canonical_spec() -> ArchSpec:
    """The full 18,000-sample network: 10 blocks of 6 layers, growth rate 12."""
    return ArchSpec()


def mini_spec(**overrides) -> ArchSpec:
    """Desk-scale variant: 4,500-sample windows, 5 blocks of 4 layers, growth rate 12."""
    base = dict(input_length=4500, block_count=5, layers_per_block=4)
    base.update(overrides)
    return ArchSpec(**base)


@dataclass
class DenseLayerParams:
    bn: BatchNormParams
    conv: ConvParams


@dataclass
class ModelParams:
    spec: ArchSpec
    stem: ConvParams
    blocks: list[list[DenseLayerParams]]
    head: LinearParams
    step: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.stem.weight.dtype

    def trainable(self) -> dict[str, np.ndarray]:
        """Learnable tensors by name, in declaration order. Values alias the params."""
        out = {"stem.weight": self.stem.weight, "stem.bias": self.stem.bias}
        for b, block in enumerate(self.blocks):
            for l, layer in enumerate(block):
                pre = f"block{b}.layer{l}"
                out[f"{pre}.bn.gamma"] = layer.bn.gamma
                out[f"{pre}.bn.beta"] = layer.bn.beta
                out[f"{pre}.conv.weight"] = layer.conv.weight
                out[f"{pre}.conv.bias"] = layer.conv.bias
        out["head.weight"] = self.head.weight
        out["head.bias"] = self.head.bias
        return out

    def batchnorms(self) -> dict[str, BatchNormParams]:
        return {f"block{b}.layer{l}.bn": layer.bn
                for b, block in enumerate(self.blocks) for l, layer in enumerate(block)}

    def state(self) -> dict[str, np.ndarray]:
        """Every tensor including BN running statistics, in declaration order."""
        out = self.trainable()
        for name, bn in self.batchnorms().items():
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelParams":
        out = self.copy()
        for name, arr in out.state().items():
            _assign(out, name, arr.astype(dtype))
        return out


def _assign(params: ModelParams, name: str, value: np.ndarray):
    parts = name.split(".")
    if parts[0] in ("stem", "head"):
        setattr(getattr(params, parts[0]), parts[1], value)
        return
    b = int(parts[0][len("block"):])
    l = int(parts[1][len("layer"):])
    setattr(getattr(params.blocks[b][l], parts[2]), parts[3], value)


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build_model(spec: ArchSpec, init: str = "he", seed: int = 0, dtype=np.float32) -> ModelParams:
    """Allocate and initialise every parameter of ``spec``.

    ``init="he"`` draws conv/linear weights from N(0, 2/fan_in) with zero
    biases, unit gamma and zero beta; ``init="zeros"`` zeroes everything
    except gamma. Deterministic for a given seed.
    """
    if init not in ("he", "zeros"):
        raise ValueError(f"unknown init rule {init!r}")
    rng = np.random.default_rng(seed)
    zeros = init == "zeros"

    def conv(k, cin, cout, stride):
        w = np.zeros((k, cin, cout), dtype) if zeros else _he(rng, (k, cin, cout), k * cin, dtype)
        return ConvParams(w, np.zeros(cout, dtype), stride)

    stem = conv(spec.stem_kernel, spec.input_channels, spec.stem_filters, spec.stem_stride)
    blocks = []
    for b in range(spec.block_count):
        layers = []
        for l in range(spec.layers_per_block):
            c = spec.layer_input_channels(b, l)
            layers.append(DenseLayerParams(BatchNormParams.fresh(c, dtype),
                                           conv(spec.block_kernel, c, spec.growth_rate, 1)))
        blocks.append(layers)
    c = spec.feature_channels
    hw = np.zeros((spec.head_outputs, c), dtype) if zeros else _he(rng, (spec.head_outputs, c), c, dtype)
    head = LinearParams(hw, np.zeros(spec.head_outputs, dtype))
    return ModelParams(spec, stem, blocks, head)


def count_parameters(params: ModelParams | ArchSpec) -> int:
    """Exact number of learnable scalars (BN running statistics excluded)."""
    if isinstance(params, ArchSpec):
        spec = params
        n = spec.stem_kernel * spec.input_channels * spec.stem_filters + spec.stem_filters
        for b in range(spec.block_count):
            for l in range(spec.layers_per_block):
                c = spec.layer_input_channels(b, l)
                n += 2 * c + spec.block_kernel * c * spec.growth_rate + spec.growth_rate
        return n + (spec.feature_channels + 1) * spec.head_outputs
    return int(sum(a.size for a in params.trainable().values()))


@dataclass
class DenseBlockSaved:
    layers: list
    widths: list[int]


def dense_block_forward(x, layers: list[DenseLayerParams], mode=Mode.INFER, update_stats=True, keep=True):
    """Run one dense block; returns ``(features, saved)``.

    ``features`` has ``d0 + growth_rate * len(layers)`` channels.
    """
    mode = Mode(mode)
    cur = x
    saved = []
    widths = []
    for i, layer in enumerate(layers):
        if cur.shape[-1] != layer.bn.channels:
            raise ShapeError(f"dense layer {i}: input has {cur.shape[-1]} channels, expected {layer.bn.channels}")
        h, s_bn = batchnorm_forward(cur, layer.bn, mode, update_stats)
        a, s_relu = relu(h)
        out, s_conv = conv1d_forward(a, layer.conv)
        if keep:
            saved.append((s_bn, s_relu, s_conv))
        widths.append(cur.shape[-1])
        cur = concat_channels([cur, out])
    return cur, (DenseBlockSaved(saved, widths) if keep else None)


def dense_block_backward(grad, saved: DenseBlockSaved, layers: list[DenseLayerParams]):
    """Returns ``(grad_input, [(gamma, beta, conv_grads) per layer])``."""
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        s_bn, s_relu, s_conv = saved.layers[i]
        w = saved.widths[i]
        g_prev, g_out = grad[..., :w], grad[..., w:]
        g_a, cg = conv1d_backward(g_out, s_conv, layers[i].conv)
        g_h = relu_backward(g_a, s_relu)
        g_in, ggamma, gbeta = batchnorm_backward(g_h, s_bn, layers[i].bn)
        grads[i] = (ggamma, gbeta, cg)
        grad = g_prev + g_in
    return grad, grads


@dataclass
class Tape:
    """Shapes seen by a forward pass plus, in train mode, what backward needs."""
    shapes: list[tuple[str, tuple]] = field(default_factory=list)
    stem: object = None
    pools: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    gpool: object = None
    head: object = None
    batched: bool = True


def forward(x, params: ModelParams, mode=Mode.INFER, update_stats=True):
    """Score windows. Returns ``(z, tape)``.

    ``x`` is ``(length, channels)`` for one window (``z`` is then a float)
    or ``(batch, length, channels)``. In infer mode the tape records shapes
    only.
    """
    mode = Mode(mode)
    spec = params.spec
    x = np.asarray(x)
    batched = x.ndim == 3
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"forward: expected (length, channels) or (batch, length, channels), got {x.shape}")
    if x.shape[1] != spec.input_length or x.shape[2] != spec.input_channels:
        raise ShapeError(f"forward: input {x.shape[1:]} but the model expects "
                         f"{(spec.input_length, spec.input_channels)}")
    keep = mode is Mode.TRAIN
    tape = Tape(batched=batched)
    tape.shapes.append(("input", x.shape[1:]))
    h, tape.stem = conv1d_forward(x.astype(params.dtype, copy=False), params.stem)
    tape.shapes.append(("stem", h.shape[1:]))
    if spec.block_count == 0:
        h, s = avgpool1d(h, spec.pool_window, spec.pool_stride)
        tape.pools.append(s)
        tape.shapes.append(("pool0", h.shape[1:]))
    for b, block in enumerate(params.blocks):
        h, s = avgpool1d(h, spec.pool_window, spec.pool_stride)
        tape.pools.append(s)
        tape.shapes.append((f"pool{b}", h.shape[1:]))
        if h.shape[-1] != spec.block_input_channels(b):
            raise ShapeError(f"block {b}: {h.shape[-1]} channels, expected {spec.block_input_channels(b)}")
        h, s = dense_block_forward(h, block, mode, update_stats, keep)
        tape.blocks.append(s)
        tape.shapes.append((f"D{b + 1}", h.shape[1:]))
    feats, tape.gpool = global_avgpool(h)
    tape.shapes.append(("global_pool", (1, feats.shape[1])))
    z, tape.head = linear_forward(feats, params.head)
    z = z[:, 0] if spec.head_outputs == 1 else z
    if not keep:
        tape.stem = None
        tape.pools = []
        tape.head = None
    if not batched:
        z = float(z[0]) if spec.head_outputs == 1 else z[0]
    return z, tape


def backward(grad_z, tape: Tape, params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients of every learnable tensor, keyed like ``params.trainable()``."""
    if tape.head is None:
        raise ValueError("backward needs a tape recorded in train mode")
    spec = params.spec
    g = np.asarray(grad_z, dtype=params.dtype)
    g = g.reshape(-1, spec.head_outputs)
    grads: dict[str, np.ndarray] = {}
    g_feat, hg = linear_backward(g, tape.head, params.head)
    grads["head.weight"], grads["head.bias"] = hg.weight, hg.bias
    h = global_avgpool_backward(g_feat, tape.gpool)
    for b in reversed(range(spec.block_count)):
        h, layer_grads = dense_block_backward(h, tape.blocks[b], params.blocks[b])
        for l, (ggamma, gbeta, cg) in enumerate(layer_grads):
            pre = f"block{b}.layer{l}"
            grads[f"{pre}.bn.gamma"] = ggamma
            grads[f"{pre}.bn.beta"] = gbeta
            grads[f"{pre}.conv.weight"] = cg.weight
            grads[f"{pre}.conv.bias"] = cg.bias
        h = avgpool1d_backward(h, tape.pools[b])
    if spec.block_count == 0:
        h = avgpool1d_backward(h, tape.pools[0])
    _, sg = conv1d_backward(h, tape.stem, params.stem)
    grads["stem.weight"], grads["stem.bias"] = sg.weight, sg.bias
    order = params.trainable()
    return {k: grads[k] for k in order}


def predict(params: ModelParams, windows, batch_size: int = 64) -> np.ndarray:
    """Infer-mode scores for ``windows`` of shape ``(n, length)`` or ``(n, length, channels)``."""
    w = np.asarray(windows)
    if w.ndim == 2:
        w = w[..., None]
    out = np.empty(len(w), dtype=np.float64)
    for i in range(0, len(w), batch_size):
        z, _ = forward(w[i:i + batch_size], params, Mode.INFER)
        out[i:i + batch_size] = z
    return out


WEIGHTS_KIND = "seisnet-weights"


def weights_to_bytes(params: ModelParams, dtype="<f4") -> bytes:
    header = {
        "kind": WEIGHTS_KIND,
        "arch": params.spec.to_dict(),
        "arch_hash": params.spec.digest(),
        "step": int(params.step),
        "bn_initialized": [bn.initialized for bn in params.batchnorms().values()],
        "extra": params.extra,
    }
    tensors = [(k, np.asarray(v, dtype=dtype)) for k, v in params.state().items()]
    return fileio.encode_container(header, tensors)


def save_weights(params: ModelParams, path, dtype="<f4") -> None:
    """Write a self-describing weight file (ArchSpec header, float32 tensors, SHA-256)."""
    blob = weights_to_bytes(params, dtype)
    with fileio.atomic_write(path, "wb") as fh:
        fh.write(blob)


def weights_from_bytes(blob: bytes, expected: ArchSpec | None = None) -> ModelParams:
    try:
        header, tensors = fileio.decode_container(blob)
    except fileio.ContainerError as exc:
        raise WeightFileError(str(exc)) from None
    if header.get("kind") != WEIGHTS_KIND:
        raise WeightFileError(f"not a weight file (kind={header.get('kind')!r})")
    try:
        spec = ArchSpec.from_dict(header["arch"])
    except (SpecError, KeyError, TypeError) as exc:
        raise WeightFileError(f"bad ArchSpec header: {exc}") from None
    if spec.digest() != header.get("arch_hash"):
        raise WeightFileError("ArchSpec hash in header does not match the stored ArchSpec")
    if expected is not None and expected.digest() != spec.digest():
        raise WeightFileError(f"ArchSpec mismatch: file has {spec.digest()}, expected {expected.digest()}")
    dtype = next(iter(tensors.values())).dtype if tensors else np.float32
    params = build_model(spec, init="zeros", dtype=dtype)
    names = list(params.state())
    if list(tensors) != names:
        raise WeightFileError("tensor table does not match the ArchSpec layout")
    for name in names:
        if tensors[name].shape != params.state()[name].shape:
            raise WeightFileError(f"tensor {name}: shape {tensors[name].shape} does not fit the ArchSpec")
        _assign(params, name, tensors[name])
    for bn, flag in zip(params.batchnorms().values(), header.get("bn_initialized", [])):
        bn.initialized = bool(flag)
    params.step = int(header.get("step", 0))
    params.extra = dict(header.get("extra", {}))
    return params


def load_weights(path, expected: ArchSpec | None = None) -> ModelParams:
    return weights_from_bytes(Path(path).read_bytes(), expected)
