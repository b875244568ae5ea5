import configparser

import numpy as np
import pytest

from seisnet import fileio
from seisnet.layers import BatchNormStateError, Mode, ShapeError
from seisnet.model import (
    ArchSpec,
    SpecError,
    WeightFileError,
    backward,
    build_model,
    canonical_spec,
    count_parameters,
    forward,
    load_weights,
    mini_spec,
    predict,
    save_weights,
    weights_from_bytes,
    weights_to_bytes,
)


def tiny_spec(**kw):
    base = dict(input_length=64, stem_filters=8, block_count=2, layers_per_block=2, growth_rate=4)
    base.update(kw)
    return ArchSpec(**base)


def test_ladder_canonical():
    lengths = [row[2] for row in canonical_spec().shape_ladder()]
    assert lengths[:3] == [18000, 9000, 4500]
    d_rows = [r for r in canonical_spec().shape_ladder() if r[0].startswith("D")]
    assert [r[2] for r in d_rows] == [4500, 2250, 1125, 563, 282, 141, 71, 36, 18, 9]
    assert [r[3] for r in d_rows] == [24 + 72 * (b + 1) for b in range(10)]
    assert canonical_spec().shape_ladder()[-1][2:] == (1, 744)


def test_feature_width_law():
    spec = canonical_spec()
    for b in range(spec.block_count):
        for l in range(spec.layers_per_block):
            assert spec.layer_input_channels(b, l) == 24 + 72 * b + 12 * l


def test_spec_validation():
    with pytest.raises(SpecError):
        ArchSpec(growth_rate=0)
    with pytest.raises(SpecError):
        ArchSpec(final_pool_window=10)  # the canonical final map has 9 timestamps
    assert ArchSpec(final_pool_window=9).final_length() == 9


def test_spec_config_roundtrip_and_digest():
    spec = mini_spec()
    parser = spec.to_config()
    assert ArchSpec.from_config(parser) == spec
    assert spec.digest() != canonical_spec().digest()
    bad = configparser.ConfigParser()
    bad["arch"] = {"bogus": "1"}
    with pytest.raises(SpecError):
        ArchSpec.from_config(bad)


def test_count_parameters_spec_and_params_agree():
    for spec in (tiny_spec(), mini_spec()):
        assert count_parameters(spec) == count_parameters(build_model(spec))


def test_forward_shapes_and_tape():
    spec = tiny_spec()
    params = build_model(spec, seed=1)
    x = np.random.default_rng(0).standard_normal((3, 64, 1)).astype(np.float32)
    z, tape = forward(x, params, Mode.TRAIN)
    assert z.shape == (3,)
    names = [n for n, _ in tape.shapes]
    assert names == ["input", "stem", "pool0", "D1", "pool1", "D2", "global_pool"]
    z1, _ = forward(x[0], params, Mode.INFER)
    assert isinstance(z1, float)


def test_forward_rejects_wrong_length():
    params = build_model(tiny_spec())
    with pytest.raises(ShapeError):
        forward(np.zeros((1, 63, 1)), params)


def test_infer_before_training_raises():
    params = build_model(tiny_spec())
    with pytest.raises(BatchNormStateError):
        predict(params, np.zeros((1, 64)))


def test_infer_is_batch_independent():
    params = build_model(tiny_spec(), seed=2, dtype=np.float64)
    x = np.random.default_rng(1).standard_normal((5, 64, 1))
    forward(x, params, Mode.TRAIN)
    full = predict(params, x)
    single = np.array([predict(params, x[i:i + 1])[0] for i in range(5)])
    np.testing.assert_allclose(full, single, rtol=1e-12)


def test_backward_keys_and_shapes():
    params = build_model(tiny_spec(), seed=0)
    x = np.random.default_rng(0).standard_normal((2, 64, 1)).astype(np.float32)
    z, tape = forward(x, params, Mode.TRAIN)
    grads = backward(np.ones_like(z), tape, params)
    trainable = params.trainable()
    assert list(grads) == list(trainable)
    for k in grads:
        assert grads[k].shape == trainable[k].shape


def test_backward_needs_train_tape():
    params = build_model(tiny_spec(), seed=0)
    x = np.zeros((2, 64, 1), np.float32)
    forward(x + 1, params, Mode.TRAIN)
    z, tape = forward(x, params, Mode.INFER)
    with pytest.raises(ValueError):
        backward(np.ones_like(z), tape, params)


def test_zero_block_model():
    spec = ArchSpec(input_length=100, block_count=0)
    params = build_model(spec, seed=0)
    assert spec.final_length() == 25
    z, tape = forward(np.ones((2, 100, 1), np.float32), params, Mode.TRAIN)
    assert z.shape == (2,)
    assert count_parameters(spec) == 7 * 24 + 24 + 24 + 1


def test_build_model_deterministic():
    a, b = build_model(mini_spec(), seed=5), build_model(mini_spec(), seed=5)
    for k, v in a.state().items():
        np.testing.assert_array_equal(v, b.state()[k])


def test_weights_roundtrip_bitwise(tmp_path):
    params = build_model(tiny_spec(), seed=3)
    forward(np.random.default_rng(0).standard_normal((2, 64, 1)).astype(np.float32), params, Mode.TRAIN)
    params.step = 17
    path = tmp_path / "m.weights"
    save_weights(params, path)
    back = load_weights(path, expected=tiny_spec())
    assert back.spec == params.spec and back.step == 17
    for k, v in params.state().items():
        np.testing.assert_array_equal(back.state()[k], v)
        assert back.state()[k].dtype == v.dtype
    assert all(bn.initialized for bn in back.batchnorms().values())
    # second save is byte-identical
    assert weights_to_bytes(back) == path.read_bytes()


def test_weights_float64_roundtrip():
    params = build_model(tiny_spec(), seed=3, dtype=np.float64)
    back = weights_from_bytes(weights_to_bytes(params, dtype="<f8"))
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back.stem.weight, params.stem.weight)


def test_weights_arch_mismatch(tmp_path):
    path = tmp_path / "m.weights"
    save_weights(build_model(tiny_spec()), path)
    with pytest.raises(WeightFileError, match="mismatch"):
        load_weights(path, expected=tiny_spec(growth_rate=5))


def test_weights_corruption_detected():
    blob = bytearray(weights_to_bytes(build_model(tiny_spec())))
    blob[-40] ^= 0xFF
    with pytest.raises(WeightFileError):
        weights_from_bytes(bytes(blob))
    with pytest.raises(WeightFileError):
        weights_from_bytes(bytes(blob[:30]))


def test_container_rejects_other_kind():
    blob = fileio.encode_container({"kind": "other"}, [("a", np.zeros(2, np.float32))])
    with pytest.raises(WeightFileError, match="not a weight file"):
        weights_from_bytes(blob)
