import configparser
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seisnet.model import ArchSpec, build_model
from seisnet.train import (
    AdamState,
    LabeledWindow,
    TrainConfig,
    adam_step,
    load_checkpoint,
    logistic_loss,
    logistic_loss_grad,
    preprocess,
    save_checkpoint,
    train,
    write_history_csv,
)


def tiny_spec():
    return ArchSpec(input_length=64, stem_filters=8, block_count=2, layers_per_block=2, growth_rate=4)


def toy_dataset(n=24, seed=0):
    # positives carry a sinusoid, negatives are noise
    rng = np.random.default_rng(seed)
    t = np.arange(64)
    out = []
    for i in range(n):
        label = 1 if i % 2 == 0 else -1
        x = rng.standard_normal(64) + (3 * np.sin(2 * np.pi * t / 8) if label > 0 else 0)
        out.append(LabeledWindow(preprocess(x).astype(np.float32), label, "toy", i))
    return out


def test_logistic_loss_values():
    assert abs(logistic_loss(1, 0) - math.log(2)) < 1e-12
    assert logistic_loss(1, 1000.0) == pytest.approx(0.0, abs=1e-300)
    assert logistic_loss(1, -1000.0) == pytest.approx(1000.0)
    assert logistic_loss(-1, 2.0) == pytest.approx(math.log1p(math.exp(2.0)))


@given(st.sampled_from([-1, 1]), st.floats(-700, 700))
def test_logistic_loss_matches_naive_and_grad(y, z):
    naive = math.log1p(math.exp(-y * z))
    assert logistic_loss(y, z) == pytest.approx(naive, rel=1e-12, abs=1e-300)
    eps = 1e-6
    if abs(z) < 30:
        num = (logistic_loss(y, z + eps) - logistic_loss(y, z - eps)) / (2 * eps)
        assert logistic_loss_grad(y, z) == pytest.approx(num, abs=1e-7)


def test_logistic_loss_rejects_bad_labels():
    with pytest.raises(ValueError):
        logistic_loss(0, 1.0)
    with pytest.raises(ValueError):
        logistic_loss_grad(np.array([1, 2]), np.zeros(2))


def test_logistic_loss_vectorised():
    y = np.array([1, -1, 1])
    z = np.array([0.0, 0.0, 5.0])
    np.testing.assert_allclose(logistic_loss(y, z), [math.log(2), math.log(2), math.log1p(math.exp(-5))])


def test_preprocess_zscore_and_flat():
    x = np.random.default_rng(0).standard_normal(1000) * 7 + 3
    w = preprocess(x)
    assert abs(w.mean()) < 1e-12 and abs(w.std() - 1) < 1e-12
    np.testing.assert_array_equal(preprocess(np.full(10, 4.0)), np.zeros(10))
    rows = preprocess(np.stack([x, x * 2, np.ones(1000)]))
    np.testing.assert_allclose(rows[0], rows[1])
    assert not rows[2].any()


def test_labeled_window_label_check():
    with pytest.raises(ValueError):
        LabeledWindow(np.zeros(4), 0)


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -3.0])}
    adam_step(p, g, AdamState(lr=0.1))
    # bias-corrected first step is lr * sign(g) (up to eps)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], rtol=1e-6)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(3)
    p = {"w": w.copy()}
    st_ = AdamState()
    m = v = np.zeros(3)
    ref = w.copy()
    for t in range(1, 6):
        g = rng.standard_normal(3)
        adam_step(p, {"w": g}, st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(KeyError):
        adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState())


def test_train_learns_toy_problem():
    params = build_model(tiny_spec(), seed=0)
    trained, hist, state = train(toy_dataset(), params, TrainConfig(batch_size=8, epochs=15, lr=3e-3))
    assert len(hist) == 15
    assert hist[-1].mean_loss < hist[0].mean_loss
    assert hist[-1].train_accuracy >= 0.9
    assert state.t == 15 * 3
    # input params untouched
    np.testing.assert_array_equal(params.stem.weight, build_model(tiny_spec(), seed=0).stem.weight)


def test_train_deterministic():
    cfg = TrainConfig(batch_size=8, epochs=3, seed=4)
    a, _, _ = train(toy_dataset(), build_model(tiny_spec(), seed=1), cfg)
    b, _, _ = train(toy_dataset(), build_model(tiny_spec(), seed=1), cfg)
    for k, v in a.state().items():
        np.testing.assert_array_equal(v, b.state()[k])


def test_train_single_class_rejected():
    data = [w for w in toy_dataset() if w.label > 0]
    with pytest.raises(ValueError, match="both labels"):
        train(data, build_model(tiny_spec()), TrainConfig(epochs=1))


def test_train_shape_mismatch():
    with pytest.raises(ValueError, match="model expects"):
        train(toy_dataset(), build_model(ArchSpec(input_length=65, block_count=1)), TrainConfig(epochs=1))


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    cfg = TrainConfig(batch_size=8, epochs=4, seed=2, checkpoint_every=2, checkpoint_dir=str(tmp_path))
    full, _, _ = train(toy_dataset(), build_model(tiny_spec(), seed=1), cfg)
    params, state, epoch = load_checkpoint(tmp_path / "epoch0002")
    assert epoch == 2
    resumed, hist, _ = train(toy_dataset(), params, cfg, state=state, start_epoch=epoch)
    assert [h.epoch for h in hist] == [3, 4]
    for k, v in full.state().items():
        np.testing.assert_array_equal(v, resumed.state()[k])


def test_train_config_roundtrip():
    cfg = TrainConfig(batch_size=10, epochs=7, lr=0.01, oversample_positives=True)
    parser = cfg.to_config()
    assert TrainConfig.from_config(parser) == cfg
    assert TrainConfig.from_config(parser, epochs=3).epochs == 3
    bad = configparser.ConfigParser()
    bad["train"] = {"nope": "1"}
    with pytest.raises(ValueError):
        TrainConfig.from_config(bad)


def test_history_csv(tmp_path):
    _, hist, _ = train(toy_dataset(), build_model(tiny_spec()), TrainConfig(batch_size=12, epochs=2))
    write_history_csv(hist, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,train_accuracy" and len(lines) == 3


def test_oversampling_balances_batches():
    data = toy_dataset(12)[:4] + [w for w in toy_dataset(40, seed=3) if w.label < 0]
    _, hist, state = train(data, build_model(tiny_spec()), TrainConfig(batch_size=100, epochs=1,
                                                                       oversample_positives=True))
    assert state.t == 1


def test_loss_examples():
    assert logistic_loss(1, 10.0) == pytest.approx(4.5398899216870535e-05, abs=1e-9)
    z = np.random.default_rng(0).standard_normal(50) * 10
    np.testing.assert_allclose(logistic_loss(-np.ones(50), z), logistic_loss(np.ones(50), -z))
    g = logistic_loss_grad(np.ones(50), z)
    assert np.all(np.abs(g) < 1) and np.all(g < 0)


def test_preprocess_examples():
    np.testing.assert_allclose(preprocess([1.0, 2.0, 3.0]), [-1.2247, 0.0, 1.2247], atol=1e-4)
    w = preprocess(np.random.default_rng(1).standard_normal(500) * 3 + 8)
    assert abs(w.mean()) < 1e-6 and abs(w.std() - 1) < 1e-6
    np.testing.assert_allclose(preprocess(w), w, atol=1e-5)
    with pytest.raises(ValueError):
        preprocess([1.0])


def test_adam_zero_gradient_and_two_steps():
    p = {"w": np.array([0.5])}
    adam_step(p, {"w": np.zeros(1)}, AdamState())
    assert p["w"][0] == 0.5
    # scalar hand simulation with g = 2 for two steps
    p = {"w": np.array([0.0])}
    s = AdamState(lr=0.1)
    adam_step(p, {"w": np.array([2.0])}, s)
    adam_step(p, {"w": np.array([2.0])}, s)
    m1, v1 = 0.2, 0.004
    m2, v2 = 0.9 * m1 + 0.2, 0.999 * v1 + 0.004
    step1 = 0.1 * (m1 / 0.1) / (np.sqrt(v1 / 0.001) + 1e-8)
    step2 = 0.1 * (m2 / 0.19) / (np.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert p["w"][0] == pytest.approx(-(step1 + step2), rel=1e-12)


def test_zero_epochs_and_zero_lr_leave_weights():
    params = build_model(tiny_spec(), seed=0)
    out, hist, _ = train(toy_dataset(), params, TrainConfig(epochs=0))
    assert hist == []
    out2, _, _ = train(toy_dataset(), params, TrainConfig(epochs=2, lr=0.0, batch_size=8))
    trainable = params.trainable()
    for k, v in out2.trainable().items():
        np.testing.assert_array_equal(v, trainable[k])
    for k, v in out.state().items():
        np.testing.assert_array_equal(v, params.state()[k])


def test_mini_spec_separable_toy():
    from seisnet.model import mini_spec
    spec = mini_spec()
    rng = np.random.default_rng(0)
    data = []
    for i in range(20):
        x = rng.standard_normal(spec.input_length)
        if i % 2 == 0:
            x[2000:2500] *= 8  # high-amplitude burst
        data.append(LabeledWindow(preprocess(x).astype(np.float32), 1 if i % 2 == 0 else -1))
    _, hist, _ = train(data, build_model(spec, seed=1), TrainConfig(batch_size=20, epochs=8))  # full batch
    losses = [h.mean_loss for h in hist]
    assert all(b < a for a, b in zip(losses[:5], losses[1:5]))
    assert hist[-1].train_accuracy == 1.0
