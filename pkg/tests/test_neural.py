import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seizuredet.datasets import SynthConfig, synth_generate
from seizuredet.errors import NonFiniteGradient, OddDimension, ShapeMismatch, SingleClassDataset
from seizuredet.labels import BACKGROUND, SEIZURE
from seizuredet.neural.layers import Dropout, rope_rotate
from seizuredet.neural.models import (
    CNN6,
    CNN_TRANSFORMER,
    build_model,
    config_hash,
    load_config,
    normalise_kind,
)
from seizuredet.neural.training import (
    AdamState,
    TrainConfig,
    adam_step,
    bce_loss,
    check_gradients,
    softmax_bce,
    train,
)
from seizuredet.pipeline import preprocess_classification
from seizuredet.windowing import SegmentationConfig, Window

KINDS = [CNN6, CNN_TRANSFORMER]


# ------------------------------------------------------------ architecture

@pytest.mark.parametrize("kind,target", [(CNN6, 23_000), (CNN_TRANSFORMER, 158_000)])
def test_default_parameter_counts(kind, target):
    model = build_model(kind, load_config(kind))
    n = model.params.total_count
    assert abs(n - target) / target <= 0.15
    assert n == sum(int(np.prod(s)) for s in model.params.shapes.values())


@pytest.mark.parametrize("kind", KINDS)
def test_tiny_configs_are_small(kind):
    assert build_model(kind, load_config(kind, "tiny")).params.total_count <= 2000


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("window_s", [2.0, 4.0])
def test_softmax_rows_and_shapes(kind, window_s):
    model = build_model(kind, load_config(kind, window_s=window_s), seed=1)
    x = np.random.default_rng(0).standard_normal((5, int(window_s * 100)))
    p = model.forward(x)
    assert p.shape == (5, 2)
    assert np.all((p > 0) & (p < 1))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_batch_permutation_equivariance(kind):
    model = build_model(kind, load_config(kind), seed=2)
    x = np.random.default_rng(1).standard_normal((6, 400))
    perm = np.array([3, 0, 5, 1, 4, 2])
    assert np.allclose(model.forward(x)[perm], model.forward(x[perm]), atol=1e-6)


def test_attention_rows_sum_to_one():
    model = build_model(CNN_TRANSFORMER, load_config(CNN_TRANSFORMER), seed=3)
    model.forward(np.random.default_rng(2).standard_normal((3, 400)))
    att = model.attention_weights
    assert att.shape == (3, 2, model.n_tokens, model.n_tokens)
    assert np.allclose(att.sum(axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_wrong_input_length(kind):
    model = build_model(kind, load_config(kind))
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((2, 200)))


def test_kind_names_and_hash():
    assert normalise_kind("CNN+Transformer") == CNN_TRANSFORMER
    assert normalise_kind("cnn-6") == normalise_kind("cnn_6") == CNN6
    with pytest.raises(ValueError):
        normalise_kind("lstm")
    cfg = load_config(CNN6)
    assert config_hash(CNN6, cfg) == config_hash("cnn-6", dict(cfg))
    assert config_hash(CNN6, cfg) != config_hash(CNN6, load_config(CNN6, window_s=2.0))


def test_dropout_identity_at_inference():
    x = np.random.default_rng(0).standard_normal((4, 3, 5))
    d = Dropout(0.5, np.random.default_rng(0))
    assert np.array_equal(d.forward(x, training=False), x)
    d0 = Dropout(0.0, np.random.default_rng(0))
    assert np.array_equal(d0.forward(x, training=True), d0.forward(x, training=False))


# ------------------------------------------------------------------- RoPE

def rope_oracle(x, base):
    """Explicit 2x2 rotation per (position, pair)."""
    t, d = x.shape
    out = np.empty_like(x)
    for m in range(t):
        for j in range(d // 2):
            a = m * base ** (-2 * j / d)
            c, s = math.cos(a), math.sin(a)
            out[m, 2 * j] = c * x[m, 2 * j] - s * x[m, 2 * j + 1]
            out[m, 2 * j + 1] = s * x[m, 2 * j] + c * x[m, 2 * j + 1]
    return out


def test_rope_against_rotation_oracle(rng):
    x = rng.standard_normal((7, 8))
    assert np.allclose(rope_rotate(x, 10000.0), rope_oracle(x, 10000.0), atol=1e-12)


def test_rope_position_zero_identity_and_isometry(rng):
    x = rng.standard_normal((9, 6))
    y = rope_rotate(x)
    assert np.array_equal(y[0], x[0])
    pair_norm = lambda v: np.hypot(v[..., 0::2], v[..., 1::2])
    assert np.allclose(pair_norm(x), pair_norm(y), atol=1e-12)
    assert np.allclose(rope_rotate(y, inverse=True), x, atol=1e-12)


def test_rope_odd_dimension():
    with pytest.raises(OddDimension):
        rope_rotate(np.zeros((3, 5)))


def test_rope_relative_position_property():
    r = np.random.default_rng(11)
    for _ in range(100):
        d = 2 * int(r.integers(1, 9))
        q, k = r.standard_normal(d), r.standard_normal(d)
        m, n, t = (int(v) for v in r.integers(0, 50, 3))
        rot = lambda v, p: rope_rotate(v[None, :], positions=[p])[0]
        assert abs(rot(q, m) @ rot(k, n) - rot(q, m + t) @ rot(k, n + t)) < 1e-9


# ------------------------------------------------------------------ loss

def test_bce_examples():
    assert bce_loss([[0.5, 0.5]], [1]) == pytest.approx(math.log(2))
    assert bce_loss([[0.0, 1.0]], [SEIZURE]) <= 1e-6
    assert bce_loss([[1.0, 0.0]], [BACKGROUND]) <= 1e-6
    with pytest.raises(ShapeMismatch):
        bce_loss([[0.5, 0.5]], [1, 0])


def test_softmax_bce_gradient_finite_differences():
    r = np.random.default_rng(5)
    z = r.standard_normal((6, 2)) * 2
    y = r.integers(0, 2, 6)
    _, g = softmax_bce(z, y)
    num = np.zeros_like(z)
    h = 1e-3
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        num[idx] = (softmax_bce(zp, y)[0] - softmax_bce(zm, y)[0]) / (2 * h)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4


def test_softmax_bce_matches_bce_loss():
    z = np.random.default_rng(6).standard_normal((10, 2))
    y = np.arange(10) % 2
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    assert softmax_bce(z, y)[0] == pytest.approx(bce_loss(p, y), rel=1e-12)


# ------------------------------------------------------------------ Adam

def test_adam_zero_gradient_first_step():
    p = {"w": np.array([1.5, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    assert np.array_equal(p["w"], [1.5, -2.0])


def test_adam_first_step_hand_value():
    cfg = TrainConfig(learning_rate=1e-3)
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), cfg)
    assert p["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=10, max_size=10), st.floats(-3, 3),
       st.sampled_from([1e-4, 1e-3, 1e-2]))
def test_adam_matches_scalar_oracle(grads, theta0, lr):
    cfg = TrainConfig(learning_rate=lr)
    p = {"w": np.array([theta0])}
    state = AdamState()
    for g in grads:
        adam_step(p, {"w": np.array([g])}, state, cfg)
    assert abs(p["w"][0] - scalar_adam(theta0, grads, lr)) < 1e-12


def test_adam_errors():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), TrainConfig())
    with pytest.raises(NonFiniteGradient):
        adam_step({"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])}, AdamState(), TrainConfig())


# -------------------------------------------------------------- training

@pytest.fixture(scope="module")
def overfit_windows():
    sig, events = synth_generate(SynthConfig(duration_s=150, n_seizures=2, seed=4,
                                             seizure_duration_range_s=(30, 35)))
    w = preprocess_classification(sig, events, SegmentationConfig(4.0, 1.0))
    sz = [x for x in w if x.label == SEIZURE][:16]
    bg = [x for x in w if x.label == BACKGROUND][:16]
    assert len(sz) == len(bg) == 16
    return sz + bg


def test_overfit_32_windows(overfit_windows):
    res = train(CNN6, overfit_windows, TrainConfig(epochs=500, seed=0, stop_loss=0.05))
    assert res.losses[-1] < 0.05
    assert all(np.isfinite(res.losses))


def test_training_is_deterministic():
    r = np.random.default_rng(0)
    windows = [Window(0.0, r.standard_normal(64), 100.0, (SEIZURE, BACKGROUND)[i % 2]) for i in range(12)]
    cfg = TrainConfig(epochs=3, batch_size=4, seed=9)
    runs = [train(CNN_TRANSFORMER, windows, cfg, model_config=load_config(CNN_TRANSFORMER, "tiny"),
                  keep_trace=True) for _ in range(2)]
    assert runs[0].losses == runs[1].losses
    for a, b in zip(runs[0].param_trace, runs[1].param_trace):
        assert all(np.array_equal(a[k], b[k]) for k in a)
    other = train(CNN_TRANSFORMER, windows, TrainConfig(epochs=3, batch_size=4, seed=10),
                  model_config=load_config(CNN_TRANSFORMER, "tiny"))
    assert other.losses != runs[0].losses


def test_single_class_rejected():
    windows = [Window(0.0, np.zeros(64), 100.0, SEIZURE)] * 4
    with pytest.raises(SingleClassDataset):
        train(CNN6, windows, TrainConfig(epochs=1), model_config=load_config(CNN6, "tiny"))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_epoch_callback_and_log_rows():
    r = np.random.default_rng(1)
    windows = [Window(0.0, r.standard_normal(64), 100.0, (SEIZURE, BACKGROUND)[i % 2]) for i in range(8)]
    seen = []
    res = train(CNN6, windows, TrainConfig(epochs=2, batch_size=4), model_config=load_config(CNN6, "tiny"),
                val_windows=windows, on_epoch=lambda e, m: seen.append(e))
    assert seen == [1, 2]
    assert [row[0] for row in res.log_rows] == [1, 2]
    assert all(np.isfinite(row[2]) for row in res.log_rows)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_check_zero_batch_is_finite(kind):
    rep = check_gradients(kind, np.zeros((2, 64)), [0, 1])
    assert rep.all_finite
