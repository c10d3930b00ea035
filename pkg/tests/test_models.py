from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycklab import autodiff as ad
from dycklab.dyck import Vocab, enumerate_words, is_valid
from dycklab.errors import ConfigError, InputError, LengthError, ResourceError
from dycklab.models import (
    ConstantModel, ModelConfig, OracleModel, build_model, generate_all, load_model, lstm_forward, pad_batch,
    transformer_forward,
)

V2 = Vocab(2)

CONFIGS = [
    ModelConfig(kind="lstm", hidden=6, layers=1, seed=1),
    ModelConfig(kind="lstm", hidden=5, layers=2, seed=2),
    ModelConfig(kind="rnn_tanh", hidden=7, layers=2, seed=3),
    ModelConfig(kind="rnn_relu", hidden=6, layers=1, seed=4),
    ModelConfig(kind="transformer", hidden=8, layers=2, heads=2, seed=5),
    ModelConfig(kind="transformer", hidden=6, layers=1, heads=3, use_positional=False, seed=6),
]


def test_config_bounds():
    with pytest.raises(ConfigError):
        ModelConfig(hidden=3)
    with pytest.raises(ConfigError):
        ModelConfig(layers=3)
    with pytest.raises(ConfigError):
        ModelConfig(kind="transformer", hidden=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(kind="gru")


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.kind}-{c.layers}")
def test_forward_shapes_and_range(cfg):
    model = build_model(cfg)
    tokens = np.array([[0, 1, 3, 2, 0], [1, 3, 0, 0, 0]])
    out = model.forward(tokens)
    assert out.probs.shape == (2, 5, 4)
    assert np.all((out.probs.data > 0) & (out.probs.data < 1))


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.kind}-{c.layers}")
def test_gradcheck(cfg):
    model = build_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    tokens = rng.integers(0, 4, size=(3, 6))
    target = (rng.random((3, 6, 4)) > 0.5).astype(float)
    mask = np.ones((3, 6))
    mask[1, 4:] = 0

    def loss():
        return ad.mse_loss(model.forward(tokens).probs, target, mask)

    assert ad.gradcheck(loss, model.params, max_per_param=25) <= 1e-4


def test_lstm_traces():
    model = build_model(ModelConfig(kind="lstm", hidden=8, seed=0))
    probs, h, c = lstm_forward(model, [0, 1, 3, 2])
    assert probs.shape == (4, 4) and h.shape == (4, 8) and c.shape == (4, 8)
    assert np.all(np.abs(h) < 1)
    with pytest.raises(InputError):
        lstm_forward(model, [])


def test_padding_does_not_leak():
    for cfg in CONFIGS:
        model = build_model(cfg)
        alone = model.forward(np.array([[0, 2, 1]])).probs.data[0]
        padded = model.forward(np.array([[0, 2, 1, 3, 3], [1, 1, 1, 1, 1]])).probs.data[0, :3]
        assert np.allclose(alone, padded)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=10), st.data())
def test_transformer_causality(tokens, data):
    model = build_model(ModelConfig(kind="transformer", hidden=8, heads=2, layers=2, seed=0))
    t = data.draw(st.integers(0, len(tokens) - 2))
    other = list(tokens)
    other[t + 1] = (other[t + 1] + 1) % 4
    a = transformer_forward(model, tokens)
    b = transformer_forward(model, other)
    assert np.array_equal(a[: t + 1], b[: t + 1])


def test_transformer_length_limit():
    model = build_model(ModelConfig(kind="transformer", hidden=8, max_positions=10))
    with pytest.raises(LengthError):
        model.forward(np.zeros((1, 11), dtype=int))
    free = build_model(ModelConfig(kind="transformer", hidden=8, max_positions=10, use_positional=False))
    assert free.forward(np.zeros((1, 11), dtype=int)).probs.shape == (1, 11, 4)


def test_invalid_tokens():
    model = build_model(ModelConfig(hidden=4))
    with pytest.raises(InputError):
        model.forward(np.array([[0, 4]]))
    with pytest.raises(InputError):
        pad_batch([])


def test_init_range():
    model = build_model(ModelConfig(kind="lstm", hidden=16, seed=0))
    for p in model.params.values():
        assert np.all(np.abs(p.data) <= 0.25)


def test_checkpoint_roundtrip(tmp_path):
    model = build_model(CONFIGS[4])
    path = tmp_path / "t.ckpt"
    model.save(path, {"lr": 0.01})
    back, meta = load_model(path)
    assert back.config == model.config and meta["lr"] == 0.01
    words = [[0, 2], [1, 0, 2, 3]]
    for a, b in zip(model.predict_proba(words), back.predict_proba(words)):
        assert np.array_equal(a, b)


def test_predict_proba_order():
    model = build_model(ModelConfig(hidden=4))
    words = [[0, 1, 3, 2], [0, 2]]
    out = model.predict_proba(words)
    assert [len(p) for p in out] == [4, 2]


def test_generate_all_oracle_matches_enumeration():
    for max_len in (0, 2, 6, 10):
        assert generate_all(OracleModel(V2), V2, max_len) == enumerate_words(V2, max_len)
    v3 = Vocab(3)
    assert generate_all(OracleModel(v3), v3, 6) == enumerate_words(v3, 6)


def test_generate_all_permissive_model_overgenerates():
    words = generate_all(ConstantModel(V2, 0.9), V2, 4)
    assert len(words) > len(enumerate_words(V2, 4))
    assert any(not is_valid(w, V2) for w in words)
    assert generate_all(ConstantModel(V2, 0.5), V2, 6) == [[]]


def test_generate_all_cap():
    with pytest.raises(ResourceError):
        generate_all(ConstantModel(V2, 0.9), V2, 12, cap=1000)
