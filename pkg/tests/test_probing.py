from __future__ import annotations

import math

import numpy as np
import pytest

from dycklab import autodiff as ad
from dycklab.dyck import BinSpec, SamplerParams, Vocab, max_depth, sample_bin
from dycklab.errors import ConfigError, InputError, LabelError
from dycklab.models import ModelConfig, build_model
from dycklab.ncp import TrainConfig, batch_targets, make_dataset, mse_loss_batch
from dycklab.probing import (
    DepthProbe, ProbeConfig, StackAuxHeads, collect_states, depth_labels, dump_states, eval_stack_extraction,
    fit_probe, joint_loss, load_states, oracle_depth_features, oracle_stack_predictor, stack_labels,
    train_depth_probe, train_with_stack_aux,
)

V2 = Vocab(2)


def words(n, seed, lengths=(2, 30), depths=(1, 6)):
    return sample_bin(BinSpec(n, lengths, depths), SamplerParams(seed=seed), V2)


def test_depth_labels():
    assert depth_labels(V2.parse("(["), V2).tolist() == [1, 2]
    assert depth_labels(V2.parse("([("), V2)[-1] == 3


def test_stack_labels_top_first():
    lab = stack_labels(V2.parse("(["), V2)
    assert lab[-1].tolist() == [1, 0] + [2] * 8
    assert lab[0].tolist() == [0] + [2] * 9
    with pytest.raises(InputError):
        stack_labels(V2.parse("(]"), V2)


def test_probe_width_fixed():
    probe = DepthProbe(7, 4)
    assert probe.params["W1"].shape == (7, 32)


def test_oracle_features_reach_perfect_accuracy():
    train = words(150, 0)
    val = words(80, 1)
    cfg = ProbeConfig(num_classes=11, epochs=30, lr=1e-2)
    res = fit_probe(oracle_depth_features(train, V2, 11), [depth_labels(w, V2) for w in train], cfg,
                    oracle_depth_features(val, V2, 11), [depth_labels(w, V2) for w in val])
    assert res.accuracy == 1.0


def test_label_overflow():
    deep = words(5, 0, (20, 30), (8, 9))
    with pytest.raises(LabelError):
        fit_probe(oracle_depth_features(deep, V2, 12), [depth_labels(w, V2) for w in deep],
                  ProbeConfig(num_classes=5))


def test_probe_gradcheck():
    rng = np.random.default_rng(0)
    probe = DepthProbe(5, 4, seed=1)
    x = rng.normal(size=(12, 5))
    y = rng.integers(0, 4, 12)
    assert ad.gradcheck(lambda: ad.cross_entropy(probe.logits(x), y), probe.params) <= 1e-4


def test_collect_states_and_depth_probe_smoke():
    model = build_model(ModelConfig(kind="lstm", hidden=8, seed=0))
    ws = words(30, 2)
    cells = collect_states(model, ws, "cell")
    assert [c.shape for c in cells] == [(len(w), 8) for w in ws]
    res = train_depth_probe(model, ws, ws[:10], V2, ProbeConfig(num_classes=11, epochs=2))
    assert 0 <= res.accuracy <= 1 and len(res.losses) == 2
    with pytest.raises(InputError):
        collect_states(build_model(ModelConfig(kind="rnn_tanh", hidden=4)), ws, "cell")


def _joint_setup(lam):
    rng = np.random.default_rng(0)
    model = build_model(ModelConfig(kind="lstm", hidden=6, seed=3))
    heads = StackAuxHeads(6, 2, seed=4)
    samples = make_dataset(words(4, 5, (2, 12), (1, 4)), V2)
    tokens, targets, mask = batch_targets(samples)
    labels = np.full(tokens.shape + (10,), 2)
    for i, s in enumerate(samples):
        labels[i, : len(s.tokens)] = stack_labels(s.tokens, V2)
    params = {**model.params, **heads.params}
    return model, heads, params, (tokens, targets, mask, labels), rng


def test_joint_loss_gradcheck():
    model, heads, params, (tokens, targets, mask, labels), _ = _joint_setup(1 / 20)
    err = ad.gradcheck(lambda: joint_loss(model, heads, tokens, targets, mask, labels, 1 / 20), params,
                       max_per_param=20)
    assert err <= 1e-4


def test_joint_gradient_continuous_at_zero_lambda():
    model, heads, params, (tokens, targets, mask, labels), _ = _joint_setup(1e-12)
    for p in params.values():
        p.grad = None
    joint_loss(model, heads, tokens, targets, mask, labels, 1e-12).backward()
    joint = {k: model.params[k].grad.copy() for k in model.params}
    for p in params.values():
        p.grad = None
    mse_loss_batch(model.forward(tokens).probs, targets, mask).backward()
    for k in model.params:
        assert np.allclose(joint[k], model.params[k].grad, rtol=0, atol=1e-6)


def test_stack_aux_training_smoke():
    ds = make_dataset(words(60, 6), V2)
    sm, res = train_with_stack_aux(ModelConfig(kind="lstm", hidden=8, seed=0), ds, {"val": ds[:20]}, V2,
                                   cfg=TrainConfig(epochs=2))
    assert "aux_W" not in sm.model.params
    rep = eval_stack_extraction(sm.predict_stack, [s.tokens for s in ds[:20]], V2)
    assert len(rep.accuracy) == len(rep.recall) == 10
    with pytest.raises(ConfigError):
        train_with_stack_aux(ModelConfig(kind="lstm", hidden=8), ds, {}, V2, lam=0.0)


def test_oracle_stack_extraction():
    ws = words(100, 7, (2, 40), (1, 12))
    rep = eval_stack_extraction(oracle_stack_predictor(V2), ws, V2)
    assert rep.accuracy == [1.0] * 10
    for i, r in enumerate(rep.recall):
        if rep.support[i]:
            assert r == 1.0
        else:
            assert math.isnan(r)
    assert rep.support[0] == len(ws)
    assert rep.support[9] == sum(max_depth(w, V2) >= 10 for w in ws)


def test_recall_counts_only_deep_sequences():
    ws = [V2.parse("()"), V2.parse("(())")]

    def predict(batch):
        out = oracle_stack_predictor(V2)(batch)
        out[1] = out[1].copy()
        out[1][1, 1] = 1  # wrong at position 2 in the deep word
        return out

    rep = eval_stack_extraction(predict, ws, V2)
    assert rep.accuracy[1] == 0.5 and rep.recall[1] == 0.0 and rep.support[1] == 1


def test_dump_states_roundtrip(tmp_path):
    model = build_model(ModelConfig(kind="lstm", hidden=5, seed=0))
    ws = words(12, 8)
    path = tmp_path / "s.csv"
    rows = dump_states(model, ws, V2, path, which="cell")
    assert rows == sum(len(w) for w in ws)
    dump = load_states(path)
    states = np.concatenate(collect_states(model, ws, "cell"))
    assert np.array_equal(dump.states, states)
    assert dump.depth.tolist() == np.concatenate([depth_labels(w, V2) for w in ws]).tolist()
    assert dump.columns == [f"cell_{i}" for i in range(5)]
    for wid in range(len(ws)):
        assert dump.depth[dump.word_id == wid].max() == max_depth(ws[wid], V2)
