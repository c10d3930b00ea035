from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycklab import autodiff as ad
from dycklab.dyck import BinSpec, SamplerParams, Vocab, depth_profile, enumerate_words, sample_bin
from dycklab.errors import ConfigError, InputError, TrainingError
from dycklab.models import ConstantModel, ModelConfig, OracleModel, build_model
from dycklab.ncp import (
    ROBUSTNESS_DISTRIBUTIONS, Leaderboard, RunRecord, TrainConfig, _batches, batch_targets, build_experiment,
    default_grid, evaluate, experiment_specs, make_dataset, mse_loss_batch, robustness_eval, sweep, train,
    write_history_csv,
)

V2 = Vocab(2)
WORDS = [w for w in enumerate_words(V2, 8) if w]


class FlipModel:
    """Oracle scores with one bit flipped in chosen sequences."""

    def __init__(self, vocab, flip):
        self.oracle, self.flip = OracleModel(vocab), flip

    def predict_proba(self, words):
        out = self.oracle.predict_proba(words)
        for i, (t, s) in self.flip.items():
            out[i][t, s] = 1 - out[i][t, s]
        return out


def test_make_dataset_example():
    (sample,) = make_dataset([V2.parse("()")], V2)
    assert sample.targets.tolist() == [[1, 1, 1, 0], [1, 1, 0, 0]]
    with pytest.raises(InputError):
        make_dataset([V2.parse("(]")], V2)
    with pytest.raises(InputError):
        make_dataset([[]], V2)


def test_row_counts_follow_depth():
    for s in make_dataset(WORDS[:300], V2):
        for row, d in zip(s.targets, depth_profile(s.tokens, V2)):
            assert row.sum() == (2 if d == 0 else 3)


def test_mse_hand_values():
    samples = make_dataset(WORDS[:20], V2)
    tokens, targets, mask = batch_targets(samples)
    assert float(mse_loss_batch(ad.Tensor(targets), targets, mask).data) == 0.0
    half = float(mse_loss_batch(ad.Tensor(np.full(targets.shape, 0.5)), targets, mask).data)
    assert half == pytest.approx(0.25)


def test_mse_ignores_padding():
    samples = make_dataset(WORDS[:5], V2)
    _, targets, mask = batch_targets(samples)
    pred = np.random.default_rng(0).random(targets.shape)
    base = float(mse_loss_batch(ad.Tensor(pred), targets, mask).data)
    pad = ((0, 0), (0, 7), (0, 0))
    longer = float(mse_loss_batch(ad.Tensor(np.pad(pred, pad, constant_values=0.3)), np.pad(targets, pad),
                                  np.pad(mask, ((0, 0), (0, 7)))).data)
    assert base == pytest.approx(longer, abs=1e-15)


def test_evaluate_oracle_and_constant():
    samples = make_dataset(WORDS, V2)
    assert evaluate(OracleModel(V2), samples).accuracy == 1.0
    assert evaluate(ConstantModel(V2, 0.5), samples).accuracy == 0.0


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_single_flip_costs_one_sequence(data):
    samples = make_dataset(WORDS[:200], V2)
    i = data.draw(st.integers(0, len(samples) - 1))
    t = data.draw(st.integers(0, len(samples[i].tokens) - 1))
    s = data.draw(st.integers(0, 3))
    rep = evaluate(FlipModel(V2, {i: (t, s)}), samples)
    assert rep.accuracy == pytest.approx(1 - 1 / len(samples))
    assert rep.first_errors[i] == t


def test_train_config_bounds():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.1)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="sgd")


def _small_problem(seed=0):
    words = sample_bin(BinSpec(300, (2, 20), (1, 4)), SamplerParams(seed=seed), V2)
    val = sample_bin(BinSpec(100, (2, 20), (1, 4)), SamplerParams(seed=seed + 100), V2)
    return make_dataset(words, V2), {"val": make_dataset(val, V2)}


def test_training_reduces_loss_and_is_reproducible():
    train_set, bins = _small_problem()
    cfg = TrainConfig(epochs=5, lr=1e-2, seed=1)
    runs = [train(build_model(ModelConfig(kind="lstm", hidden=16, seed=0)), train_set, bins, cfg)
            for _ in range(2)]
    losses = [r.loss for r in runs[0].history]
    assert losses[4] < losses[0]
    assert losses == [r.loss for r in runs[1].history]
    assert [r.accuracy for r in runs[0].history] == [r.accuracy for r in runs[1].history]


def test_early_stop_fires_at_first_qualifying_epoch():
    train_set, bins = _small_problem()
    cfg = TrainConfig(epochs=60, lr=1e-2, seed=0, early_stop_threshold=0.9)
    res = train(build_model(ModelConfig(kind="lstm", hidden=16, seed=0)), train_set, bins, cfg)
    assert res.stopped_early
    hits = [all(v >= 0.9 for v in r.accuracy.values()) for r in res.history]
    assert hits[-1] and not any(hits[:-1])


def test_nonfinite_loss_aborts():
    train_set, bins = _small_problem()
    model = build_model(ModelConfig(kind="lstm", hidden=4, seed=0))
    model.params["W_out"].data[0, 0] = np.nan
    with pytest.raises(TrainingError, match="epoch 1"):
        train(model, train_set, bins, TrainConfig(epochs=1))


def test_experiment_specs_match_presets():
    train, bins = experiment_specs("bounded_depth")
    assert train.size == 10_000 and train.depth_range == (1, 10)
    assert [b.length_range for b in bins] == [(2, 50), (52, 100), (102, 150)]
    assert all(b.depth_range == (1, 10) and b.size == 1000 for b in bins)
    train, bins = experiment_specs("unbounded")
    assert [b.length_range for b in bins] == [(2, 50), (52, 100)] and bins[1].depth_range is None
    train, bins = experiment_specs("bounded_length")
    assert train.length_range == (2, 100) and train.depth_range == (1, 15)
    assert [b.depth_range for b in bins] == [(1, 15), (16, 16), (17, 17), (18, 18), (19, 19), (20, 20)]
    with pytest.raises(ConfigError):
        experiment_specs("nope")


def test_build_experiment_bins_satisfy_predicates():
    ex = build_experiment("bounded_depth", 2, seed=0, train_size=50, bin_size=20)
    assert len(ex.train_set) == 50
    for spec in ex.bin_specs:
        assert len(ex.bins[spec.name]) == 20
        for s in ex.bins[spec.name]:
            assert spec.admits(s.tokens, ex.vocab)
        assert evaluate(OracleModel(ex.vocab), ex.bins[spec.name]).accuracy == 1.0
    with pytest.raises(ConfigError):
        build_experiment("unbounded", 5)


def test_grid_sizes():
    assert len(default_grid("lstm")) == 28
    assert len(default_grid("transformer")) == 144
    assert all(g["hidden"] % g["heads"] == 0 for g in default_grid("transformer"))


def test_leaderboard_ranking():
    runs = [RunRecord(f"r{i}", "lstm", 8, 1, 1e-2, 1, True, {"Bin-1": a, "Bin-2": a / 2}, 3, 1.0)
            for i, a in enumerate([0.5, 0.9, 0.7, 0.9, 0.1, 0.3, 0.8])]
    board = Leaderboard(runs, "Bin-1")
    assert [r.run_id for r in board.ranked()][:3] == ["r1", "r3", "r6"]
    top = board.top_mean()
    assert top["Bin-1"] == pytest.approx(np.mean([0.9, 0.9, 0.8, 0.7, 0.5]))
    assert top["Bin-1"] <= max(r.accuracy["Bin-1"] for r in runs)
    assert Leaderboard(runs[:2], "Bin-1").top_mean()["Bin-1"] == pytest.approx(0.7)


def test_sweep_writes_outputs(tmp_path):
    ex = build_experiment("unbounded", 2, seed=0, train_size=40, bin_size=10)
    grid = [dict(hidden=4, layers=1, lr=1e-2), dict(hidden=8, layers=1, lr=1e-3)]
    board = sweep(ex, "lstm", grid, epochs=1, out_dir=tmp_path)
    assert len(board.runs) == 2
    rows = list(csv.DictReader(open(tmp_path / "runs.csv")))
    assert len(rows) == 4 and set(rows[0]) == {"run_id", "model", "hidden", "layers", "lr", "bin", "accuracy",
                                               "epochs", "wall_time"}
    data = json.loads((tmp_path / "leaderboard.json").read_text())
    assert data["rank_bin"] == "Bin-1A"


def test_robustness_oracle():
    res = robustness_eval(OracleModel(V2), 2, size=50)
    assert list(res) == list(ROBUSTNESS_DISTRIBUTIONS)
    assert all(v == 1.0 for v in res.values())


def test_history_csv(tmp_path):
    train_set, bins = _small_problem()
    res = train(build_model(ModelConfig(hidden=4)), train_set, bins, TrainConfig(epochs=2))
    write_history_csv(tmp_path / "h.csv", res.history)
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]


def test_custom_stop_predicate():
    train_set, bins = _small_problem()
    res = train(build_model(ModelConfig(kind="lstm", hidden=8, seed=0)), train_set, bins,
                TrainConfig(epochs=10), stop_when=lambda acc: True)
    assert res.stopped_early and len(res.history) == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 60), min_size=1, max_size=300), st.integers(1, 40), st.integers(0, 5))
def test_batches_partition_indices(lengths, batch_size, pool):
    batches = _batches(np.array(lengths), batch_size, pool, np.random.default_rng(0))
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(len(lengths)))
    assert all(1 <= len(b) <= batch_size for b in batches)
