"""Next-character prediction: targets, MSE training, binned all-steps-correct evaluation.

Also hosts the experiment presets (unbounded, bounded depth, bounded length),
hyperparameter sweeps with top-5 averaging, and the robustness driver.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .dyck import BinSpec, SamplerParams, TokenSeq, Vocab, is_valid, max_depth, next_valid_sets, sample_bin
from .errors import ConfigError, InputError, TrainingError
from .models import ModelConfig, SequenceModel, build_model, pad_batch

log = logging.getLogger(__name__)

ROBUSTNESS_DISTRIBUTIONS = ((0.5, 0.25), (0.4, 0.35), (0.6, 0.15))
EXPERIMENTS = ("unbounded", "bounded_depth", "bounded_length")


@dataclass
class NcpSample:
    tokens: list[int]
    targets: np.ndarray  # (T, 2n) int8, row t = valid set after prefix of length t + 1


def make_dataset(words: Iterable[TokenSeq], vocab: Vocab) -> list[NcpSample]:
    out = []
    for w in words:
        w = list(w)
        if not w or not is_valid(w, vocab):
            raise InputError(f"not a non-empty Dyck-{vocab.n} word: {vocab.render(w)!r}")
        out.append(NcpSample(w, next_valid_sets(w, vocab)))
    return out


def batch_targets(samples: Sequence[NcpSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tokens, mask = pad_batch([s.tokens for s in samples])
    targets = np.zeros(tokens.shape + (samples[0].targets.shape[1],))
    for i, s in enumerate(samples):
        targets[i, : len(s.tokens)] = s.targets
    return tokens, targets, mask


def mse_loss_batch(pred, targets, mask) -> ad.Tensor:
    """Mean squared error over the unmasked (step, symbol) cells."""
    return ad.mse_loss(pred, targets, mask)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    accuracy: float
    count: int
    correct: int
    first_errors: list[int | None] = field(default_factory=list)  # first wrong step per sequence


def evaluate(model, samples: Sequence[NcpSample], threshold: float = 0.5) -> EvalReport:
    """All-steps-correct accuracy; a symbol counts as predicted when its score is strictly above ``threshold``."""
    if not samples:
        return EvalReport(0.0, 0, 0)
    probs = model.predict_proba([s.tokens for s in samples])
    first_errors = []
    for s, p in zip(samples, probs):
        if p.shape != s.targets.shape:
            raise InputError(f"model output shape {p.shape} does not match targets {s.targets.shape}")
        bad = np.flatnonzero(((p > threshold) != (s.targets > 0)).any(axis=1))
        first_errors.append(int(bad[0]) if bad.size else None)
    correct = sum(e is None for e in first_errors)
    return EvalReport(correct / len(samples), len(samples), correct, first_errors)


def evaluate_bins(model, bins: dict[str, list[NcpSample]], threshold: float = 0.5) -> dict[str, float]:
    return {name: evaluate(model, samples, threshold).accuracy for name, samples in bins.items()}


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    optimizer: str = "rmsprop"
    lr: float = 1e-2
    alpha: float = 0.99
    early_stop_threshold: float = 0.99
    seed: int = 0
    bucket_pool: int = 0  # batches per length-sorted pool; 0 means plain shuffled batches

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if not 1e-3 <= self.lr <= 1e-2:
            raise ConfigError(f"learning rate {self.lr} outside [1e-3, 1e-2]")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: dict[str, float]
    seconds: float


@dataclass
class TrainResult:
    model: SequenceModel
    history: list[EpochRecord]
    stopped_early: bool

    @property
    def final(self) -> dict[str, float]:
        return self.history[-1].accuracy if self.history else {}


def _batches(lengths: np.ndarray, batch_size: int, pool: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches; within each pool of ``pool`` batches, samples are grouped by length."""
    order = rng.permutation(len(lengths))
    if pool:
        span = batch_size * pool
        chunks = [order[i:i + span] for i in range(0, len(order), span)]
        order = np.concatenate([c[np.argsort(lengths[c], kind="stable")] for c in chunks])
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def train(model: SequenceModel, train_set: Sequence[NcpSample], eval_bins: dict[str, list[NcpSample]],
          cfg: TrainConfig, loss_fn: Callable | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          stop_when: Callable[[dict[str, float]], bool] | None = None) -> TrainResult:
    """Mini-batch training with per-epoch evaluation and early stopping.

    Training halts after the first epoch at which every bin reaches
    ``cfg.early_stop_threshold``, or, when ``stop_when`` is given, after the
    first epoch whose bin accuracies satisfy it. ``loss_fn(model, samples, tokens, targets, mask)``
    may replace the plain NCP loss (used for auxiliary objectives).
    """
    if not train_set:
        raise InputError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    kw = {"alpha": cfg.alpha} if cfg.optimizer == "rmsprop" else {}
    opt = ad.Optimizer(model.params, cfg.optimizer, cfg.lr, **kw)
    lengths = np.array([len(s.tokens) for s in train_set])
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total, cells = 0.0, 0.0
        for b, idx in enumerate(_batches(lengths, cfg.batch_size, cfg.bucket_pool, rng)):
            samples = [train_set[i] for i in idx]
            tokens, targets, mask = batch_targets(samples)
            opt.zero_grad()
            if loss_fn is None:
                loss = mse_loss_batch(model.forward(tokens).probs, targets, mask)
            else:
                loss = loss_fn(model, samples, tokens, targets, mask)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b} "
                                    f"(batch lengths {lengths[idx].min()}..{lengths[idx].max()}, lr {cfg.lr})")
            loss.backward()
            opt.step()
            weight = mask.sum()
            total += value * weight
            cells += weight
        acc = evaluate_bins(model, eval_bins)
        rec = EpochRecord(epoch, total / cells, acc, time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d loss %.5f %s", epoch, rec.loss, " ".join(f"{k}={v:.3f}" for k, v in acc.items()))
        if on_epoch:
            on_epoch(rec)
        done = stop_when(acc) if stop_when else acc and all(v >= cfg.early_stop_threshold for v in acc.values())
        if done:
            return TrainResult(model, history, True)
    return TrainResult(model, history, False)


# --------------------------------------------------------------------------
# experiment presets


@dataclass
class Experiment:
    name: str
    n: int
    vocab: Vocab
    train_spec: BinSpec
    bin_specs: list[BinSpec]
    train_set: list[NcpSample]
    bins: dict[str, list[NcpSample]]


def experiment_specs(name: str, train_size: int = 10_000, bin_size: int = 1_000) -> tuple[BinSpec, list[BinSpec]]:
    """Training and evaluation bin specifications of each preset; the first bin mirrors training."""
    if name == "unbounded":
        train = BinSpec(train_size, (2, 50), None, "train")
        bins = [BinSpec(bin_size, (2, 50), None, "Bin-1A"), BinSpec(bin_size, (52, 100), None, "Bin-2A")]
    elif name == "bounded_depth":
        train = BinSpec(train_size, (2, 50), (1, 10), "train")
        bins = [BinSpec(bin_size, (lo, lo + 48), (1, 10), f"Bin-{i}B")
                for i, lo in enumerate((2, 52, 102), start=1)]
    elif name == "bounded_length":
        train = BinSpec(train_size, (2, 100), (1, 15), "train")
        bins = [BinSpec(bin_size, (2, 100), (1, 15), "Bin-1")]
        bins += [BinSpec(bin_size, (2, 100), (d, d), f"Bin-{d - 14}") for d in range(16, 21)]
    else:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    return train, bins


def _bin_rng(seed: int, experiment: str, tag: str) -> random.Random:
    return random.Random(f"{seed}:{experiment}:{tag}")


def build_experiment(name: str, n: int, seed: int = 0, train_size: int = 10_000, bin_size: int = 1_000,
                     params: SamplerParams | None = None) -> Experiment:
    """Sample the training set and every evaluation bin with independent seeded streams."""
    if n not in (2, 3, 4):
        raise ConfigError(f"experiments are defined for n in {{2, 3, 4}}, got {n}")
    vocab = Vocab(n)
    params = params or SamplerParams(seed=seed)
    train_spec, bin_specs = experiment_specs(name, train_size, bin_size)
    train_words = sample_bin(train_spec, params, vocab, rng=_bin_rng(seed, name, "train"))
    bins = {}
    for spec in bin_specs:
        words = sample_bin(spec, params, vocab, rng=_bin_rng(seed, name, spec.name))
        for w in words:
            assert spec.admits(w, vocab), (spec.name, w)
        bins[spec.name] = make_dataset(words, vocab)
    return Experiment(name, n, vocab, train_spec, bin_specs, make_dataset(train_words, vocab), bins)


# --------------------------------------------------------------------------
# sweeps

LSTM_HIDDEN = (4, 8, 16, 32, 64, 128, 256)
TRANSFORMER_HIDDEN = (8, 16, 32, 64, 128, 256)
LEARNING_RATES = (1e-2, 1e-3)


def default_grid(kind: str) -> list[dict]:
    """Hyperparameter grid spanning the searched bounds for a model family."""
    if kind == "transformer":
        axes = itertools.product(TRANSFORMER_HIDDEN, (1, 2, 4), (1, 2), LEARNING_RATES, (True, False))
        return [dict(hidden=h, heads=a, layers=l, lr=lr, use_positional=p) for h, a, l, lr, p in axes]
    return [dict(hidden=h, layers=l, lr=lr) for h, l, lr in itertools.product(LSTM_HIDDEN, (1, 2), LEARNING_RATES)]


@dataclass
class RunRecord:
    run_id: str
    model: str
    hidden: int
    layers: int
    lr: float
    heads: int
    use_positional: bool
    accuracy: dict[str, float]
    epochs: int
    wall_time: float


@dataclass
class Leaderboard:
    runs: list[RunRecord]
    rank_bin: str
    top_k: int = 5

    def ranked(self) -> list[RunRecord]:
        return sorted(self.runs, key=lambda r: (-r.accuracy.get(self.rank_bin, 0.0), r.run_id))

    def top_mean(self) -> dict[str, float]:
        top = self.ranked()[: self.top_k]
        if len(top) < self.top_k:
            log.warning("only %d completed runs; averaging over all of them", len(top))
        if not top:
            return {}
        return {b: float(np.mean([r.accuracy[b] for r in top])) for b in top[0].accuracy}

    def to_json(self) -> dict:
        return {"rank_bin": self.rank_bin, "top_k": self.top_k, "top_mean": self.top_mean(),
                "ranking": [asdict(r) for r in self.ranked()]}


def sweep(experiment: Experiment, kind: str, grid: Sequence[dict] | None = None, seed: int = 0,
          epochs: int = 100, top_k: int = 5, max_runs: int | None = None,
          out_dir: str | Path | None = None) -> Leaderboard:
    """Train every grid point, rank by the first bin's accuracy and average the top ``top_k``."""
    grid = list(grid if grid is not None else default_grid(kind))
    if max_runs is not None:
        grid = grid[:max_runs]
    if not grid:
        raise ConfigError("empty hyperparameter grid")
    runs = []
    for i, point in enumerate(grid):
        point = dict(point)
        lr = point.pop("lr", 1e-2)
        mcfg = ModelConfig(kind=kind, vocab_size=experiment.vocab.size, seed=seed + i, **point)
        t0 = time.perf_counter()
        result = train(build_model(mcfg), experiment.train_set, experiment.bins,
                       TrainConfig(lr=lr, epochs=epochs, seed=seed + i))
        runs.append(RunRecord(f"run{i:03d}", kind, mcfg.hidden, mcfg.layers, lr, mcfg.heads,
                              mcfg.use_positional, result.final, len(result.history),
                              time.perf_counter() - t0))
        if out_dir is not None:
            result.model.save(Path(out_dir) / f"run{i:03d}.ckpt", {"lr": lr})
    board = Leaderboard(runs, next(iter(experiment.bins)), top_k)
    if out_dir is not None:
        write_runs_csv(Path(out_dir) / "runs.csv", runs)
        Path(out_dir, "leaderboard.json").write_text(json.dumps(board.to_json(), indent=2))
    return board


RUN_FIELDS = ("run_id", "model", "hidden", "layers", "lr", "bin", "accuracy", "epochs", "wall_time")


def write_runs_csv(path: str | Path, runs: Sequence[RunRecord]) -> None:
    """Long format: one row per (run, bin)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RUN_FIELDS)
        for r in sorted(runs, key=lambda r: r.run_id):
            for b, acc in r.accuracy.items():
                w.writerow([r.run_id, r.model, r.hidden, r.layers, r.lr, b, repr(acc), r.epochs,
                            f"{r.wall_time:.3f}"])


def write_history_csv(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("epoch", "loss", "bin", "accuracy"))
        for rec in history:
            for b, acc in rec.accuracy.items():
                w.writerow([rec.epoch, repr(rec.loss), b, repr(acc)])


def write_bin_profile_csv(path: str | Path, model, experiment: Experiment) -> None:
    """Plot-ready accuracy per bin with the bin's length and depth bounds."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("bin", "length_lo", "length_hi", "depth_lo", "depth_hi", "accuracy"))
        for spec in experiment.bin_specs:
            acc = evaluate(model, experiment.bins[spec.name]).accuracy
            dlo, dhi = spec.depth_range or ("", "")
            w.writerow([spec.name, *spec.length_range, dlo, dhi, repr(acc)])


# --------------------------------------------------------------------------
# robustness


def robustness_eval(model, n: int, distributions: Sequence[tuple[float, float]] = ROBUSTNESS_DISTRIBUTIONS,
                    size: int = 1_000, seed: int = 0) -> dict[tuple[float, float], float]:
    """Accuracy on fresh length-[2, 50] samples drawn under each ``(p, q)``."""
    vocab = Vocab(n)
    out = {}
    for p, q in distributions:
        spec = BinSpec(size, (2, 50), None, f"p={p},q={q}")
        words = sample_bin(spec, SamplerParams(p=p, q=q, seed=seed), vocab,
                           rng=random.Random(f"{seed}:robust:{p}:{q}"))
        out[(p, q)] = evaluate(model, make_dataset(words, vocab)).accuracy
    return out


def depth_of(samples: Sequence[NcpSample], vocab: Vocab) -> list[int]:
    return [max_depth(s.tokens, vocab) for s in samples]
