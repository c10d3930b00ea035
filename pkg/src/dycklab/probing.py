"""Probing trained LSTMs: stack depth from cell states, stack contents via auxiliary heads.

Depth labels and stack labels are always recomputed from the raw words, so
features and labels stay aligned row by row.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .dyck import TokenSeq, Vocab, depth_profile, open_stack
from .errors import ConfigError, InputError, LabelError
from .models import ModelConfig, SequenceModel, build_model, pad_batch
from .ncp import NcpSample, TrainConfig, TrainResult, mse_loss_batch, train

PROBE_HIDDEN = 32
STACK_POSITIONS = 10


def depth_labels(word: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Stack height after each prefix of ``word``."""
    return np.asarray(depth_profile(word, vocab), dtype=np.int64)


def collect_states(model: SequenceModel, words: Sequence[TokenSeq], which: str = "cell",
                   batch_size: int = 512) -> list[np.ndarray]:
    """Top-layer ``hidden`` or ``cell`` states, one ``(T, H)`` array per word."""
    if which not in ("hidden", "cell"):
        raise ConfigError(f"which must be 'hidden' or 'cell', got {which!r}")
    if which == "cell" and model.config.kind != "lstm":
        raise InputError("cell states exist only for LSTM models")
    out: list[np.ndarray | None] = [None] * len(words)
    order = sorted(range(len(words)), key=lambda i: len(words[i]))
    with ad.no_grad():
        for s in range(0, len(order), batch_size):
            chunk = order[s:s + batch_size]
            tokens, _ = pad_batch([words[i] for i in chunk])
            res = model.forward(tokens)
            states = (res.cells if which == "cell" else res.hidden).data
            for row, i in enumerate(chunk):
                out[i] = states[row, : len(words[i])].copy()
    return out


# --------------------------------------------------------------------------
# depth probe


@dataclass(frozen=True)
class ProbeConfig:
    num_classes: int = 11  # depths 0..10
    lr: float = 1e-3
    batch_size: int = 200
    epochs: int = 200
    seed: int = 0


class DepthProbe:
    """One hidden ReLU layer of width 32 mapping a state vector to depth logits."""

    hidden = PROBE_HIDDEN

    def __init__(self, in_dim: int, num_classes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        k1, k2 = 1 / math.sqrt(in_dim), 1 / math.sqrt(self.hidden)
        self.params = {
            "W1": ad.parameter(rng.uniform(-k1, k1, (in_dim, self.hidden))),
            "b1": ad.parameter(np.zeros(self.hidden)),
            "W2": ad.parameter(rng.uniform(-k2, k2, (self.hidden, num_classes))),
            "b2": ad.parameter(np.zeros(num_classes)),
        }
        self.num_classes = num_classes

    def logits(self, x) -> ad.Tensor:
        p = self.params
        return ad.relu(ad.Tensor(x) @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]

    def predict(self, x: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.logits(x).data.argmax(axis=-1)


@dataclass
class ProbeResult:
    probe: DepthProbe
    accuracy: float  # sequences whose depth is right at every step
    step_accuracy: float
    losses: list[float] = field(default_factory=list)


def _check_labels(labels: Sequence[np.ndarray], num_classes: int) -> None:
    worst = max((int(l.max()) for l in labels if len(l)), default=0)
    if worst >= num_classes:
        raise LabelError(f"depth label {worst} exceeds the probe's {num_classes} classes (0..{num_classes - 1})")


def sequence_accuracy(probe: DepthProbe, features: Sequence[np.ndarray],
                      labels: Sequence[np.ndarray]) -> tuple[float, float]:
    """(all-steps-correct sequence accuracy, per-step accuracy)."""
    if not features:
        return 0.0, 0.0
    lengths = [len(f) for f in features]
    pred = probe.predict(np.concatenate(features))
    hits = pred == np.concatenate(labels)
    bounds = np.cumsum([0] + lengths)
    seq_ok = [hits[a:b].all() for a, b in zip(bounds[:-1], bounds[1:])]
    return float(np.mean(seq_ok)), float(hits.mean())


def fit_probe(features: Sequence[np.ndarray], labels: Sequence[np.ndarray], cfg: ProbeConfig,
              val_features: Sequence[np.ndarray] | None = None,
              val_labels: Sequence[np.ndarray] | None = None) -> ProbeResult:
    """Train a depth probe on per-step samples pooled over all sequences."""
    _check_labels(labels, cfg.num_classes)
    if val_labels is not None:
        _check_labels(val_labels, cfg.num_classes)
    X = np.concatenate(features)
    y = np.concatenate(labels)
    probe = DepthProbe(X.shape[1], cfg.num_classes, cfg.seed)
    opt = ad.Optimizer(probe.params, "adam", cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            opt.zero_grad()
            loss = ad.cross_entropy(probe.logits(X[idx]), y[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        losses.append(total / len(X))
    vf = val_features if val_features is not None else features
    vl = val_labels if val_labels is not None else labels
    acc, step_acc = sequence_accuracy(probe, vf, vl)
    return ProbeResult(probe, acc, step_acc, losses)


def train_depth_probe(model: SequenceModel, train_words: Sequence[TokenSeq], val_words: Sequence[TokenSeq],
                      vocab: Vocab, cfg: ProbeConfig = ProbeConfig(), which: str = "cell") -> ProbeResult:
    """Fit a probe on the frozen model's states and score it on held-out words."""
    feats = collect_states(model, train_words, which)
    vfeats = collect_states(model, val_words, which)
    return fit_probe(feats, [depth_labels(w, vocab) for w in train_words], cfg,
                     vfeats, [depth_labels(w, vocab) for w in val_words])


def oracle_depth_features(words: Sequence[TokenSeq], vocab: Vocab, num_classes: int) -> list[np.ndarray]:
    """One-hot depth vectors standing in for cell states."""
    out = []
    for w in words:
        d = depth_labels(w, vocab)
        _check_labels([d], num_classes)
        out.append(np.eye(num_classes)[d])
    return out


# --------------------------------------------------------------------------
# stack extraction


def stack_labels(word: TokenSeq, vocab: Vocab, positions: int = STACK_POSITIONS) -> np.ndarray:
    """``(T, positions)`` labels; column i is the bracket type at stack position i + 1 counted from
    the top, or ``n`` when the stack is shallower."""
    open_stack(word, vocab)  # validates
    n = vocab.n
    out = np.full((len(word), positions), n, dtype=np.int64)
    stack: list[int] = []
    for t, tok in enumerate(word):
        if tok < n:
            stack.append(tok)
        else:
            stack.pop()
        top = stack[::-1][:positions]
        out[t, : len(top)] = top
    return out


class StackAuxHeads:
    """Ten parallel affine classifiers over the NCP hidden state, stored as one block matrix."""

    def __init__(self, hidden: int, n: int, positions: int = STACK_POSITIONS, seed: int = 0):
        rng = np.random.default_rng(seed)
        k = 1 / math.sqrt(hidden)
        self.positions, self.classes = positions, n + 1
        self.params = {
            "aux_W": ad.parameter(rng.uniform(-k, k, (hidden, positions * self.classes))),
            "aux_b": ad.parameter(rng.uniform(-k, k, (positions * self.classes,))),
        }

    def logits(self, h: ad.Tensor) -> ad.Tensor:
        B, T, _ = h.shape
        z = h @ self.params["aux_W"] + self.params["aux_b"]
        return z.reshape(B, T, self.positions, self.classes)


def joint_loss(model: SequenceModel, heads: StackAuxHeads, tokens: np.ndarray, targets: np.ndarray,
               mask: np.ndarray, labels: np.ndarray, lam: float) -> ad.Tensor:
    """NCP MSE plus ``lam`` times the head-averaged cross-entropy."""
    out = model.forward(tokens)
    ncp = mse_loss_batch(out.probs, targets, mask)
    pos_mask = np.repeat(mask[..., None], heads.positions, axis=-1)
    aux = ad.cross_entropy(heads.logits(out.hidden), labels, pos_mask)
    return ncp + aux * lam


@dataclass
class StackModel:
    model: SequenceModel
    heads: StackAuxHeads
    vocab: Vocab

    def predict_stack(self, words: Sequence[TokenSeq]) -> list[np.ndarray]:
        hs = collect_states(self.model, words, "hidden")
        out = []
        with ad.no_grad():
            for h in hs:
                out.append(self.heads.logits(ad.Tensor(h[None])).data[0].argmax(axis=-1))
        return out


def train_with_stack_aux(model_cfg: ModelConfig, train_set: Sequence[NcpSample], eval_bins: dict,
                         vocab: Vocab, lam: float = 1 / 20, cfg: TrainConfig = TrainConfig(),
                         positions: int = STACK_POSITIONS) -> tuple[StackModel, TrainResult]:
    """Co-train an NCP model and the stack heads under the joint loss."""
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    if model_cfg.kind == "transformer":
        raise ConfigError("stack extraction heads are defined for recurrent models")
    model = build_model(model_cfg)
    heads = StackAuxHeads(model_cfg.hidden, vocab.n, positions, model_cfg.seed)
    model.params.update(heads.params)
    labels_of = {id(s): stack_labels(s.tokens, vocab, positions) for s in train_set}

    def loss_fn(m, samples, tokens, targets, mask):
        labels = np.full(tokens.shape + (positions,), vocab.n, dtype=np.int64)
        for i, s in enumerate(samples):
            labels[i, : len(s.tokens)] = labels_of[id(s)]
        return joint_loss(m, heads, tokens, targets, mask, labels, lam)

    try:
        result = train(model, train_set, eval_bins, cfg, loss_fn=loss_fn)
    finally:
        for k in heads.params:
            model.params.pop(k, None)
    return StackModel(model, heads, vocab), result


@dataclass
class StackReport:
    accuracy: list[float]
    recall: list[float]
    support: list[int]  # sequences reaching depth >= i


def eval_stack_extraction(predict: Callable[[Sequence[TokenSeq]], list[np.ndarray]],
                          words: Sequence[TokenSeq], vocab: Vocab,
                          positions: int = STACK_POSITIONS) -> StackReport:
    """Per position: share of sequences predicted right at every step, overall and among
    sequences whose depth reaches that position."""
    preds = predict(words)
    ok = np.zeros((len(words), positions), dtype=bool)
    reach = np.zeros((len(words), positions), dtype=bool)
    for j, (w, p) in enumerate(zip(words, preds)):
        lab = stack_labels(w, vocab, positions)
        ok[j] = (p == lab).all(axis=0)
        deepest = max(depth_profile(w, vocab), default=0)
        reach[j, : min(deepest, positions)] = True
    acc = ok.mean(axis=0).tolist() if len(words) else [0.0] * positions
    support = reach.sum(axis=0)
    recall = [float(ok[reach[:, i], i].mean()) if support[i] else float("nan") for i in range(positions)]
    return StackReport([float(a) for a in acc], recall, support.tolist())


def oracle_stack_predictor(vocab: Vocab, positions: int = STACK_POSITIONS):
    return lambda words: [stack_labels(w, vocab, positions) for w in words]


# --------------------------------------------------------------------------
# state dumps


def dump_states(model: SequenceModel, words: Sequence[TokenSeq], vocab: Vocab, path: str | Path,
                which: str = "hidden") -> int:
    """One CSV row per (word, step) holding the state vector and its depth label; returns rows written."""
    states = collect_states(model, words, which)
    dim = states[0].shape[1] if states else 0
    rows = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["word_id", "prefix_length", "depth", *(f"{which}_{i}" for i in range(dim))])
        for j, (word, st) in enumerate(zip(words, states)):
            for t, d in enumerate(depth_labels(word, vocab)):
                w.writerow([j, t + 1, int(d), *map(repr, st[t].tolist())])
                rows += 1
    return rows


@dataclass
class StateDump:
    word_id: np.ndarray
    prefix_length: np.ndarray
    depth: np.ndarray
    states: np.ndarray
    columns: list[str]


def load_states(path: str | Path) -> StateDump:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    if header[:3] != ["word_id", "prefix_length", "depth"]:
        raise InputError(f"{path}: not a state dump (header {header[:3]})")
    ints = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], dtype=np.int64).reshape(-1, 3)
    states = np.array([[float(x) for x in r[3:]] for r in rows]).reshape(len(rows), len(header) - 3)
    return StateDump(ints[:, 0], ints[:, 1], ints[:, 2], states, header[3:])
