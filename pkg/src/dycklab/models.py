"""Trainable next-character-prediction models: vanilla RNN, LSTM, GPT-style decoder.

All models map a batch of token ids ``(B, T)`` to per-step logistic scores
``(B, T, 2n)``. Recurrent states start at zero; weights are drawn uniformly
from ``[-1/sqrt(hidden), 1/sqrt(hidden)]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dyck import TokenSeq, Vocab
from .errors import ConfigError, InputError, LengthError, ResourceError

KINDS = ("rnn_tanh", "rnn_relu", "lstm", "transformer")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "lstm"
    hidden: int = 32
    layers: int = 1
    heads: int = 1
    use_positional: bool = True
    vocab_size: int = 4
    seed: int = 0
    max_positions: int = 512

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not 4 <= self.hidden <= 256:
            raise ConfigError(f"hidden must lie in [4, 256], got {self.hidden}")
        if not 1 <= self.layers <= 2:
            raise ConfigError(f"layers must lie in [1, 2], got {self.layers}")
        if not 1 <= self.heads <= 4:
            raise ConfigError(f"heads must lie in [1, 4], got {self.heads}")
        if self.kind == "transformer" and self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} is not divisible by heads {self.heads}")
        if self.vocab_size < 2 or self.vocab_size % 2:
            raise ConfigError(f"vocab_size must be 2n, got {self.vocab_size}")


@dataclass
class ForwardOut:
    probs: Tensor
    logits: Tensor
    hidden: Tensor | None = None  # (B, T, H) top-layer states feeding the output
    cells: Tensor | None = None  # LSTM only
    all_hidden: list = field(default_factory=list)
    all_cells: list = field(default_factory=list)


def _uniform(rng: np.random.Generator, shape, k: float) -> Tensor:
    return ad.parameter(rng.uniform(-k, k, size=shape))


def pad_batch(words: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with token 0; returns ``(tokens, mask)`` each of shape (B, T)."""
    if not words:
        raise InputError("empty batch")
    T = max(len(w) for w in words)
    if T == 0:
        raise InputError("every sequence in the batch is empty")
    tokens = np.zeros((len(words), T), dtype=np.int64)
    mask = np.zeros((len(words), T))
    for i, w in enumerate(words):
        tokens[i, : len(w)] = w
        mask[i, : len(w)] = 1.0
    return tokens, mask


class SequenceModel:
    """Named parameters plus a batched forward pass."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(config.seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def forward(self, tokens: np.ndarray) -> ForwardOut:
        raise NotImplementedError

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.ndim != 2 or tokens.shape[1] == 0:
            raise InputError(f"expected a non-empty (B, T) token batch, got shape {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise InputError(f"token ids must lie in [0, {self.config.vocab_size})")
        return tokens

    def _output(self, h: Tensor) -> tuple[Tensor, Tensor]:
        logits = h @ self.params["W_out"] + self.params["b_out"]
        return ad.sigmoid(logits), logits

    def predict_proba(self, words: Sequence[TokenSeq], batch_size: int = 512) -> list[np.ndarray]:
        """Per-step probabilities for each word, batched by similar length."""
        order = sorted(range(len(words)), key=lambda i: len(words[i]))
        out: list[np.ndarray | None] = [None] * len(words)
        with ad.no_grad():
            for start in range(0, len(order), batch_size):
                chunk = order[start:start + batch_size]
                tokens, _ = pad_batch([words[i] for i in chunk])
                probs = self.forward(tokens).probs.data
                for row, i in enumerate(chunk):
                    out[i] = probs[row, : len(words[i])]
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise InputError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise InputError(f"parameter {k!r}: checkpoint shape {arrays[k].shape} vs model {p.shape}")
            p.data[...] = arrays[k]

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"config": asdict(self.config), **(extra or {})}
        ad.save_checkpoint(path, self.params, meta)


class RecurrentModel(SequenceModel):
    """Vanilla ``tanh``/``ReLU`` RNN or LSTM, one or two stacked layers."""

    def _init_params(self, rng):
        c = self.config
        H, V = c.hidden, c.vocab_size
        k = 1.0 / math.sqrt(H)
        gates = 4 if c.kind == "lstm" else 1
        for layer in range(c.layers):
            fan_in = V if layer == 0 else H
            self.params[f"W_ih{layer}"] = _uniform(rng, (fan_in, gates * H), k)
            self.params[f"W_hh{layer}"] = _uniform(rng, (H, gates * H), k)
            self.params[f"b{layer}"] = _uniform(rng, (gates * H,), k)
        self.params["W_out"] = _uniform(rng, (H, V), k)
        self.params["b_out"] = _uniform(rng, (V,), k)

    def forward(self, tokens) -> ForwardOut:
        tokens = self._check_tokens(tokens)
        c = self.config
        B, T = tokens.shape
        H = c.hidden
        all_h, all_c = [], []
        layer_in = None
        for layer in range(c.layers):
            W_ih, W_hh, b = (self.params[f"{n}{layer}"] for n in ("W_ih", "W_hh", "b"))
            if layer == 0:
                xproj = ad.embedding(W_ih, tokens) + b
            else:
                xproj = layer_in @ W_ih + b
            h = Tensor(np.zeros((B, H)))
            cell = Tensor(np.zeros((B, H)))
            hs, cs = [], []
            for t in range(T):
                z = xproj[:, t] + h @ W_hh
                if c.kind == "lstm":
                    s = ad.sigmoid(z[:, : 3 * H])
                    g = ad.tanh(z[:, 3 * H:])
                    i_g, f_g, o_g = s[:, :H], s[:, H:2 * H], s[:, 2 * H:]
                    cell = f_g * cell + i_g * g
                    h = o_g * ad.tanh(cell)
                    cs.append(cell)
                elif c.kind == "rnn_tanh":
                    h = ad.tanh(z)
                else:
                    h = ad.relu(z)
                hs.append(h)
            layer_in = ad.stack(hs, axis=1)
            all_h.append(layer_in)
            if cs:
                all_c.append(ad.stack(cs, axis=1))
        probs, logits = self._output(layer_in)
        return ForwardOut(probs, logits, layer_in, all_c[-1] if all_c else None, all_h, all_c)


class TransformerModel(SequenceModel):
    """Decoder-only pre-norm transformer with causal self-attention."""

    def _init_params(self, rng):
        c = self.config
        d, V = c.hidden, c.vocab_size
        k = 1.0 / math.sqrt(d)
        p = self.params
        p["tok_emb"] = _uniform(rng, (V, d), k)
        if c.use_positional:
            p["pos_emb"] = _uniform(rng, (c.max_positions, d), k)
        for l in range(c.layers):
            p[f"ln1_g{l}"] = ad.parameter(np.ones(d))
            p[f"ln1_b{l}"] = ad.parameter(np.zeros(d))
            p[f"W_qkv{l}"] = _uniform(rng, (d, 3 * d), k)
            p[f"b_qkv{l}"] = _uniform(rng, (3 * d,), k)
            p[f"W_o{l}"] = _uniform(rng, (d, d), k)
            p[f"b_o{l}"] = _uniform(rng, (d,), k)
            p[f"ln2_g{l}"] = ad.parameter(np.ones(d))
            p[f"ln2_b{l}"] = ad.parameter(np.zeros(d))
            p[f"W_fc{l}"] = _uniform(rng, (d, 4 * d), k)
            p[f"b_fc{l}"] = _uniform(rng, (4 * d,), k)
            p[f"W_proj{l}"] = _uniform(rng, (4 * d, d), 1.0 / math.sqrt(4 * d))
            p[f"b_proj{l}"] = _uniform(rng, (d,), k)
        p["lnf_g"] = ad.parameter(np.ones(d))
        p["lnf_b"] = ad.parameter(np.zeros(d))
        p["W_out"] = _uniform(rng, (d, V), k)
        p["b_out"] = _uniform(rng, (V,), k)

    def forward(self, tokens) -> ForwardOut:
        tokens = self._check_tokens(tokens)
        c, p = self.config, self.params
        B, T = tokens.shape
        d, nh = c.hidden, c.heads
        dh = d // nh
        x = ad.embedding(p["tok_emb"], tokens)
        if c.use_positional:
            if T > c.max_positions:
                raise LengthError(f"sequence length {T} exceeds the {c.max_positions} learned positions")
            x = x + p["pos_emb"][:T]
        causal = np.triu(np.full((T, T), -1e9), k=1)
        hiddens = []
        for l in range(c.layers):
            a = ad.layer_norm(x, p[f"ln1_g{l}"], p[f"ln1_b{l}"])
            qkv = (a @ p[f"W_qkv{l}"] + p[f"b_qkv{l}"]).reshape(B, T, 3, nh, dh)
            qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, nh, T, dh)
            q, k_, v = qkv[0], qkv[1], qkv[2]
            scores = (q @ ad.transpose(k_, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh)) + causal
            att = ad.softmax(scores, axis=-1) @ v  # (B, nh, T, dh)
            att = ad.transpose(att, (0, 2, 1, 3)).reshape(B, T, d)
            x = x + (att @ p[f"W_o{l}"] + p[f"b_o{l}"])
            m = ad.layer_norm(x, p[f"ln2_g{l}"], p[f"ln2_b{l}"])
            m = ad.relu(m @ p[f"W_fc{l}"] + p[f"b_fc{l}"]) @ p[f"W_proj{l}"] + p[f"b_proj{l}"]
            x = x + m
            hiddens.append(x)
        x = ad.layer_norm(x, p["lnf_g"], p["lnf_b"])
        probs, logits = self._output(x)
        return ForwardOut(probs, logits, x, None, hiddens, [])


def build_model(config: ModelConfig) -> SequenceModel:
    if config.kind == "transformer":
        return TransformerModel(config)
    return RecurrentModel(config)


def load_model(path: str | Path) -> tuple[SequenceModel, dict]:
    arrays, meta = ad.load_checkpoint(path)
    model = build_model(ModelConfig(**meta["config"]))
    model.load_arrays(arrays)
    return model, meta


def lstm_forward(model: RecurrentModel, tokens: TokenSeq) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probabilities, top-layer hidden states and cell states for one sequence, each (T, .)."""
    if model.config.kind != "lstm":
        raise InputError("lstm_forward needs an LSTM model")
    if len(tokens) == 0:
        raise InputError("empty input sequence")
    with ad.no_grad():
        out = model.forward(np.asarray(tokens)[None, :])
    return out.probs.data[0], out.hidden.data[0], out.cells.data[0]


def transformer_forward(model: TransformerModel, tokens: TokenSeq) -> np.ndarray:
    if model.config.kind != "transformer":
        raise InputError("transformer_forward needs a transformer model")
    if len(tokens) == 0:
        raise InputError("empty input sequence")
    with ad.no_grad():
        return model.forward(np.asarray(tokens)[None, :]).probs.data[0]


# --------------------------------------------------------------------------
# scorers that stand in for a trained model


class OracleModel:
    """Emits the exact next-valid sets as probabilities."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab

    def predict_proba(self, words: Sequence[TokenSeq]) -> list[np.ndarray]:
        from .dyck import next_valid_sets
        return [next_valid_sets(w, self.vocab).astype(np.float64) for w in words]


class ConstantModel:
    def __init__(self, vocab: Vocab, value: float = 0.5):
        self.vocab, self.value = vocab, value

    def predict_proba(self, words: Sequence[TokenSeq]) -> list[np.ndarray]:
        return [np.full((len(w), self.vocab.size), self.value) for w in words]


def last_step_scorer(model) -> Callable[[list], np.ndarray]:
    """Adapt anything with ``predict_proba`` into a next-symbol scorer for non-empty prefixes."""
    def score(prefixes: list) -> np.ndarray:
        return np.stack([p[-1] for p in model.predict_proba(prefixes)])
    return score


def generate_all(model, vocab: Vocab, max_len: int, threshold: float = 0.5,
                 cap: int = 2_000_000) -> list[list[int]]:
    """Breadth-first generation following every symbol the model scores above ``threshold``.

    The empty prefix expands to every symbol. A prefix is dropped once its
    bracket skeleton (types ignored) closes more than it opened or can no
    longer rebalance within ``max_len``; it is emitted whenever the skeleton
    is balanced. Output is sorted by length, then symbol index.
    """
    score = last_step_scorer(model)
    n = vocab.n
    words = [[]]
    frontier: list[tuple[list[int], int]] = [([], 0)]
    seen = 0
    for length in range(max_len):
        nxt: list[tuple[list[int], int]] = []
        if length == 0:
            cands = [[True] * vocab.size]
        else:
            probs = score([p for p, _ in frontier])
            cands = probs > threshold
        for (prefix, depth), allowed in zip(frontier, cands):
            for sym in range(vocab.size):
                if not allowed[sym]:
                    continue
                d = depth + (1 if sym < n else -1)
                if d < 0 or d > max_len - length - 1:
                    continue
                nxt.append((prefix + [sym], d))
        seen += len(nxt)
        if seen > cap:
            raise ResourceError(f"generation frontier exceeded the cap of {cap} prefixes")
        words.extend(p for p, d in nxt if d == 0)
        frontier = nxt
        if not frontier:
            break
    uniq = {tuple(w) for w in words}
    return [list(w) for w in sorted(uniq, key=lambda w: (len(w), w))]
