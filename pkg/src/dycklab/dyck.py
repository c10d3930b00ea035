"""Dyck-n vocabulary, word analysis, PCFG sampling and enumeration.

Words are plain sequences of integer symbol indices into a :class:`Vocab`.
Opening bracket of type ``i`` (1-based) lives at index ``i - 1`` and its
closing partner at index ``n + i - 1``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, CorruptionError, InputError, ResourceError, SamplingError

TokenSeq = Sequence[int]

_OPENERS = "([{<"
_CLOSERS = ")]}>"


def _default_symbols(n: int) -> tuple[str, ...]:
    if n <= len(_OPENERS):
        return tuple(_OPENERS[:n]) + tuple(_CLOSERS[:n])
    return tuple(f"o{i}" for i in range(1, n + 1)) + tuple(f"c{i}" for i in range(1, n + 1))


@dataclass(frozen=True)
class Vocab:
    """The 2n-symbol bracket alphabet of Dyck-n."""

    n: int
    symbols: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n must be an integer >= 1, got {self.n!r}")
        if not self.symbols:
            object.__setattr__(self, "symbols", _default_symbols(self.n))
        else:
            object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(self.symbols) != 2 * self.n:
            raise ConfigError(f"need {2 * self.n} symbols for n={self.n}, got {len(self.symbols)}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigError("symbols must be distinct")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return 2 * self.n

    def open_index(self, i: int) -> int:
        """Index of the opening bracket of (1-based) type ``i``."""
        return i - 1

    def close_index(self, i: int) -> int:
        return self.n + i - 1

    def is_open(self, tok: int) -> bool:
        return tok < self.n

    def bracket_type(self, tok: int) -> int:
        """0-based bracket type of a symbol index."""
        return tok if tok < self.n else tok - self.n

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise InputError(f"unknown symbol {symbol!r} for Dyck-{self.n}") from None

    def parse(self, text: str) -> list[int]:
        """Parse ``"( [ ] )"`` or, for single-character symbols, ``"([])"``."""
        text = text.strip()
        if not text:
            return []
        parts = text.split()
        if len(parts) == 1 and parts[0] not in self._index and all(len(s) == 1 for s in self.symbols):
            parts = list(parts[0])
        return [self.index(p) for p in parts]

    def render(self, seq: TokenSeq, sep: str = " ") -> str:
        check_tokens(seq, self)
        return sep.join(self.symbols[t] for t in seq)


def check_tokens(seq: TokenSeq, vocab: Vocab) -> None:
    for t in seq:
        if not (0 <= t < vocab.size):
            raise InputError(f"symbol index {t} out of range [0, {vocab.size})")


def is_valid(seq: TokenSeq, vocab: Vocab) -> bool:
    check_tokens(seq, vocab)
    stack: list[int] = []
    n = vocab.n
    for t in seq:
        if t < n:
            stack.append(t)
        elif not stack or stack.pop() != t - n:
            return False
    return not stack


def depth_profile(seq: TokenSeq, vocab: Vocab) -> list[int]:
    """Stack height (opens minus closes) after each prefix of length 1..T.

    Raises :class:`InputError` if some prefix has more closes than opens.
    """
    check_tokens(seq, vocab)
    d = 0
    out = []
    for t in seq:
        d += 1 if t < vocab.n else -1
        if d < 0:
            raise InputError("prefix closes more brackets than it opens")
        out.append(d)
    return out


def max_depth(seq: TokenSeq, vocab: Vocab) -> int:
    return max(depth_profile(seq, vocab), default=0)


def open_stack(prefix: TokenSeq, vocab: Vocab) -> list[int]:
    """Bracket types still open after ``prefix``, bottom first.

    Raises :class:`InputError` if the prefix cannot be extended to a Dyck word.
    """
    check_tokens(prefix, vocab)
    n = vocab.n
    stack: list[int] = []
    for pos, t in enumerate(prefix):
        if t < n:
            stack.append(t)
        elif not stack or stack[-1] != t - n:
            raise InputError(f"prefix is not extendable to a Dyck word (position {pos})")
        else:
            stack.pop()
    return stack


def next_valid_set(prefix: TokenSeq, vocab: Vocab) -> np.ndarray:
    """k-hot vector of symbols that may legally follow ``prefix``."""
    stack = open_stack(prefix, vocab)
    out = np.zeros(vocab.size, dtype=np.int8)
    out[: vocab.n] = 1
    if stack:
        out[vocab.n + stack[-1]] = 1
    return out


def next_valid_sets(word: TokenSeq, vocab: Vocab) -> np.ndarray:
    """Row ``t`` is :func:`next_valid_set` of the prefix of length ``t + 1``."""
    check_tokens(word, vocab)
    n = vocab.n
    rows = np.zeros((len(word), vocab.size), dtype=np.int8)
    rows[:, :n] = 1
    stack: list[int] = []
    for t, tok in enumerate(word):
        if tok < n:
            stack.append(tok)
        elif not stack or stack[-1] != tok - n:
            raise InputError(f"prefix is not extendable to a Dyck word (position {t})")
        else:
            stack.pop()
        if stack:
            rows[t, n + stack[-1]] = 1
    return rows


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SamplerParams:
    p: float = 0.5
    q: float = 0.25
    seed: int = 0
    max_expansion: int = 10_000

    def __post_init__(self):
        if self.p < 0 or self.q < 0 or self.p + self.q > 1:
            raise ConfigError(f"need p, q >= 0 and p + q <= 1, got p={self.p}, q={self.q}")
        if self.max_expansion < 1:
            raise ConfigError("max_expansion must be positive")


@dataclass(frozen=True)
class BinSpec:
    size: int
    length_range: tuple[int, int]
    depth_range: tuple[int, int] | None = None
    name: str = ""

    def __post_init__(self):
        lo, hi = self.length_range
        if self.size < 0:
            raise ConfigError("bin size must be non-negative")
        if not 2 <= lo <= hi:
            raise ConfigError(f"length range must satisfy 2 <= lo <= hi, got {self.length_range}")
        if self.depth_range is not None:
            dlo, dhi = self.depth_range
            if not 1 <= dlo <= dhi:
                raise ConfigError(f"depth range must satisfy 1 <= lo <= hi, got {self.depth_range}")
            if 2 * dlo > hi:
                raise ConfigError(f"no word of length <= {hi} reaches depth {dlo}")
        if lo % 2 and lo == hi:
            raise ConfigError(f"length range {self.length_range} contains no even length")

    def admits(self, word: TokenSeq, vocab: Vocab) -> bool:
        lo, hi = self.length_range
        if not (lo <= len(word) <= hi and len(word) % 2 == 0):
            return False
        if self.depth_range is None:
            return True
        d = max_depth(word, vocab)
        return self.depth_range[0] <= d <= self.depth_range[1]


class _Abort(Exception):
    pass


def _derive(rng: random.Random, params: SamplerParams, n: int,
            max_len: int | None = None, max_d: int | None = None) -> list[int]:
    """One leftmost derivation; raises _Abort on budget or cap overrun."""
    p, pq = params.p, params.p + params.q
    out: list[int] = []
    # worklist holds -1 for S, otherwise a terminal to emit; top is the leftmost item
    work = [-1]
    steps = 0
    depth = 0
    # emitted plus pending terminals: a lower bound on the final length
    committed = 0
    rand = rng.random
    randrange = rng.randrange
    while work:
        item = work.pop()
        if item >= 0:
            out.append(item)
            if item < n:
                depth += 1
                if max_d is not None and depth > max_d:
                    raise _Abort("depth")
            else:
                depth -= 1
            continue
        steps += 1
        if steps > params.max_expansion:
            raise _Abort("expansion")
        u = rand()
        if u < p:
            i = randrange(n) if n > 1 else 0
            work.append(n + i)
            work.append(-1)
            work.append(i)
            committed += 2
            if max_len is not None and committed > max_len:
                raise _Abort("length")
        elif u < pq:
            work.append(-1)
            work.append(-1)
    return out


def sample_word(params: SamplerParams, vocab: Vocab, rng: random.Random | None = None) -> list[int]:
    """Sample one Dyck word by stochastic leftmost expansion.

    Derivations exceeding ``params.max_expansion`` rule applications are
    discarded and redrawn from the same generator.
    """
    if rng is None:
        rng = random.Random(params.seed)
    while True:
        try:
            return _derive(rng, params, vocab.n)
        except _Abort:
            continue


def sample_bin(spec: BinSpec, params: SamplerParams, vocab: Vocab,
               budget: int = 10**7, rng: random.Random | None = None) -> list[list[int]]:
    """Rejection-sample ``spec.size`` words satisfying the bin's length and depth ranges.

    Derivations are cut short as soon as they are bound to overshoot the
    upper length or depth limit; such attempts count against ``budget``.
    """
    if rng is None:
        rng = random.Random(params.seed)
    lo, hi = spec.length_range
    dlo, dhi = spec.depth_range if spec.depth_range is not None else (None, None)
    words: list[list[int]] = []
    attempts = 0
    misses = {"length": 0, "depth": 0, "expansion": 0}
    n = vocab.n
    while len(words) < spec.size:
        if attempts >= budget:
            worst = max(misses, key=misses.get)
            raise SamplingError(
                f"rejection budget of {budget} attempts exhausted with {len(words)}/{spec.size} words "
                f"for bin {spec.name or spec.length_range}; most rejections on the {worst} constraint "
                f"(length {spec.length_range}, depth {spec.depth_range}): {misses}")
        attempts += 1
        try:
            w = _derive(rng, params, n, max_len=hi, max_d=dhi)
        except _Abort as e:
            misses[e.args[0]] += 1
            continue
        if not lo <= len(w) <= hi:
            misses["length"] += 1
            continue
        if dlo is not None and max_depth(w, vocab) < dlo:
            misses["depth"] += 1
            continue
        words.append(w)
    return words


# --------------------------------------------------------------------------
# enumeration


def catalan(k: int) -> int:
    return comb(2 * k, k) // (k + 1)


def count_words(n: int, max_len: int) -> int:
    """Number of Dyck-n words of length <= max_len, including the empty word."""
    return sum(catalan(k) * n**k for k in range(max_len // 2 + 1))


def enumerate_words(vocab: Vocab, max_len: int, cap: int = 10**7) -> list[list[int]]:
    """All Dyck-n words of length <= max_len, ordered by length then symbol index."""
    if max_len < 0:
        raise InputError("max_len must be non-negative")
    total = count_words(vocab.n, max_len)
    if total > cap:
        raise ResourceError(f"{total} words of length <= {max_len} exceeds the output cap {cap}")
    out: list[list[int]] = []
    for length in range(0, max_len + 1, 2):
        _enumerate_length(vocab.n, length, out)
    return out


def _enumerate_length(n: int, length: int, out: list[list[int]]) -> None:
    prefix: list[int] = []
    stack: list[int] = []

    def rec():
        remaining = length - len(prefix)
        if remaining == 0:
            out.append(list(prefix))
            return
        # symbol order: all openers (0..n-1) precede all closers (n..2n-1)
        if len(stack) < remaining:
            for i in range(n):
                prefix.append(i)
                stack.append(i)
                rec()
                stack.pop()
                prefix.pop()
        if stack:
            top = stack.pop()
            prefix.append(n + top)
            rec()
            prefix.pop()
            stack.append(top)

    rec()


# --------------------------------------------------------------------------
# negatives


def corrupt_word(word: TokenSeq, vocab: Vocab, seed: int | random.Random, budget: int = 1000) -> list[int]:
    """Return a same-length invalid sequence obtained by one local mutation of ``word``."""
    if not word:
        raise InputError("cannot corrupt the empty word")
    if not is_valid(word, vocab):
        raise InputError("corrupt_word expects a valid Dyck word")
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    n = vocab.n
    w = list(word)
    partner = _matching(w, n)
    kinds = ["swap", "reverse"] + (["retype"] if n > 1 else [])
    for _ in range(budget):
        kind = rng.choice(kinds)
        out = list(w)
        if kind == "swap":
            cands = [i for i in range(len(w) - 1) if w[i] != w[i + 1]]
            if not cands:
                continue
            i = rng.choice(cands)
            out[i], out[i + 1] = out[i + 1], out[i]
        elif kind == "reverse":
            i = rng.choice([k for k in range(len(w)) if w[k] < n])
            j = partner[i]
            out[i], out[j] = out[j], out[i]
        else:
            j = rng.choice([k for k in range(len(w)) if w[k] >= n])
            new_type = rng.choice([t for t in range(n) if t != w[j] - n])
            out[j] = n + new_type
        if not is_valid(out, vocab):
            return out
    raise CorruptionError(f"no invalidating mutation found within {budget} tries")


def _matching(word: list[int], n: int) -> dict[int, int]:
    stack = []
    partner = {}
    for k, t in enumerate(word):
        if t < n:
            stack.append(k)
        else:
            o = stack.pop()
            partner[o] = k
            partner[k] = o
    return partner


# --------------------------------------------------------------------------
# dataset files


@dataclass
class DatasetFile:
    vocab: Vocab
    words: list[list[int]]
    header: dict[str, str] = field(default_factory=dict)


def write_dataset(path: str | Path, words: Iterable[TokenSeq], vocab: Vocab,
                  params: SamplerParams | None = None, seed: int | None = None) -> None:
    params = params or SamplerParams()
    seed = params.seed if seed is None else seed
    lines = [f"#dyck n={vocab.n} p={params.p} q={params.q} seed={seed}"]
    lines += [vocab.render(w) for w in words]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_dataset(path: str | Path) -> DatasetFile:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if not lines or not lines[0].startswith("#dyck"):
        raise InputError(f"{path}: missing '#dyck' header line")
    header = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    vocab = Vocab(int(header["n"]))
    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    return DatasetFile(vocab, [vocab.parse(line) for line in body], header)
