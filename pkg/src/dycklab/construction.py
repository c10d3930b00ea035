"""Compile a DPDA into an exactly-simulating recurrent network.

Each time step applies five saturated-linear layers ``sigma(x W + b)`` to
``[h_{t-1} | x_t]`` where ``h = [q | omega]`` holds a one-hot automaton state
and the Cantor-set stack encoding from :mod:`dycklab.stack_encoding`.

Layer outputs, by block:

1. ``[pair(q, x) | tau_top | omega]``
2. ``[triple(q, x, tau_top) | tau_top | omega]``
3. ``[q' | omega | omega_pop | omega_noop | tau_push | c_push | c_pop | c_noop]``
4. ``[q' | gated_pop | gated_noop | gated_push]``
5. ``[q' | gated_pop + gated_noop + gated_push]``

The three control signals are materialised as ``|Gamma|``-wide constant
blocks so the gating in layer 4 is a plain componentwise affine map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from gmpy2 import mpq

from . import stack_encoding as se
from .errors import ConfigError, ConstructionError, InputError, UnsupportedOpError
from .pda import Dpda, PdaConfig, run as pda_run, step as pda_step, totalize

ZERO, ONE = se.ZERO, se.ONE
_HALF, _QUARTER = mpq(1, 2), mpq(1, 4)


@dataclass(frozen=True)
class AffineLayer:
    """``sigma(x W + b)`` with ``W`` stored input-major (``W[i][j]``)."""

    weight: tuple[tuple, ...]
    bias: tuple
    activation: str = "sat"
    name: str = ""
    _rows: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        w = tuple(tuple(mpq(v) for v in row) for row in self.weight)
        b = tuple(mpq(v) for v in self.bias)
        if any(len(row) != len(b) for row in w):
            raise ConstructionError(f"layer {self.name!r}: weight rows must have length {len(b)}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        rows = tuple(tuple((j, v) for j, v in enumerate(row) if v != 0) for row in w)
        object.__setattr__(self, "_rows", rows)

    @property
    def in_dim(self) -> int:
        return len(self.weight)

    @property
    def out_dim(self) -> int:
        return len(self.bias)

    def affine(self, x: Sequence) -> list:
        if len(x) != self.in_dim:
            raise InputError(f"layer {self.name!r} expects {self.in_dim} inputs, got {len(x)}")
        out = list(self.bias)
        rows = self._rows
        for i, xi in enumerate(x):
            if xi:
                for j, w in rows[i]:
                    out[j] += xi * w
        return out

    def __call__(self, x: Sequence) -> list:
        return [ZERO if v < 0 else ONE if v > 1 else v for v in self.affine(x)]


class _LayerBuilder:
    def __init__(self, in_dim: int, out_dim: int, name: str):
        self.w = [[ZERO] * out_dim for _ in range(in_dim)]
        self.b = [ZERO] * out_dim
        self.name = name

    def place(self, row0: int, col0: int, block: Sequence[Sequence]) -> None:
        for i, row in enumerate(block):
            for j, v in enumerate(row):
                if v:
                    self.w[row0 + i][col0 + j] += mpq(v)

    def diag(self, row0: int, col0: int, size: int, value) -> None:
        for k in range(size):
            self.w[row0 + k][col0 + k] += mpq(value)

    def bias(self, col0: int, values: Sequence) -> None:
        for j, v in enumerate(values):
            self.b[col0 + j] += mpq(v)

    def build(self) -> AffineLayer:
        return AffineLayer(tuple(map(tuple, self.w)), tuple(self.b), name=self.name)


def pair_index(i_phi: int, i_psi: int, size_phi: int) -> int:
    """0-based slot of the pair (phi, psi) in the pair one-hot."""
    return i_psi * size_phi + i_phi


def pair_map(size_phi: int, size_psi: int) -> AffineLayer:
    """Map ``[phi | psi]`` (two one-hots) to the one-hot of the pair."""
    if size_phi < 1 or size_psi < 1:
        raise ConstructionError("set sizes must be >= 1")
    b = _LayerBuilder(size_phi + size_psi, size_phi * size_psi, "pair")
    b.place(0, 0, _pair_weights(size_phi, size_psi))
    b.bias(0, [-1] * (size_phi * size_psi))
    return b.build()


def _pair_weights(size_phi: int, size_psi: int) -> list[list[int]]:
    out = size_phi * size_psi
    w = [[0] * out for _ in range(size_phi + size_psi)]
    for i in range(size_phi):
        for k in range(size_psi):
            w[i][pair_index(i, k, size_phi)] = 1
    for k in range(size_psi):
        for i in range(size_phi):
            w[size_phi + k][pair_index(i, k, size_phi)] = 1
    return w


def transition_map(table: Mapping[int, Sequence], n_rows: int, out_dim: int,
                   default: Sequence | None = None) -> AffineLayer:
    """Linear map sending pair-index row ``r`` to ``table[r]`` (zero bias).

    Rows missing from ``table`` take ``default``; without a default every
    row must be present.
    """
    b = _LayerBuilder(n_rows, out_dim, "transition")
    for r in range(n_rows):
        target = table.get(r, default)
        if target is None:
            raise ConstructionError(f"transition table has no entry for row {r}")
        if len(target) != out_dim:
            raise ConstructionError(f"row {r} has dimension {len(target)}, expected {out_dim}")
        b.place(r, 0, [target])
    for r in table:
        if not 0 <= r < n_rows:
            raise ConstructionError(f"row index {r} outside [0, {n_rows})")
    return b.build()


@dataclass(frozen=True)
class ConstructedRnn:
    layers: tuple[AffineLayer, ...]
    states: tuple[str, ...]
    alphabet: tuple[str, ...]
    stack_alphabet: tuple[str, ...]
    finals: frozenset[int]
    h0: tuple

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_inputs(self) -> int:
        return len(self.alphabet)

    @property
    def n_stack(self) -> int:
        return len(self.stack_alphabet)

    @property
    def hidden_dim(self) -> int:
        return self.n_states + self.n_stack

    @property
    def dims(self) -> list[tuple[int, int]]:
        return [(layer.in_dim, layer.out_dim) for layer in self.layers]

    def omega0(self) -> tuple:
        return tuple(self.h0[self.n_states:])


def compile_dpda(dpda: Dpda) -> ConstructedRnn:
    """Build the five per-step layers simulating ``dpda``.

    Undefined (input, state, top) triples are routed to the dead state with a
    no-op; a ``"__dead__"`` state is added when the automaton names none.
    """
    dpda = totalize(dpda)
    states = list(dpda.states)
    sigma, gamma = list(dpda.alphabet), list(dpda.stack_alphabet)
    nQ, nS, nG = len(states), len(sigma), len(gamma)
    q_idx = {q: i for i, q in enumerate(states)}
    g_idx = {g: i for i, g in enumerate(gamma)}

    nPair = nQ * nS
    nTriple = nPair * nG
    q_table, push_table, ctrl_table = {}, {}, {}
    for qi, q in enumerate(states):
        for xi, x in enumerate(sigma):
            for gi, g in enumerate(gamma):
                row = pair_index(pair_index(qi, xi, nQ), gi, nPair)
                nxt, op = dpda.transitions[(x, q, g)]
                kind, sym = op.kind, op.symbol
                if kind not in ("push", "pop", "noop"):
                    raise UnsupportedOpError(f"stack op {kind!r} is not supported")
                q_table[row] = _onehot_list(q_idx[nxt], nQ)
                push_table[row] = _onehot_list(g_idx[sym], nG) if kind == "push" else [0] * nG
                block = [1 if kind == k else 0 for k in ("push", "pop", "noop")]
                ctrl_table[row] = [v for v in block for _ in range(nG)]

    # layer 1: [q | omega | x] -> [pair(q, x) | tau_top | omega]
    L1 = _LayerBuilder(nQ + nG + nS, nPair + 2 * nG, "L1")
    pw = _pair_weights(nQ, nS)
    L1.place(0, 0, pw[:nQ])
    L1.place(nQ + nG, 0, pw[nQ:])
    L1.bias(0, [-1] * nPair)
    L1.diag(nQ, nPair, nG, 4)
    L1.bias(nPair, [-2] * nG)
    L1.diag(nQ, nPair + nG, nG, 1)

    # layer 2: -> [triple | tau_top | omega]
    L2 = _LayerBuilder(nPair + 2 * nG, nTriple + 2 * nG, "L2")
    L2.place(0, 0, _pair_weights(nPair, nG))
    L2.bias(0, [-1] * nTriple)
    L2.diag(nPair, nTriple, 2 * nG, 1)

    # layer 3: -> [q' | omega | omega_pop | omega_noop | tau_push | c_push | c_pop | c_noop]
    TOP, OM = nTriple, nTriple + nG
    L3 = _LayerBuilder(nTriple + 2 * nG, nQ + 7 * nG, "L3")
    o_om, o_pop, o_noop, o_tau, o_ctrl = nQ, nQ + nG, nQ + 2 * nG, nQ + 3 * nG, nQ + 4 * nG
    L3.place(0, 0, transition_map(q_table, nTriple, nQ).weight)
    L3.diag(OM, o_om, nG, 1)
    L3.diag(OM, o_pop, nG, 4)
    L3.diag(TOP, o_pop, nG, -2)
    L3.bias(o_pop, [-1] * nG)
    L3.diag(OM, o_noop, nG, 1)
    L3.place(0, o_tau, transition_map(push_table, nTriple, nG).weight)
    L3.place(0, o_ctrl, transition_map(ctrl_table, nTriple, 3 * nG).weight)

    # layer 4: -> [q' | gated_pop | gated_noop | gated_push]
    c_push, c_pop, c_noop = o_ctrl, o_ctrl + nG, o_ctrl + 2 * nG
    L4 = _LayerBuilder(nQ + 7 * nG, nQ + 3 * nG, "L4")
    L4.diag(0, 0, nQ, 1)
    L4.diag(o_pop, nQ, nG, 1)
    L4.diag(c_pop, nQ, nG, 1)
    L4.bias(nQ, [-1] * nG)
    L4.diag(o_noop, nQ + nG, nG, 1)
    L4.diag(c_noop, nQ + nG, nG, 1)
    L4.bias(nQ + nG, [-1] * nG)
    L4.diag(o_om, nQ + 2 * nG, nG, _QUARTER)
    L4.diag(o_tau, nQ + 2 * nG, nG, _HALF)
    L4.diag(c_push, nQ + 2 * nG, nG, 1)
    L4.bias(nQ + 2 * nG, [_QUARTER - 1] * nG)

    # layer 5: -> [q' | omega']
    L5 = _LayerBuilder(nQ + 3 * nG, nQ + nG, "L5")
    L5.diag(0, 0, nQ, 1)
    for k in range(3):
        L5.diag(nQ + k * nG, nQ, nG, 1)

    h0 = tuple(_onehot_list(q_idx[dpda.initial_state], nQ, rational=True)) + \
        se.push(se.empty(nG), se.one_hot(g_idx[dpda.initial_stack_symbol], nG))
    return ConstructedRnn(
        layers=tuple(b.build() for b in (L1, L2, L3, L4, L5)),
        states=tuple(states),
        alphabet=tuple(sigma),
        stack_alphabet=tuple(gamma),
        finals=frozenset(q_idx[f] for f in dpda.finals),
        h0=h0,
    )


def _onehot_list(i: int, k: int, rational: bool = False) -> list:
    if rational:
        return [ONE if j == i else ZERO for j in range(k)]
    return [1 if j == i else 0 for j in range(k)]


# --------------------------------------------------------------------------
# running


def _input_vector(rnn: ConstructedRnn, x) -> list:
    if isinstance(x, int):
        if not 0 <= x < rnn.n_inputs:
            raise InputError(f"input index {x} out of range [0, {rnn.n_inputs})")
        return _onehot_list(x, rnn.n_inputs, rational=True)
    if isinstance(x, str):
        if x not in rnn.alphabet:
            raise InputError(f"symbol {x!r} not in the alphabet")
        return _onehot_list(rnn.alphabet.index(x), rnn.n_inputs, rational=True)
    x = [mpq(v) for v in x]
    if len(x) != rnn.n_inputs:
        raise InputError(f"input vector has length {len(x)}, expected {rnn.n_inputs}")
    return x


def _round_vec(v: list, bits: int) -> list:
    scale = 1 << bits
    out = []
    for a in v:
        if a.denominator == 1:
            out.append(a)
        else:
            out.append(mpq(se.round_half_even(a, bits), scale))
    return out


def _sat(v: list) -> list:
    return [ZERO if a < 0 else ONE if a > 1 else a for a in v]


def rnn_step(rnn: ConstructedRnn, h: Sequence, x, bits: int | None = None,
             activations: list | None = None) -> tuple:
    """One recurrent step; ``bits`` rounds every affine output to that many fractional bits."""
    if len(h) != rnn.hidden_dim:
        raise InputError(f"hidden vector has length {len(h)}, expected {rnn.hidden_dim}")
    v = list(h) + _input_vector(rnn, x)
    for layer in rnn.layers:
        z = layer.affine(v)
        if bits is not None:
            z = _round_vec(z, bits)
        v = _sat(z)
        if activations is not None:
            activations.append(tuple(v))
    return tuple(v)


@dataclass
class RnnRunResult:
    accepted: bool
    hidden_trace: list[tuple]


def _accepts(rnn: ConstructedRnn, h: Sequence) -> bool:
    q = h[: rnn.n_states]
    best = max(range(rnn.n_states), key=lambda i: q[i])
    return best in rnn.finals and tuple(h[rnn.n_states:]) == rnn.omega0()


def _as_indices(rnn: ConstructedRnn, seq: Iterable) -> list:
    out = []
    for s in seq:
        if isinstance(s, str):
            if s not in rnn.alphabet:
                raise InputError(f"symbol {s!r} not in the alphabet")
            out.append(rnn.alphabet.index(s))
        else:
            if not 0 <= s < rnn.n_inputs:
                raise InputError(f"input index {s} out of range [0, {rnn.n_inputs})")
            out.append(int(s))
    return out


def rnn_run(rnn: ConstructedRnn, seq: Iterable, bits: int | None = None) -> RnnRunResult:
    """Run from ``h0``; accept iff the final state is final and the stack is back to [Z0]."""
    h = rnn.h0
    trace = [h]
    for x in _as_indices(rnn, seq):
        h = rnn_step(rnn, h, x, bits)
        trace.append(h)
    return RnnRunResult(_accepts(rnn, h), trace)


@dataclass
class FixedRunResult:
    accepted: bool
    first_divergence_step: int | None
    exact_accepted: bool

    @property
    def agrees(self) -> bool:
        return self.first_divergence_step is None


def rnn_run_fixed(rnn: ConstructedRnn, seq: Iterable, bits: int,
                  exact: RnnRunResult | None = None) -> FixedRunResult:
    """Run with ``bits``-bit fixed point and report the first step whose
    stack block differs from the exact rational run (step 1 = after the first symbol)."""
    if bits < 2:
        raise ConfigError(f"need at least 2 fractional bits, got {bits}")
    seq = _as_indices(rnn, seq)
    exact = exact or rnn_run(rnn, seq)
    nQ = rnn.n_states
    h = tuple(_round_vec(list(rnn.h0), bits))
    first = None if h[nQ:] == exact.hidden_trace[0][nQ:] else 0
    for t, x in enumerate(seq, 1):
        h = rnn_step(rnn, h, x, bits)
        if first is None and h[nQ:] != exact.hidden_trace[t][nQ:]:
            first = t
    return FixedRunResult(_accepts(rnn, h), first, exact.accepted)


def decode_hidden(rnn: ConstructedRnn, h: Sequence) -> tuple[str, tuple[str, ...]]:
    """(state name, stack bottom-first) represented by a hidden vector."""
    q = h[: rnn.n_states]
    if sum(1 for v in q if v == 1) != 1 or any(v != 0 and v != 1 for v in q):
        raise InputError(f"state block is not one-hot: {list(q)}")
    stack = se.decode(tuple(h[rnn.n_states:]))
    return rnn.states[list(q).index(ONE)], tuple(rnn.stack_alphabet[i] for i in stack)


def max_stack_height(dpda: Dpda, seq: Iterable) -> int:
    """Peak stack height, bottom marker included, of the DPDA run on ``seq``."""
    return max(len(c.stack) for c in pda_run(totalize(dpda), seq).trace)


# --------------------------------------------------------------------------
# verification against the automaton


@dataclass
class VerifyReport:
    words: int = 0
    steps: int = 0
    verdict_agree: int = 0
    trace_agree: int = 0
    accepted: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verdict_agree == self.words and self.trace_agree == self.words

    def merge(self, other: "VerifyReport") -> "VerifyReport":
        return VerifyReport(self.words + other.words, self.steps + other.steps,
                            self.verdict_agree + other.verdict_agree,
                            self.trace_agree + other.trace_agree,
                            self.accepted + other.accepted, self.mismatches + other.mismatches)


class _TraceChecker:
    """Compare hidden vectors with DPDA configurations.

    With ``decode=True`` the stack block is decoded symbol by symbol;
    otherwise it is compared with the encoding of the DPDA stack, which
    is equivalent because the encoding is injective.
    """

    def __init__(self, rnn: ConstructedRnn, dpda: Dpda, decode: bool):
        self.rnn, self.dpda, self.decode = rnn, dpda, decode
        self.q_vec = {q: tuple(_onehot_list(i, rnn.n_states, rational=True)) for i, q in enumerate(rnn.states)}
        self.g_idx = {g: i for i, g in enumerate(rnn.stack_alphabet)}
        self._enc: dict[tuple, tuple] = {(): se.empty(rnn.n_stack)}

    def encoding(self, stack: tuple) -> tuple:
        enc = self._enc.get(stack)
        if enc is None:
            enc = se.push(self.encoding(stack[:-1]), se.one_hot(self.g_idx[stack[-1]], self.rnn.n_stack))
            if len(self._enc) < 200_000:
                self._enc[stack] = enc
        return enc

    def matches(self, h: tuple, cfg: PdaConfig) -> bool:
        nQ = self.rnn.n_states
        if self.decode:
            try:
                return decode_hidden(self.rnn, h) == (cfg.state, cfg.stack)
            except InputError:
                return False
        return h[:nQ] == self.q_vec[cfg.state] and h[nQ:] == self.encoding(cfg.stack)


def verify_words(rnn: ConstructedRnn, dpda: Dpda, words: Iterable, decode: bool = False,
                 max_mismatches: int = 20) -> VerifyReport:
    """Check verdict and full state/stack trace equality on every word.

    The automaton is totalized first, so undefined moves count as rejection.
    """
    dpda = totalize(dpda)
    checker = _TraceChecker(rnn, dpda, decode)
    rep = VerifyReport()
    for w in words:
        res = rnn_run(rnn, w)
        ref = pda_run(dpda, w)
        rep.words += 1
        rep.steps += len(w)
        rep.accepted += ref.accepted
        rep.verdict_agree += res.accepted == ref.accepted
        same = all(checker.matches(h, c) for h, c in zip(res.hidden_trace, ref.trace))
        rep.trace_agree += same
        if (not same or res.accepted != ref.accepted) and len(rep.mismatches) < max_mismatches:
            rep.mismatches.append(list(w))
    return rep


def verify_exhaustive(rnn: ConstructedRnn, dpda: Dpda, max_len: int, valid_only: bool = True,
                      decode: bool = True) -> VerifyReport:
    """Depth-first walk of the prefix trie, sharing work between common prefixes.

    With ``valid_only`` only prefixes of Dyck words (those the DPDA keeps
    live and can still close within ``max_len``) are explored, and only
    accepted words are counted; otherwise every string of length
    ``<= max_len`` over the alphabet is a word.

    When a configuration and its hidden vector are both fixed points under
    every input symbol (an absorbing sink), all extensions behave identically
    by induction, so they are counted without being walked.
    """
    dpda = totalize(dpda)
    checker = _TraceChecker(rnn, dpda, decode)
    rep = VerifyReport()
    nS = rnn.n_inputs
    Z0 = dpda.initial_stack_symbol

    def visit(h, cfg, trace_ok, length):
        pda_acc = cfg.state in dpda.finals and cfg.stack == (Z0,)
        if not valid_only or pda_acc:
            rep.words += 1
            rep.steps += length
            rep.accepted += pda_acc
            rep.verdict_agree += _accepts(rnn, h) == pda_acc
            rep.trace_agree += trace_ok
        if length == max_len:
            return
        if not valid_only and _absorbing(h, cfg):
            rest = sum(nS ** j for j in range(1, max_len - length + 1))
            rep.words += rest
            rep.steps += sum(nS ** j * (length + j) for j in range(1, max_len - length + 1))
            rep.accepted += rest * pda_acc
            rep.verdict_agree += rest * (_accepts(rnn, h) == pda_acc)
            rep.trace_agree += rest * trace_ok
            return
        for x in range(nS):
            nxt = pda_step(dpda, cfg, dpda.alphabet[x])
            if valid_only and (nxt.state == dpda.dead_state or len(nxt.stack) - 1 > max_len - length - 1):
                continue
            h2 = rnn_step(rnn, h, x)
            visit(h2, nxt, trace_ok and checker.matches(h2, nxt), length + 1)

    def _absorbing(h, cfg):
        return all(pda_step(dpda, cfg, a) == cfg and rnn_step(rnn, h, x) == h
                   for x, a in enumerate(dpda.alphabet))

    cfg0 = dpda.initial_config()
    visit(rnn.h0, cfg0, checker.matches(rnn.h0, cfg0), 0)
    return rep


# --------------------------------------------------------------------------
# precision sweep


@dataclass
class PrecisionRow:
    bits: int
    max_height: int
    words: int
    agree: int

    @property
    def rate(self) -> float:
        return self.agree / self.words if self.words else float("nan")


def precision_sweep(rnn: ConstructedRnn, dpda: Dpda, words: Sequence, bits_range: Iterable[int]) -> list[PrecisionRow]:
    """Agreement of fixed-point runs with exact runs, grouped by bits and peak stack height."""
    words = [list(w) for w in words]
    exact = [rnn_run(rnn, w) for w in words]
    heights = [max_stack_height(dpda, w) for w in words]
    rows = []
    for b in bits_range:
        groups: dict[int, list[int]] = {}
        for w, ex, hgt in zip(words, exact, heights):
            g = groups.setdefault(hgt, [0, 0])
            g[0] += 1
            g[1] += rnn_run_fixed(rnn, w, b, exact=ex).agrees
        rows.extend(PrecisionRow(b, hgt, n, a) for hgt, (n, a) in sorted(groups.items()))
    return rows


# --------------------------------------------------------------------------
# ReLU form


@dataclass(frozen=True)
class ReluRnn:
    """Same network with ``sigma(z) = relu(z) - relu(z - 1)`` expanded.

    Every layer doubles its width to ``[relu(z) | relu(z - 1)]`` and the
    following layer absorbs the subtraction; the hidden state is carried in
    this doubled form.
    """

    layers: tuple[AffineLayer, ...]
    base: ConstructedRnn

    def h0(self) -> tuple:
        return tuple(self.base.h0) + (ZERO,) * self.base.hidden_dim

    def collapse(self, hd: Sequence) -> tuple:
        k = len(hd) // 2
        return tuple(hd[i] - hd[k + i] for i in range(k))

    def step(self, hd: Sequence, x) -> tuple:
        v = list(hd) + _input_vector(self.base, x)
        for layer in self.layers:
            v = [a if a > 0 else ZERO for a in layer.affine(v)]
        return tuple(v)


def relu_expand(rnn: ConstructedRnn) -> ReluRnn:
    layers = []
    hdim = rnn.hidden_dim
    for k, layer in enumerate(rnn.layers):
        if k == 0:
            n_doubled = hdim
        else:
            n_doubled = layer.in_dim
        rows = []
        for i in range(layer.in_dim):
            row = list(layer.weight[i]) * 2
            rows.append(row)
        # doubled inputs: the positive half reuses W, the shifted half gets -W
        neg = [[-v for v in rows[i]] for i in range(n_doubled)]
        full = rows[:n_doubled] + neg + rows[n_doubled:]
        bias = list(layer.bias) + [v - 1 for v in layer.bias]
        layers.append(AffineLayer(tuple(map(tuple, full)), tuple(bias), activation="relu", name=layer.name))
    return ReluRnn(tuple(layers), rnn)


# --------------------------------------------------------------------------
# weight files

_MAGIC = "#dycklab-rnn v1"


def _fmt(v) -> str:
    v = mpq(v)
    return f"{v.numerator}/{v.denominator}"


def dumps_rnn(rnn: ConstructedRnn) -> str:
    lines = [
        _MAGIC,
        "states: " + " ".join(rnn.states),
        "alphabet: " + " ".join(rnn.alphabet),
        "stack: " + " ".join(rnn.stack_alphabet),
        "finals: " + " ".join(rnn.states[i] for i in sorted(rnn.finals)),
        f"dims: Q={rnn.n_states} Sigma={rnn.n_inputs} Gamma={rnn.n_stack}",
        f"layout: h = [q 0:{rnn.n_states} | omega {rnn.n_states}:{rnn.hidden_dim}]; step input = [h | x]",
        "acceptance: argmax(q) in finals and omega == omega(h0)",
        "activation: saturated-linear",
        "h0: " + " ".join(_fmt(v) for v in rnn.h0),
    ]
    for k, layer in enumerate(rnn.layers, 1):
        lines.append(f"layer {k} in={layer.in_dim} out={layer.out_dim}")
        lines.append("W")
        lines += [" ".join(_fmt(v) for v in row) for row in layer.weight]
        lines.append("b")
        lines.append(" ".join(_fmt(v) for v in layer.bias))
        lines.append("end")
    return "\n".join(lines) + "\n"


def loads_rnn(text: str) -> ConstructedRnn:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise InputError("not a dycklab rnn weight file")
    meta = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("layer "):
        key, _, val = lines[i].partition(":")
        meta[key.strip()] = val.strip()
        i += 1
    layers = []
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if head[0] != "layer":
            raise InputError(f"line {i + 1}: expected 'layer', got {lines[i]!r}")
        in_dim = int(head[2].split("=")[1])
        out_dim = int(head[3].split("=")[1])
        if lines[i + 1].strip() != "W":
            raise InputError(f"line {i + 2}: expected 'W'")
        w = [tuple(se.rational(t) for t in lines[i + 2 + r].split()) for r in range(in_dim)]
        j = i + 2 + in_dim
        if lines[j].strip() != "b" or lines[j + 2].strip() != "end":
            raise InputError(f"line {j + 1}: malformed layer block")
        b = tuple(se.rational(t) for t in lines[j + 1].split())
        if len(b) != out_dim:
            raise InputError(f"layer {head[1]}: bias has {len(b)} entries, expected {out_dim}")
        layers.append(AffineLayer(tuple(w), b, name=f"L{head[1]}"))
        i = j + 3
    states = tuple(meta["states"].split())
    finals = frozenset(states.index(f) for f in meta.get("finals", "").split())
    rnn = ConstructedRnn(tuple(layers), states, tuple(meta["alphabet"].split()),
                         tuple(meta["stack"].split()), finals,
                         tuple(se.rational(t) for t in meta["h0"].split()))
    if len(rnn.layers) != 5:
        raise InputError(f"expected 5 layers, found {len(rnn.layers)}")
    return rnn


def save_rnn(rnn: ConstructedRnn, path: str | Path) -> None:
    Path(path).write_text(dumps_rnn(rnn), encoding="utf-8", newline="\n")


def load_rnn(path: str | Path) -> ConstructedRnn:
    return loads_rnn(Path(path).read_text(encoding="utf-8"))
