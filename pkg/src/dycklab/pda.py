"""Deterministic pushdown automata restricted to push / pop / no-op stack moves.

The canonical Dyck-n recognizer built by :func:`build_dyck_dpda` is the
ground-truth oracle for the compiled RNNs in :mod:`dycklab.construction`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .dyck import Vocab
from .errors import ConfigError, InputError, StackUnderflowError, UndefinedTransitionError, UnsupportedOpError


@dataclass(frozen=True)
class StackOp:
    kind: str  # "push" | "pop" | "noop"
    symbol: str | None = None

    def __post_init__(self):
        if self.kind not in ("push", "pop", "noop"):
            raise ConfigError(f"unknown stack op {self.kind!r}")
        if (self.kind == "push") != (self.symbol is not None):
            raise ConfigError("push carries exactly one stack symbol; pop/noop carry none")

    def __str__(self):
        return f"push({self.symbol})" if self.kind == "push" else f"{self.kind}()"


def Push(symbol: str) -> StackOp:
    return StackOp("push", symbol)


POP = StackOp("pop")
NOOP = StackOp("noop")


@dataclass(frozen=True)
class PdaConfig:
    state: str
    stack: tuple[str, ...]

    @property
    def top(self) -> str | None:
        return self.stack[-1] if self.stack else None


@dataclass(frozen=True)
class Dpda:
    alphabet: tuple[str, ...]
    states: tuple[str, ...]
    stack_alphabet: tuple[str, ...]
    initial_state: str
    initial_stack_symbol: str
    transitions: Mapping[tuple[str, str, str], tuple[str, StackOp]]
    finals: frozenset[str]
    epsilon: str | None = None
    dead_state: str | None = None

    def __post_init__(self):
        for name in ("alphabet", "states", "stack_alphabet"):
            vals = tuple(getattr(self, name))
            if len(set(vals)) != len(vals):
                raise ConfigError(f"{name} contains duplicates")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "finals", frozenset(self.finals))
        object.__setattr__(self, "transitions", dict(self.transitions))
        sigma, q, gamma = set(self.alphabet), set(self.states), set(self.stack_alphabet)
        if self.initial_state not in q:
            raise ConfigError(f"initial state {self.initial_state!r} not in Q")
        if self.initial_stack_symbol not in gamma:
            raise ConfigError(f"initial stack symbol {self.initial_stack_symbol!r} not in Gamma")
        if not self.finals <= q:
            raise ConfigError(f"finals {sorted(self.finals - q)} not in Q")
        if self.epsilon is not None and self.epsilon not in sigma:
            raise ConfigError("the epsilon symbol must be a member of the alphabet")
        if self.dead_state is not None and self.dead_state not in q:
            raise ConfigError("dead state must be a member of Q")
        for (x, s, top), (s2, op) in self.transitions.items():
            if x not in sigma or s not in q or top not in gamma or s2 not in q:
                raise ConfigError(f"transition ({x}, {s}, {top}) -> {s2} references unknown symbols")
            if op.kind == "push" and op.symbol not in gamma:
                raise ConfigError(f"transition ({x}, {s}, {top}) pushes unknown symbol {op.symbol!r}")

    def initial_config(self) -> PdaConfig:
        return PdaConfig(self.initial_state, (self.initial_stack_symbol,))


def totalize(dpda: Dpda) -> Dpda:
    """Equivalent automaton whose transition table is total.

    Undefined (input, state, top) triples move to the dead state with a
    no-op; a ``"__dead__"`` state is added when the automaton names none.
    """
    missing = [(x, q, g) for q in dpda.states for x in dpda.alphabet for g in dpda.stack_alphabet
               if (x, q, g) not in dpda.transitions]
    if not missing:
        return dpda
    dead = dpda.dead_state or "__dead__"
    states = dpda.states if dead in dpda.states else dpda.states + (dead,)
    delta = dict(dpda.transitions)
    for key in missing:
        delta[key] = (dead, NOOP)
    for x in dpda.alphabet:
        for g in dpda.stack_alphabet:
            delta.setdefault((x, dead, g), (dead, NOOP))
    return replace(dpda, states=states, transitions=delta, dead_state=dead)


def build_dyck_dpda(n: int, vocab: Vocab | None = None) -> Dpda:
    """Two-state (live/dead) recognizer for Dyck-n over ``vocab``'s symbols."""
    if not isinstance(n, int) or n <= 0:
        raise ConfigError(f"n must be a positive integer, got {n!r}")
    vocab = vocab or Vocab(n)
    if vocab.n != n:
        raise ConfigError("vocab does not match n")
    gamma = ("Z0",) + tuple(f"A{i}" for i in range(1, n + 1))
    delta: dict[tuple[str, str, str], tuple[str, StackOp]] = {}
    for x_idx, x in enumerate(vocab.symbols):
        t = vocab.bracket_type(x_idx)
        for top in gamma:
            delta[(x, "dead", top)] = ("dead", NOOP)
            if vocab.is_open(x_idx):
                delta[(x, "live", top)] = ("live", Push(gamma[t + 1]))
            elif top == gamma[t + 1]:
                delta[(x, "live", top)] = ("live", POP)
            else:
                delta[(x, "live", top)] = ("dead", NOOP)
    return Dpda(
        alphabet=vocab.symbols,
        states=("live", "dead"),
        stack_alphabet=gamma,
        initial_state="live",
        initial_stack_symbol="Z0",
        transitions=delta,
        finals=frozenset({"live"}),
        dead_state="dead",
    )


def step(dpda: Dpda, cfg: PdaConfig, x: str) -> PdaConfig:
    if not cfg.stack:
        raise StackUnderflowError("cannot step with an empty stack")
    key = (x, cfg.state, cfg.stack[-1])
    try:
        nxt, op = dpda.transitions[key]
    except KeyError:
        raise UndefinedTransitionError(f"no transition for input {x!r} in state {cfg.state!r} "
                                       f"with top {cfg.stack[-1]!r}") from None
    if op.kind == "push":
        return PdaConfig(nxt, cfg.stack + (op.symbol,))
    if op.kind == "pop":
        return PdaConfig(nxt, cfg.stack[:-1])
    return PdaConfig(nxt, cfg.stack)


@dataclass
class RunResult:
    accepted: bool
    trace: list[PdaConfig] = field(default_factory=list)


def _symbols(dpda: Dpda, seq: Sequence) -> list[str]:
    out = []
    for s in seq:
        if isinstance(s, str):
            sym = s
        else:
            if not 0 <= s < len(dpda.alphabet):
                raise InputError(f"symbol index {s} out of range")
            sym = dpda.alphabet[s]
        if sym not in dpda.alphabet:
            raise InputError(f"symbol {sym!r} not in the alphabet")
        out.append(sym)
    return out


def run(dpda: Dpda, seq: Sequence) -> RunResult:
    """Simulate ``dpda`` on ``seq`` (symbols or alphabet indices).

    Accepts when the final state is in F and only the bottom marker remains.
    """
    cfg = dpda.initial_config()
    trace = [cfg]
    for x in _symbols(dpda, seq):
        cfg = step(dpda, cfg, x)
        trace.append(cfg)
    accepted = cfg.state in dpda.finals and cfg.stack == (dpda.initial_stack_symbol,)
    return RunResult(accepted, trace)


# --------------------------------------------------------------------------
# spec files

_TRANSITION = re.compile(r"^(\S+)\s+(\S+)\s+(\S+)\s*->\s*(\S+)\s+(\w+)\(\s*([^)]*?)\s*\)$")
_SECTIONS = ("alphabet", "states", "stack", "transitions", "finals", "epsilon", "dead")


def dumps_dpda(dpda: Dpda) -> str:
    """Serialize to the sectioned text format read by :func:`loads_dpda`.

    The first entries of ``[states]`` and ``[stack]`` are q0 and Z0.
    """
    states = [dpda.initial_state] + [s for s in dpda.states if s != dpda.initial_state]
    stack = [dpda.initial_stack_symbol] + [g for g in dpda.stack_alphabet if g != dpda.initial_stack_symbol]
    lines = ["[alphabet]", *dpda.alphabet, "", "[states]", *states, "", "[stack]", *stack, "",
             "[transitions]"]
    for (x, q, top), (q2, op) in dpda.transitions.items():
        arg = op.symbol or ""
        lines.append(f"{x} {q} {top} -> {q2} {op.kind}({arg})")
    lines += ["", "[finals]", *sorted(dpda.finals)]
    if dpda.epsilon is not None:
        lines += ["", "[epsilon]", dpda.epsilon]
    if dpda.dead_state is not None:
        lines += ["", "[dead]", dpda.dead_state]
    return "\n".join(lines) + "\n"


def loads_dpda(text: str) -> Dpda:
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise InputError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise InputError(f"line {lineno}: content before the first section")
        sections[current].append(line)
    for required in ("alphabet", "states", "stack", "transitions", "finals"):
        if not sections.get(required) and required != "finals":
            raise InputError(f"missing or empty section [{required}]")
    delta: dict[tuple[str, str, str], tuple[str, StackOp]] = {}
    for line in sections["transitions"]:
        m = _TRANSITION.match(line)
        if not m:
            raise InputError(f"malformed transition line: {line!r}")
        x, q, top, q2, kind, arg = m.groups()
        key = (x, q, top)
        if key in delta:
            raise ConfigError(f"nondeterministic: duplicate transition for {key}")
        if kind not in ("push", "pop", "noop"):
            raise UnsupportedOpError(f"stack op {kind!r} is not one of push/pop/noop: {line!r}")
        if kind == "push" and len(re.split(r"[\s,]+", arg)) > 1:
            raise UnsupportedOpError(f"multi-symbol push is not supported: {line!r}")
        if kind == "push" and not arg:
            raise InputError(f"push needs a symbol: {line!r}")
        if kind != "push" and arg:
            if kind == "noop" and arg == top:
                arg = ""
            else:
                raise InputError(f"{kind} takes no argument: {line!r}")
        delta[key] = (q2, StackOp(kind, arg or None))
    eps = sections.get("epsilon", [None])
    dead = sections.get("dead", [None])
    return Dpda(
        alphabet=tuple(sections["alphabet"]),
        states=tuple(sections["states"]),
        stack_alphabet=tuple(sections["stack"]),
        initial_state=sections["states"][0],
        initial_stack_symbol=sections["stack"][0],
        transitions=delta,
        finals=frozenset(sections.get("finals", [])),
        epsilon=eps[0] if eps else None,
        dead_state=dead[0] if dead else None,
    )


def load_dpda(path: str | Path) -> Dpda:
    return loads_dpda(Path(path).read_text(encoding="utf-8"))


def save_dpda(dpda: Dpda, path: str | Path) -> None:
    Path(path).write_text(dumps_dpda(dpda), encoding="utf-8", newline="\n")
