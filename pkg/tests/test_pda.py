from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from dycklab.dyck import Vocab, is_valid, max_depth
from dycklab.errors import ConfigError, InputError, StackUnderflowError, UndefinedTransitionError
from dycklab.pda import (
    NOOP, POP, Dpda, PdaConfig, Push, StackOp, build_dyck_dpda, dumps_dpda, load_dpda, loads_dpda, run,
    save_dpda, step,
)

V2 = Vocab(2)
D2 = build_dyck_dpda(2)


def test_dyck_dpda_shape():
    assert D2.states == ("live", "dead")
    assert D2.stack_alphabet == ("Z0", "A1", "A2")
    assert len(D2.transitions) == 4 * 2 * 3
    assert D2.finals == {"live"}


def test_run_examples():
    assert run(D2, V2.parse("([()])[]")).accepted
    assert run(D2, []).accepted
    assert not run(D2, V2.parse("([)]")).accepted
    assert not run(D2, V2.parse("((")).accepted
    assert not run(D2, V2.parse(")(")).accepted


def test_trace_tracks_stack():
    res = run(D2, V2.parse("(["))
    assert [c.stack for c in res.trace] == [("Z0",), ("Z0", "A1"), ("Z0", "A1", "A2")]


@given(st.lists(st.integers(0, 3), max_size=16))
def test_dpda_agrees_with_validity(seq):
    res = run(D2, seq)
    assert res.accepted == is_valid(seq, V2)
    assert len(res.trace) == len(seq) + 1
    if res.accepted:
        assert max(len(c.stack) for c in res.trace) - 1 == max_depth(seq, V2)


@given(st.integers(2, 5), st.data())
def test_dpda_general_n(n, data):
    vocab = Vocab(n)
    seq = data.draw(st.lists(st.integers(0, 2 * n - 1), max_size=12))
    assert run(build_dyck_dpda(n), seq).accepted == is_valid(seq, vocab)


def test_stack_op_validation():
    with pytest.raises(ConfigError):
        StackOp("swap")
    with pytest.raises(ConfigError):
        StackOp("push")
    with pytest.raises(ConfigError):
        StackOp("pop", "A")
    assert str(Push("A")) == "push(A)" and str(POP) == "pop()"


def _tiny(transitions):
    return Dpda(("a",), ("q",), ("Z", "A"), "q", "Z", transitions, {"q"})


def test_undefined_transition_and_underflow():
    d = _tiny({("a", "q", "Z"): ("q", POP)})
    cfg = step(d, d.initial_config(), "a")
    assert cfg.stack == ()
    with pytest.raises(StackUnderflowError):
        step(d, cfg, "a")
    d2 = _tiny({("a", "q", "Z"): ("q", Push("A"))})
    with pytest.raises(UndefinedTransitionError):
        run(d2, ["a", "a"])


def test_dpda_validation():
    with pytest.raises(ConfigError):
        _tiny({("b", "q", "Z"): ("q", NOOP)})
    with pytest.raises(ConfigError):
        _tiny({("a", "q", "Z"): ("q", Push("B"))})
    with pytest.raises(ConfigError):
        Dpda(("a",), ("q",), ("Z",), "r", "Z", {}, set())


def test_acceptance_needs_bottom_marker_only():
    d = _tiny({("a", "q", "Z"): ("q", Push("A")), ("a", "q", "A"): ("q", NOOP)})
    assert run(d, []).accepted
    assert not run(d, ["a"]).accepted  # final state, but A left on the stack


def test_spec_file_roundtrip(tmp_path):
    text = dumps_dpda(D2)
    back = loads_dpda(text)
    assert back == D2
    path = tmp_path / "d.pda"
    save_dpda(D2, path)
    assert load_dpda(path) == D2


def test_spec_file_parsing():
    text = """
    # a one-counter
    [alphabet]
    a
    b
    [states]
    s
    [stack]
    Z
    A
    [transitions]
    a s Z -> s push(A)
    a s A -> s push(A)
    b s A -> s pop()
    [finals]
    s
    """
    d = loads_dpda(text)
    assert d.initial_state == "s" and d.initial_stack_symbol == "Z"
    assert run(d, list("aabb")).accepted
    assert not run(d, list("aab")).accepted


def test_spec_file_errors():
    base = "[alphabet]\na\n[states]\ns\n[stack]\nZ\n[transitions]\n"
    with pytest.raises(ConfigError, match="duplicate"):
        loads_dpda(base + "a s Z -> s noop()\na s Z -> s pop()\n[finals]\ns\n")
    with pytest.raises(InputError):
        loads_dpda(base + "a s Z => s noop()\n")
    with pytest.raises(InputError):
        loads_dpda("[bogus]\nx\n")
    with pytest.raises(InputError):
        loads_dpda("[states]\ns\n")


def test_config_top():
    assert PdaConfig("q", ("Z", "A")).top == "A"
    assert PdaConfig("q", ()).top is None
