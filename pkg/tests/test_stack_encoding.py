from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from dycklab.errors import ConfigError, InputError, StackUnderflowError
from dycklab.stack_encoding import (
    FixedPoint, decode, digit_count, empty, encode, fixed_pop, fixed_push, fixed_top, is_empty, one_hot,
    pop, push, quantize, rational, required_bits, round_half_even, sat_sigma, top,
)

K = 3
stacks = st.lists(st.integers(0, K - 1), max_size=25)


def oracle_encode(stack, k):
    """Closed form: level j from the top contributes digit 3 or 1 at 4^-(j+1)."""
    out = []
    for c in range(k):
        v = Fraction(0)
        for j, s in enumerate(reversed(stack)):
            v += Fraction(3 if s == c else 1, 4 ** (j + 1))
        out.append(v)
    return tuple(out)


def test_push_example():
    assert push(empty(2), one_hot(0, 2)) == (Fraction(3, 4), Fraction(1, 4))
    assert push((Fraction(3, 4), Fraction(1, 4)), one_hot(1, 2)) == (Fraction(7, 16), Fraction(13, 16))


def test_top_and_empty():
    assert top(empty(3)) == (0, 0, 0)
    assert is_empty(empty(3))
    assert top(encode([2, 0], 3)) == one_hot(0, 3)


@given(stacks)
def test_encode_matches_closed_form(stack):
    assert encode(stack, K) == oracle_encode(stack, K)


@given(stacks, st.integers(0, K - 1))
def test_pop_push_identity(stack, s):
    omega = encode(stack, K)
    tau = one_hot(s, K)
    assert pop(push(omega, tau), tau) == omega
    assert top(push(omega, tau)) == tau


@given(stacks)
def test_decode_inverts_encode(stack):
    assert decode(encode(stack, K)) == stack


@given(stacks)
def test_components_stay_in_unit_interval(stack):
    for w in encode(stack, K):
        assert 0 <= w < 1
        assert w == 0 or w >= Fraction(1, 4)


def test_pop_errors():
    with pytest.raises(StackUnderflowError):
        pop(empty(2), one_hot(0, 2))
    with pytest.raises(InputError):
        pop(encode([0], 2), one_hot(1, 2))
    with pytest.raises(InputError):
        push(empty(2), (1, 1))


def test_sat_sigma():
    assert sat_sigma(Fraction(-1, 3)) == 0
    assert sat_sigma(Fraction(5, 3)) == 1
    assert sat_sigma(Fraction(1, 3)) == Fraction(1, 3)
    assert sat_sigma((Fraction(2), Fraction(1, 2))) == (1, Fraction(1, 2))


def test_rational_coercion():
    assert rational("3/8") == Fraction(3, 8)
    assert rational(Fraction(1, 3)) == Fraction(1, 3)
    with pytest.raises(InputError):
        rational(0.5)


@given(stacks.filter(bool))
def test_digit_count_is_depth(stack):
    assert max(digit_count(w) for w in encode(stack, K)) == len(stack)
    assert required_bits(len(stack)) == 2 * len(stack)


def test_round_half_even():
    assert round_half_even(Fraction(1, 8), 2) == 0  # 0.5 ulp, even stays
    assert round_half_even(Fraction(3, 8), 2) == 2  # 1.5 -> 2
    assert round_half_even(Fraction(5, 8), 2) == 2  # 2.5 -> 2
    assert round_half_even(Fraction(1, 3), 4) == 5


def test_fixed_point_saturates_and_rejects_tiny_widths():
    assert FixedPoint.from_rational(Fraction(3, 2), 4).value == 16
    assert FixedPoint.from_rational(Fraction(-1, 2), 4).value == 0
    with pytest.raises(ConfigError):
        FixedPoint.from_rational(Fraction(1, 2), 1)


@given(stacks.filter(bool), st.integers(0, K - 1))
def test_fixed_point_exact_with_enough_bits(stack, s):
    bits = required_bits(len(stack) + 1)
    fx = quantize(encode(stack, K), bits)
    pushed = fixed_push(fx, one_hot(s, K), bits)
    assert fixed_top(pushed) == one_hot(s, K)
    assert fixed_pop(pushed, one_hot(s, K), bits) == fx


def test_fixed_point_loses_deep_stacks():
    stack = [0, 1, 2, 0, 1]
    bits = required_bits(len(stack)) - 1
    assert tuple(f.to_rational() for f in quantize(encode(stack, K), bits)) != encode(stack, K)
