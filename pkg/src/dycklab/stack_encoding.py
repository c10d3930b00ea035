"""Base-4 Cantor-set stack encoding over one-hot stack symbols.

A stack over an alphabet of size ``k`` is a vector of ``k`` rationals. Each
stack level contributes one base-4 fractional digit to every component:
3 in the component of the stored symbol and 1 elsewhere, so the top of the
stack is the most significant digit. The empty stack is the zero vector.

Rationals are ``gmpy2.mpq`` values; they compare and hash equal to
``fractions.Fraction``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from gmpy2 import mpq

from .errors import ConfigError, InputError, StackUnderflowError

Rational = type(mpq())
StackVec = tuple

ZERO = mpq(0)
ONE = mpq(1)
_QUARTER = mpq(1, 4)
_HALF = mpq(1, 2)


def rational(x) -> Rational:
    """Coerce an int, Fraction, mpq or ``"num/den"`` string to an exact rational."""
    if isinstance(x, str):
        num, _, den = x.partition("/")
        return mpq(int(num), int(den or 1))
    if isinstance(x, float):
        raise InputError("floats are not exact; pass an int, Fraction or 'num/den' string")
    return mpq(x)


def sat_sigma(x):
    """Saturated linear sigmoid: clamp to [0, 1]. Componentwise on sequences."""
    if isinstance(x, (tuple, list)):
        return tuple(sat_sigma(v) for v in x)
    if x < 0:
        return ZERO
    if x > 1:
        return ONE
    return x


def one_hot(i: int, k: int) -> StackVec:
    if not 0 <= i < k:
        raise InputError(f"index {i} out of range for size {k}")
    return tuple(ONE if j == i else ZERO for j in range(k))


def empty(k: int) -> StackVec:
    return (ZERO,) * k


def _check_one_hot(tau: Sequence, k: int) -> None:
    if len(tau) != k:
        raise InputError(f"symbol vector has length {len(tau)}, expected {k}")
    if sum(1 for t in tau if t == 1) != 1 or any(t != 0 and t != 1 for t in tau):
        raise InputError(f"not a one-hot vector: {list(tau)}")


def push(omega: StackVec, tau: Sequence) -> StackVec:
    _check_one_hot(tau, len(omega))
    return tuple(w * _QUARTER + t * _HALF + _QUARTER for w, t in zip(omega, tau))


def top(omega: StackVec) -> StackVec:
    """One-hot top symbol; the zero vector for the empty stack."""
    return tuple(sat_sigma(4 * w - 2) for w in omega)


def is_empty(omega: StackVec) -> bool:
    return all(sat_sigma(w) == 0 for w in omega)


def pop(omega: StackVec, tau_top: Sequence) -> StackVec:
    if is_empty(omega):
        raise StackUnderflowError("pop on an empty stack")
    _check_one_hot(tau_top, len(omega))
    if tuple(tau_top) != top(omega):
        raise InputError("tau_top does not match the top of the stack")
    return tuple(4 * w - 2 * t - 1 for w, t in zip(omega, tau_top))


def encode(stack: Sequence[int], k: int) -> StackVec:
    """Encode a list of symbol indices (bottom first)."""
    omega = empty(k)
    for s in stack:
        omega = push(omega, one_hot(s, k))
    return omega


def decode(omega: StackVec) -> list[int]:
    """Recover symbol indices (bottom first) by repeated top and pop."""
    out = []
    while not is_empty(omega):
        tau = top(omega)
        if sum(tau) != 1:
            raise InputError(f"not a valid stack encoding: {omega}")
        out.append(tau.index(ONE))
        omega = pop(omega, tau)
    out.reverse()
    return out


def digit_count(x: Rational) -> int:
    """Number of base-4 fractional digits of a dyadic rational in [0, 1]."""
    d = int(x.denominator)
    if d & (d - 1):
        raise InputError(f"{x} is not dyadic")
    bits = d.bit_length() - 1
    return (bits + 1) // 2


# --------------------------------------------------------------------------
# fixed precision


def required_bits(depth: int) -> int:
    """Fractional bits needed to hold a stack of ``depth`` levels exactly."""
    return 2 * depth


def round_half_even(x: Rational, bits: int) -> int:
    """Integer k minimising |x - k / 2**bits|, ties to even."""
    num = int(x.numerator) << bits
    den = int(x.denominator)
    if den == 1:
        return num
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q & 1):
        q += 1
    return q


@dataclass(frozen=True)
class FixedPoint:
    """``value / 2**bits``, saturated to [0, 1]."""

    value: int
    bits: int

    @classmethod
    def from_rational(cls, x: Rational, bits: int) -> "FixedPoint":
        if bits < 2:
            raise ConfigError(f"need at least 2 fractional bits, got {bits}")
        k = round_half_even(mpq(x), bits)
        return cls(min(max(k, 0), 1 << bits), bits)

    def to_rational(self) -> Rational:
        return mpq(self.value, 1 << self.bits)


def quantize(omega: StackVec, bits: int) -> tuple[FixedPoint, ...]:
    return tuple(FixedPoint.from_rational(w, bits) for w in omega)


def dequantize(fx: Sequence[FixedPoint]) -> StackVec:
    return tuple(f.to_rational() for f in fx)


def fixed_push(fx: Sequence[FixedPoint], tau: Sequence, bits: int) -> tuple[FixedPoint, ...]:
    return quantize(push(dequantize(fx), tau), bits)


def fixed_pop(fx: Sequence[FixedPoint], tau_top: Sequence, bits: int) -> tuple[FixedPoint, ...]:
    return quantize(pop(dequantize(fx), tau_top), bits)


def fixed_top(fx: Sequence[FixedPoint]) -> StackVec:
    return top(dequantize(fx))
