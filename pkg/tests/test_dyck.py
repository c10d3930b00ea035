from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycklab.dyck import (
    BinSpec, SamplerParams, Vocab, catalan, corrupt_word, count_words, depth_profile, enumerate_words,
    is_valid, max_depth, next_valid_set, next_valid_sets, open_stack, read_dataset, sample_bin,
    sample_word, write_dataset,
)
from dycklab.errors import ConfigError, CorruptionError, InputError, ResourceError, SamplingError

V2 = Vocab(2)


def brute_valid(seq, n):
    """Independent check: repeatedly delete adjacent matched pairs."""
    s = list(seq)
    changed = True
    while changed:
        changed = False
        for i in range(len(s) - 1):
            if s[i] < n and s[i + 1] == s[i] + n:
                del s[i:i + 2]
                changed = True
                break
    return not s


@st.composite
def dyck_words(draw, n=2, max_pairs=12):
    """Random Dyck word built from the grammar directly."""
    pairs = draw(st.integers(0, max_pairs))

    def build(k):
        if k == 0:
            return []
        inner = draw(st.integers(0, k - 1))
        t = draw(st.integers(0, n - 1))
        return [t] + build(inner) + [t + n] + build(k - 1 - inner)

    return build(pairs)


def test_vocab_layout():
    assert V2.symbols == ("(", "[", ")", "]")
    for i in (1, 2):
        assert V2.open_index(i) + 2 == V2.close_index(i)
    v6 = Vocab(6)
    assert v6.size == 12 and len(set(v6.symbols)) == 12


def test_vocab_rejects_bad_symbols():
    with pytest.raises(ConfigError):
        Vocab(0)
    with pytest.raises(ConfigError):
        Vocab(2, ("(", "(", ")", "]"))


def test_validity_examples():
    assert is_valid(V2.parse("([()])[]"), V2)
    assert is_valid([], V2)
    assert not is_valid(V2.parse("([)]"), V2)
    assert not is_valid(V2.parse("(("), V2)
    with pytest.raises(InputError):
        is_valid([0, 7], V2)


def test_depth_examples():
    assert max_depth(V2.parse("([()])[]"), V2) == 3
    assert max_depth([], V2) == 0
    assert depth_profile(V2.parse("([("), V2) == [1, 2, 3]


@given(st.lists(st.integers(0, 3), max_size=14))
def test_validity_matches_pair_deletion(seq):
    assert is_valid(seq, V2) == brute_valid(seq, 2)


@given(dyck_words())
def test_grammar_words_are_valid(word):
    assert is_valid(word, V2)
    assert len(word) % 2 == 0


@given(dyck_words(), dyck_words())
def test_concatenation_and_wrapping(a, b):
    assert is_valid(a + b, V2)
    assert max_depth(a + b, V2) == max(max_depth(a, V2), max_depth(b, V2))
    assert max_depth([1] + a + [3], V2) == max_depth(a, V2) + 1


@given(dyck_words())
def test_next_valid_sets_rows(word):
    rows = next_valid_sets(word, V2)
    for t in range(len(word)):
        np.testing.assert_array_equal(rows[t], next_valid_set(word[: t + 1], V2))
        depth = depth_profile(word, V2)[t]
        assert rows[t].sum() == (2 if depth == 0 else 3)
        # the symbol that actually follows must be allowed
        if t + 1 < len(word):
            assert rows[t][word[t + 1]] == 1


def test_next_valid_set_examples():
    assert list(next_valid_set(V2.parse("(["), V2)) == [1, 1, 0, 1]
    assert list(next_valid_set([], V2)) == [1, 1, 0, 0]
    with pytest.raises(InputError):
        next_valid_set(V2.parse("(]"), V2)
    assert open_stack(V2.parse("([()"), V2) == [0, 1]


def test_catalan_and_counts():
    assert [catalan(k) for k in range(6)] == [1, 1, 2, 5, 14, 42]
    assert count_words(2, 10) == 1619


def test_enumeration_matches_brute_force():
    words = enumerate_words(V2, 8)
    brute = []
    for length in range(0, 9, 2):
        for idx in range(4 ** length):
            seq = [(idx // 4 ** k) % 4 for k in reversed(range(length))]
            if brute_valid(seq, 2):
                brute.append(seq)
    assert words == brute


def test_enumeration_order_and_count():
    words = enumerate_words(V2, 10)
    assert len(words) == 1619
    keys = [(len(w), w) for w in words]
    assert keys == sorted(keys)
    assert len(enumerate_words(Vocab(3), 6)) == count_words(3, 6) == 1 + 3 + 18 + 135
    with pytest.raises(ResourceError):
        enumerate_words(V2, 20, cap=1000)


def test_sampler_params_validation():
    with pytest.raises(ConfigError):
        SamplerParams(p=0.7, q=0.4)
    with pytest.raises(ConfigError):
        SamplerParams(p=-0.1)


def test_bin_spec_validation():
    with pytest.raises(ConfigError):
        BinSpec(10, (1, 5))
    with pytest.raises(ConfigError):
        BinSpec(10, (10, 4))
    with pytest.raises(ConfigError):
        BinSpec(10, (2, 10), (0, 3))


def test_sampling_is_seeded_and_respects_bins():
    spec = BinSpec(200, (10, 40), (2, 5))
    a = sample_bin(spec, SamplerParams(seed=3), V2)
    b = sample_bin(spec, SamplerParams(seed=3), V2)
    assert a == b
    for w in a:
        assert is_valid(w, V2) and spec.admits(w, V2)
    assert sample_bin(spec, SamplerParams(seed=4), V2) != a


def test_sample_word_valid():
    rng = random.Random(0)
    for _ in range(200):
        assert is_valid(sample_word(SamplerParams(), V2, rng), V2)


def test_sampler_pair_probability_shapes_length():
    # with q = 0 every word is a single nest, so length = 2 * depth
    words = sample_bin(BinSpec(50, (2, 40)), SamplerParams(p=0.8, q=0.0, seed=1), V2)
    for w in words:
        assert len(w) == 2 * max_depth(w, V2)


def test_sampling_failure_names_constraint():
    spec = BinSpec(1000, (2, 200), (30, 30))
    with pytest.raises(SamplingError, match="depth constraint"):
        sample_bin(spec, SamplerParams(seed=0), V2, budget=500)


@settings(max_examples=50)
@given(dyck_words(max_pairs=8).filter(lambda w: len(w) >= 2), st.integers(0, 10**6))
def test_corruption_yields_invalid_same_length(word, seed):
    bad = corrupt_word(word, V2, seed)
    assert len(bad) == len(word)
    assert not is_valid(bad, V2)


def test_corruption_errors():
    with pytest.raises(InputError):
        corrupt_word(V2.parse("(]"), V2, 0)
    with pytest.raises(InputError):
        corrupt_word([], V2, 0)
    with pytest.raises(CorruptionError):
        corrupt_word(V2.parse("()"), V2, 0, budget=0)


def test_dataset_roundtrip(tmp_path):
    words = enumerate_words(V2, 6)
    path = tmp_path / "d.txt"
    write_dataset(path, words, V2, SamplerParams(seed=9), seed=9)
    back = read_dataset(path)
    assert back.words == words
    assert back.vocab == V2
