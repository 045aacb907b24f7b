from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotr_harness.errors import EmptyCorpusError, EmptyError, LengthMismatchError
from cotr_harness.metrics import (
    ErrorStats,
    corpus_rouge_l,
    error_rate,
    format_pct,
    lcs_length,
    rouge_l,
    rouge_l_text,
    tokenize,
    weighted_average,
)

from oracles import brute_force_lcs, oracle_f1

small_seqs = st.lists(st.sampled_from("abcde"), max_size=8)


def test_oracle_sanity():
    # hand-checkable cases for the oracle itself
    assert brute_force_lcs([], ["a"]) == 0
    assert brute_force_lcs(list("abcd"), list("ace")) == 2
    assert brute_force_lcs(list("abc"), list("cba")) == 1
    assert brute_force_lcs(list("aaaa"), list("aa")) == 2


@settings(max_examples=400, deadline=None)
@given(small_seqs, small_seqs)
def test_lcs_matches_oracle(a, b):
    assert lcs_length(a, b) == brute_force_lcs(a, b)


@given(small_seqs, small_seqs)
def test_lcs_symmetric(a, b):
    assert lcs_length(a, b) == lcs_length(b, a)


@given(small_seqs)
def test_lcs_self(a):
    assert lcs_length(a, a) == len(a)


@given(small_seqs, small_seqs, st.sampled_from("xyz"))
def test_lcs_append_shared_token(a, b, tok):
    assert lcs_length(a + [tok], b + [tok]) == lcs_length(a, b) + 1


def test_rouge_spot_value():
    s = rouge_l(["a", "b", "c", "d"], ["a", "c", "e"])
    assert s.precision == pytest.approx(0.5, abs=1e-4)
    assert s.recall == pytest.approx(0.6667, abs=1e-4)
    assert s.f1 == pytest.approx(0.5714, abs=1e-4)
    assert s.f1 == pytest.approx(oracle_f1(list("abcd"), list("ace")), abs=1e-12)


def test_rouge_identity_and_disjoint():
    assert rouge_l(["x", "y"], ["x", "y"]) == rouge_l(["q"], ["q"])
    s = rouge_l(["x", "y"], ["x", "y"])
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    d = rouge_l(["a"], ["b", "c"])
    assert (d.precision, d.recall, d.f1) == (0.0, 0.0, 0.0)


def test_rouge_empty_sides_do_not_divide_by_zero():
    assert rouge_l([], ["a"]).f1 == 0.0
    assert rouge_l(["a"], []).f1 == 0.0
    assert rouge_l([], []).f1 == 0.0


@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8))
def test_rouge_self_is_one(x):
    assert rouge_l(x, x).f1 == 1.0


@given(small_seqs, small_seqs, st.permutations(list("abcde")))
def test_rouge_invariant_under_relabeling(a, b, perm):
    mapping = dict(zip("abcde", perm))
    relabeled = rouge_l([mapping[t] for t in a], [mapping[t] for t in b])
    assert relabeled == rouge_l(a, b)


@settings(max_examples=200, deadline=None)
@given(small_seqs, small_seqs)
def test_rouge_f1_matches_oracle(a, b):
    assert rouge_l(a, b).f1 == pytest.approx(oracle_f1(a, b), abs=1e-12)


def test_corpus_rouge():
    assert corpus_rouge_l([(["a"], ["a"]), (["a"], ["b"])]) == 50.0
    assert corpus_rouge_l([(["a", "b"], ["a", "b"])]) == 100.0
    pairs = [(list("abcd"), list("ace")), (["z"], ["z"]), (["p"], ["q"])]
    expected = 100 * (oracle_f1(*pairs[0]) + 1 + 0) / 3
    assert corpus_rouge_l(pairs) == pytest.approx(expected, abs=1e-9)
    assert corpus_rouge_l(pairs) == pytest.approx(52.38, abs=0.01)


def test_corpus_rouge_empty():
    with pytest.raises(EmptyCorpusError):
        corpus_rouge_l([])


def test_tokenize_devanagari_and_punctuation():
    assert tokenize("पुण्यात मुसळधार पाऊस, वाहतूक कोंडी!") == ("पुण्यात", "मुसळधार", "पाऊस", "वाहतूक", "कोंडी")
    assert tokenize("  Hello,   WORLD.  ") == ("hello", "world")
    # the danda is punctuation and disappears; a lone punctuation token vanishes
    assert tokenize("छान आहे । - ठीक") == ("छान", "आहे", "ठीक")
    # vowel signs (combining marks) stay attached to their consonant
    assert tokenize("कि")[0] == "कि"


def test_tokenize_nfc():
    decomposed = "é"
    assert tokenize(decomposed) == tokenize("é")
    assert rouge_l_text("caf" + decomposed, "café").f1 == 1.0


def test_error_rate_basic():
    assert error_rate(["a", "b", "a", "b"], ["a", "b", "a", "b"]).error_pct == 0.0
    assert error_rate(["a", "b", "a", "a"], ["a", "b", "a", "b"]).error_pct == 25.0


def test_error_rate_parse_failures():
    stats = error_rate([None, "a", "b", "b"], ["a", "a", "b", "a"])
    assert stats == ErrorStats(n_total=4, n_wrong=2, n_parse_failures=1)
    excl = error_rate([None, "a", "b", "b"], ["a", "a", "b", "a"], exclude_parse_failures=True)
    assert excl == ErrorStats(n_total=3, n_wrong=1, n_parse_failures=1)


def test_error_rate_21_of_103():
    preds = ["x"] * 21 + ["g"] * 82
    stats = error_rate(preds, ["g"] * 103)
    assert stats.n_wrong == 21
    assert stats.error_pct == pytest.approx(20.39, abs=0.01)
    assert format_pct(stats.error_pct) == "20.39"
    # consistent with the reference value 20.38 within the rounding tolerance
    assert abs(stats.error_pct - 20.38) <= 0.02


def test_error_rate_errors():
    with pytest.raises(LengthMismatchError):
        error_rate(["a"], ["a", "b"])
    with pytest.raises(EmptyError):
        error_rate([], [])
    with pytest.raises(EmptyError):
        ErrorStats(0, 0).error_pct


def test_weighted_average():
    assert weighted_average([(50.0, 2), (0.0, 2)]) == 25.0
    assert weighted_average([(12.34, 7)]) == 12.34
    with pytest.raises(EmptyError):
        weighted_average([])
    with pytest.raises(EmptyError):
        weighted_average([(1.0, 0)])


def test_weighted_differs_from_unweighted_mean():
    parts = [(20.38, 103), (3.06, 98), (16.83, 101)]
    assert weighted_average(parts) == pytest.approx(13.57, abs=0.01)
    unweighted = sum(p for p, _ in parts) / 3
    assert unweighted == pytest.approx(13.42, abs=0.01)
    assert abs(unweighted - 13.57) > 0.1


def test_weighted_average_cotr_row():
    parts = [(18.44, 103), (2.04, 98), (12.87, 101)]
    assert weighted_average(parts) == pytest.approx(11.2553311, abs=1e-6)


def test_derived_counts_round_to_reference_cells():
    # the sizes behind the weighted average: k/n rounds to each reference cell
    for k, n, cell in [(21, 103, 20.38), (3, 98, 3.06), (17, 101, 16.83)]:
        assert abs(100 * k / n - cell) <= 0.02


def test_weighted_average_of_non_count_values():
    # values that no whole count produces are weighted as given
    assert weighted_average([(0.1, 3), (0.2, 7)]) == pytest.approx((0.3 + 1.4) / 10, rel=1e-15)
    assert weighted_average([(50.0, 2), (100 / 3, 3)]) == 40.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", None]), st.sampled_from(["a", "b"])), min_size=2, max_size=60), st.data())
def test_partition_consistency_identity(pairs, data):
    cuts = sorted(set(data.draw(st.lists(st.integers(1, len(pairs) - 1), max_size=4))))
    bounds = [0] + cuts + [len(pairs)]
    parts = [pairs[a:b] for a, b in zip(bounds, bounds[1:])]
    whole = error_rate([p for p, _ in pairs], [g for _, g in pairs])
    stats = [error_rate([p for p, _ in part], [g for _, g in part]) for part in parts]
    combined = weighted_average([(s.error_pct, s.n_total) for s in stats])
    assert combined == whole.error_pct


@pytest.mark.parametrize(
    "value,text",
    [(20.385, "20.39"), (0.125, "0.13"), (2.675, "2.68"), (13.574999, "13.57"), (0.0, "0.00"), (100.0, "100.00")],
)
def test_format_pct_half_up(value, text):
    assert format_pct(value) == text


def test_format_pct_keeps_full_precision_elsewhere():
    rng = random.Random(3)
    for _ in range(100):
        v = rng.uniform(0, 100)
        assert abs(float(format_pct(v)) - v) <= 0.005 + 1e-12
