import math
import string
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pose2text.metrics import (
    bleu4,
    chrf_pp,
    corpus_stats,
    tokenize_international,
)

# ------------------------------------------------------------- independent
# oracles: naive n-gram counting, written without any shared machinery


def naive_bleu_counts(hyps, refs, n):
    total = correct = 0
    for h, r in zip(hyps, refs):
        ht = tokenize_international(h)
        rt = tokenize_international(r)
        hc = Counter(tuple(ht[i : i + n]) for i in range(len(ht) - n + 1))
        rc = Counter(tuple(rt[i : i + n]) for i in range(len(rt) - n + 1))
        total += sum(hc.values())
        correct += sum(min(c, rc[g]) for g, c in hc.items())
    return correct, total


def naive_chrfpp(hyps, refs, beta=2.0):
    def char_ngrams(s, n):
        s = "".join(s.split())
        return Counter(s[i : i + n] for i in range(len(s) - n + 1))

    def words_of(line):
        toks = []
        for w in line.split():
            if len(w) > 1 and w[-1] in string.punctuation:
                toks += [w[:-1], w[-1]]
            elif len(w) > 1 and w[0] in string.punctuation:
                toks += [w[0], w[1:]]
            else:
                toks.append(w)
        return toks

    def word_ngrams(line, n):
        toks = words_of(line)
        return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))

    precision_sum = recall_sum = 0.0
    effective = 0
    for order in range(1, 9):
        th = tr = tm = 0
        for h, r in zip(hyps, refs):
            hc = char_ngrams(h, order) if order <= 6 else word_ngrams(h, order - 6)
            rc = char_ngrams(r, order) if order <= 6 else word_ngrams(r, order - 6)
            th += sum(hc.values())
            tr += sum(rc.values())
            tm += sum((hc & rc).values())
        if th > 0 and tr > 0:
            precision_sum += tm / th
            recall_sum += tm / tr
            effective += 1
    p = precision_sum / effective
    r = recall_sum / effective
    if p + r == 0:
        return 0.0
    return 100 * (1 + beta**2) * p * r / (beta**2 * p + r)


class TestTokenization:
    def test_punctuation_split(self):
        assert tokenize_international("Hallo, Welt!") == ["Hallo", ",", "Welt", "!"]

    def test_decimal_separator_kept(self):
        assert tokenize_international("pi is 3,14 m") == ["pi", "is", "3,14", "m"]

    def test_symbols_split(self):
        assert tokenize_international("a+b") == ["a", "+", "b"]


class TestBleu:
    def test_perfect_match_scores_100(self):
        hyps = ["der Hund läuft.", "Hallo, Welt!"]
        report = bleu4(hyps, list(hyps))
        assert report.bleu == 100.0
        assert report.precisions == (1.0, 1.0, 1.0, 1.0)
        assert report.brevity_penalty == 1.0

    def test_no_overlap_is_zero_strict(self):
        report = bleu4(["aa bb cc dd"], ["xx yy zz ww"], smooth="none")
        assert report.bleu == 0.0

    def test_hand_oracle_partial_overlap(self):
        # sentence 1 identical (6 tokens); sentence 2: hyp "dogs run fast"
        # vs ref "dogs run very fast": p1 = 9/9, p2 = 6/7, p3 = 4/5,
        # p4 = 3/3. hyp_len 9, ref_len 10 -> BP = exp(1 - 10/9).
        hyps = ["the cat sat on the mat", "dogs run fast"]
        refs = ["the cat sat on the mat", "dogs run very fast"]
        expected = 100 * math.exp(1 - 10 / 9) * (1 * (6 / 7) * (4 / 5) * 1) ** 0.25
        report = bleu4(hyps, refs)
        assert report.bleu == pytest.approx(expected, abs=1e-6)
        assert report.bleu == pytest.approx(81.42932915087519, abs=1e-6)
        assert report.precisions == (1.0, 6 / 7, 4 / 5, 1.0)

    def test_hand_oracle_effective_order(self):
        # hyp has no 4-grams; smoothed scoring drops that order:
        # p1 = p2 = p3 = 1, BP = exp(1 - 4/3)
        report = bleu4(["the cat sat"], ["the cat sat down"])
        assert report.bleu == pytest.approx(100 * math.exp(-1 / 3), abs=1e-6)
        assert report.bleu == pytest.approx(71.65313105737893, abs=1e-6)
        # strict mode refuses the undefined order
        assert bleu4(["the cat sat"], ["the cat sat down"], smooth="none").bleu == 0.0

    def test_hand_oracle_clipping_and_smoothing(self):
        # hyp "the the the the" vs ref "the cat": clipped p1 = 1/4; zero
        # 2-/3-/4-gram matches smooth to 1/(2*3), 1/(4*2), 1/(8*1); BP = 1
        report = bleu4(["the the the the"], ["the cat"])
        expected = 100 * (1 / 4 * 1 / 6 * 1 / 8 * 1 / 8) ** 0.25
        assert report.bleu == pytest.approx(expected, abs=1e-6)
        assert report.bleu == pytest.approx(15.97357760615681, abs=1e-6)
        assert bleu4(["the the the the"], ["the cat"], smooth="none").bleu == 0.0

    def test_counts_match_naive_oracle(self):
        hyps = ["der Hund läuft schnell.", "die Katze, schläft", "ein Vogel singt"]
        refs = ["der Hund rennt schnell.", "die Katze schläft gern", "ein Fisch schwimmt"]
        report = bleu4(hyps, refs)
        for n in range(1, 5):
            correct, total = naive_bleu_counts(hyps, refs, n)
            if correct > 0:
                assert report.precisions[n - 1] == pytest.approx(correct / total)

    def test_report_invariant(self):
        hyps = ["a b c d e", "f g h i"]
        refs = ["a b c d x", "f g h j"]
        report = bleu4(hyps, refs)
        if all(p > 0 for p in report.precisions):
            recomputed = (
                report.brevity_penalty
                * math.exp(sum(math.log(p) for p in report.precisions) / 4)
                * 100
            )
            assert report.bleu == pytest.approx(recomputed, abs=1e-9)

    def test_permutation_invariant(self):
        hyps = ["a b c", "d e f g", "h i"]
        refs = ["a b x", "d e f q", "h j"]
        base = bleu4(hyps, refs).bleu
        perm = [2, 0, 1]
        assert bleu4([hyps[i] for i in perm], [refs[i] for i in perm]).bleu == base

    def test_adding_perfect_pair_never_lowers_precisions(self):
        hyps = ["a b c d", "e f g"]
        refs = ["a b x d", "e q g"]
        before = bleu4(hyps, refs)
        after = bleu4(hyps + ["p q r s t"], refs + ["p q r s t"])
        for n in range(4):
            assert after.precisions[n] >= before.precisions[n] - 1e-12

    def test_brevity_penalty_formula(self):
        report = bleu4(["a b"], ["a b c d"])
        assert report.brevity_penalty == pytest.approx(math.exp(1 - 4 / 2))
        long_report = bleu4(["a b c d e"], ["a b"])
        assert long_report.brevity_penalty == 1.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bleu4(["a"], ["a", "b"])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            bleu4([], [])

    @given(
        st.lists(
            st.tuples(
                st.lists(st.sampled_from("abcdxyz"), min_size=1, max_size=6).map(" ".join),
                st.lists(st.sampled_from("abcdxyz"), min_size=1, max_size=6).map(" ".join),
            ),
            min_size=1,
            max_size=6,
        )
    )
    @settings(max_examples=80, deadline=None)
    def test_score_bounds(self, pairs):
        hyps = [h for h, _ in pairs]
        refs = [r for _, r in pairs]
        for smooth in ("exp", "none"):
            score = bleu4(hyps, refs, smooth=smooth).bleu
            assert 0.0 <= score <= 100.0


class TestChrfPP:
    def test_identical_corpora_score_100(self):
        hyps = ["der Hund läuft", "die Katze schläft"]
        assert chrf_pp(hyps, list(hyps)) == 100.0

    def test_disjoint_character_sets_zero(self):
        assert chrf_pp(["aaa bbb"], ["xyz qrs"]) == 0.0

    def test_hand_computed_toy_corpus(self):
        hyps = ["der hund läuft", "die katze schläft", "ein vogel singt."]
        refs = ["der hund rennt", "die katze schläft gern", "ein fisch singt."]
        score = chrf_pp(hyps, refs)
        assert score == pytest.approx(naive_chrfpp(hyps, refs), abs=1e-9)
        assert score == pytest.approx(58.963236415127675, abs=1e-6)

    def test_single_pair_equals_sentence_level(self):
        hyp, ref = "der hund läuft", "der hund rennt"
        assert chrf_pp([hyp], [ref]) == pytest.approx(naive_chrfpp([hyp], [ref]), abs=1e-9)

    def test_corpus_is_count_accumulation(self):
        hyps = ["abc def", "ghi jkl mno"]
        refs = ["abc xef", "ghi jkl mnq"]
        assert chrf_pp(hyps, refs) == pytest.approx(naive_chrfpp(hyps, refs), abs=1e-9)

    @given(
        st.lists(
            st.tuples(
                st.text(alphabet="abcd ", min_size=1, max_size=12),
                st.text(alphabet="abcd ", min_size=1, max_size=12),
            ),
            min_size=1,
            max_size=4,
        )
    )
    @settings(max_examples=80, deadline=None)
    def test_score_bounds(self, pairs):
        hyps = [h for h, _ in pairs]
        refs = [r for _, r in pairs]
        if all(not h.split() and not r.split() for h, r in pairs):
            return
        score = chrf_pp(hyps, refs)
        assert 0.0 <= score <= 100.0


class TestCorpusStats:
    def test_unique_word_count(self):
        stats = corpus_stats("a b c a b a", 2.0)
        assert stats.unique_words == 3
        assert stats.ratio == pytest.approx(2.0 / (3 / 1000))

    def test_one_word_one_hour(self):
        stats = corpus_stats("wort", 1.0)
        assert stats.ratio == pytest.approx(1000.0)

    def test_ratio_invariant(self):
        stats = corpus_stats("w1 w2 w3 w4", 3.5)
        assert stats.ratio == pytest.approx(stats.duration_hours / (stats.unique_words / 1000))

    @pytest.mark.parametrize(
        "hours,kwords,expected",
        [(19, 21, 0.90), (16, 19, 0.84), (79, 16, 4.93), (11, 3, 3.67)],
    )
    def test_reference_ratios_within_rounding(self, hours, kwords, expected):
        corpus = " ".join(f"w{i}" for i in range(kwords * 1000))
        stats = corpus_stats(corpus, hours)
        assert stats.unique_words == kwords * 1000
        # reference values carry two decimals; allow one unit in the last digit
        assert abs(stats.ratio - expected) < 0.01

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValueError):
            corpus_stats("a", 0.0)

    def test_reads_stream(self):
        import io

        stats = corpus_stats(io.StringIO("a b"), 1.0)
        assert stats.unique_words == 2
