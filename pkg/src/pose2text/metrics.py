"""Corpus-level BLEU-4 and chrF++ plus the duration/vocabulary report.

BLEU here is corpus-level, case-sensitive, single-reference BLEU with
modified (clipped) n-gram precisions for n = 1..4 and brevity penalty
min(1, exp(1 - ref_len / hyp_len)). Hypotheses and references are run
through the international tokenization documented at
:func:`tokenize_international` before counting, so scores are bit-exact
across runs.

Zero counts are handled by the ``smooth`` flag:

* ``"exp"`` (default): an order with zero clipped matches but a nonzero
  total contributes 1 / (2^k * total), k doubling per zeroed order; an
  order with no hypothesis n-grams at all is dropped from the geometric
  mean (effective order). Dev-loop checkpoint selection relies on this
  variant, since near-zero regimes would otherwise score a constant 0.
* ``"none"``: strict scoring; any zero or undefined precision gives 0.0.

chrF++ is the character-n-gram F-score (orders 1..6 on whitespace-removed
text) augmented with word 1- and 2-grams (whitespace tokens with ASCII
punctuation split off word edges), beta = 2, accumulated corpus-level.
"""

from __future__ import annotations

import functools
import math
import re
import sys
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import IO, Sequence

BLEU_ORDER = 4
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CHRF_BETA = 2.0

_WORD_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")


@functools.lru_cache(maxsize=1)
def _unicode_chars(prefix: str) -> str:
    return "".join(
        chr(x)
        for x in range(sys.maxunicode + 1)
        if unicodedata.category(chr(x)).startswith(prefix)
    )


@functools.lru_cache(maxsize=3)
def _intl_regexes():
    punct = re.escape(_unicode_chars("P"))
    symbol = re.escape(_unicode_chars("S"))
    return (
        re.compile(f"([^\\d])([{punct}])"),
        re.compile(f"([{punct}])([^\\d])"),
        re.compile(f"([{symbol}])"),
    )


def tokenize_international(line: str) -> list[str]:
    """Unicode-aware punctuation-splitting tokenization, pinned bit-exactly.

    Rules, applied in order, then split on whitespace:

    1. a punctuation character (Unicode category P*) preceded by a
       non-digit is split off: ``(nondigit)(punct)`` -> ``nondigit punct``
    2. a punctuation character followed by a non-digit is split off
    3. every symbol character (category S*) is surrounded by spaces

    Digits keep adjacent punctuation (decimal and thousand separators stay
    attached).
    """
    nondigit_punct, punct_nondigit, symbol = _intl_regexes()
    line = nondigit_punct.sub(r"\1 \2 ", line)
    line = punct_nondigit.sub(r" \1 \2", line)
    line = symbol.sub(r" \1 ", line)
    return line.split()


@dataclass(frozen=True)
class BleuReport:
    """Corpus BLEU-4 with supporting statistics.

    ``precisions`` are the per-order modified precisions actually used in
    the geometric mean (after smoothing); an order excluded for having no
    hypothesis n-grams is reported as 0.0.
    """

    bleu: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    smooth: str


@dataclass(frozen=True)
class CorpusStats:
    """Duration vs. vocabulary-size report for a corpus."""

    duration_hours: float
    unique_words: int
    ratio: float


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(
    hypotheses: Sequence[str],
    references: Sequence[str],
    smooth: str = "exp",
) -> BleuReport:
    """Corpus-level, case-sensitive, single-reference BLEU-4."""
    if smooth not in ("exp", "none"):
        raise ValueError(f"smooth must be 'exp' or 'none', got {smooth!r}")
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("empty corpus")

    correct = [0] * BLEU_ORDER
    total = [0] * BLEU_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = tokenize_international(hyp)
        ref_tokens = tokenize_international(ref)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, BLEU_ORDER + 1):
            hyp_ngrams = _ngram_counts(hyp_tokens, n)
            ref_ngrams = _ngram_counts(ref_tokens, n)
            total[n - 1] += sum(hyp_ngrams.values())
            correct[n - 1] += sum((hyp_ngrams & ref_ngrams).values())

    if hyp_len == 0:
        brevity_penalty = 0.0
    else:
        brevity_penalty = min(1.0, math.exp(1.0 - ref_len / hyp_len))

    precisions = [0.0] * BLEU_ORDER
    log_sum = 0.0
    effective_order = 0
    zeros = 1.0
    degenerate = False
    for n in range(BLEU_ORDER):
        if total[n] == 0:
            if smooth == "none":
                degenerate = True
            continue
        if correct[n] == 0:
            if smooth == "none":
                degenerate = True
                continue
            zeros *= 2.0
            precisions[n] = 1.0 / (zeros * total[n])
        else:
            precisions[n] = correct[n] / total[n]
        log_sum += math.log(precisions[n])
        effective_order += 1

    if degenerate or effective_order == 0:
        bleu = 0.0
    else:
        bleu = brevity_penalty * math.exp(log_sum / effective_order) * 100.0
    return BleuReport(
        bleu=bleu,
        precisions=tuple(precisions),
        brevity_penalty=brevity_penalty,
        hyp_len=hyp_len,
        ref_len=ref_len,
        smooth=smooth,
    )


def _chrf_words(line: str) -> list[str]:
    """Whitespace tokens with ASCII punctuation split off word edges."""
    tokens = []
    for w in line.split():
        if len(w) == 1:
            tokens.append(w)
        elif w[-1] in _WORD_PUNCT:
            tokens.extend([w[:-1], w[-1]])
        elif w[0] in _WORD_PUNCT:
            tokens.extend([w[0], w[1:]])
        else:
            tokens.append(w)
    return tokens


def chrf_pp(
    hypotheses: Sequence[str],
    references: Sequence[str],
    char_order: int = CHRF_CHAR_ORDER,
    word_order: int = CHRF_WORD_ORDER,
    beta: float = CHRF_BETA,
) -> float:
    """Corpus chrF++ in [0, 100].

    Per order (``char_order`` character orders on whitespace-stripped
    text plus ``word_order`` word orders) the hypothesis/reference/match
    counts are accumulated over the corpus; precision and recall are
    averaged over orders where both sides have n-grams, and combined with
    F-beta.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("empty corpus")

    n_orders = char_order + word_order
    totals_hyp = [0] * n_orders
    totals_ref = [0] * n_orders
    matches = [0] * n_orders
    for hyp, ref in zip(hypotheses, references):
        hyp_chars = "".join(hyp.split())
        ref_chars = "".join(ref.split())
        hyp_words = _chrf_words(hyp)
        ref_words = _chrf_words(ref)
        for i in range(n_orders):
            if i < char_order:
                n = i + 1
                h = _ngram_counts(hyp_chars, n)
                r = _ngram_counts(ref_chars, n)
            else:
                n = i - char_order + 1
                h = _ngram_counts(hyp_words, n)
                r = _ngram_counts(ref_words, n)
            totals_hyp[i] += sum(h.values())
            totals_ref[i] += sum(r.values())
            matches[i] += sum((h & r).values())

    avg_precision = 0.0
    avg_recall = 0.0
    effective = 0
    for i in range(n_orders):
        if totals_hyp[i] > 0 and totals_ref[i] > 0:
            avg_precision += matches[i] / totals_hyp[i]
            avg_recall += matches[i] / totals_ref[i]
            effective += 1
    if effective == 0:
        return 0.0
    avg_precision /= effective
    avg_recall /= effective
    if avg_precision + avg_recall == 0.0:
        return 0.0
    beta_sq = beta * beta
    score = (1 + beta_sq) * avg_precision * avg_recall / (beta_sq * avg_precision + avg_recall)
    return 100.0 * score


def corpus_stats(corpus: str | IO[str], duration_hours: float) -> CorpusStats:
    """Unique whitespace-delimited word count and hours-per-kiloword ratio."""
    if duration_hours <= 0:
        raise ValueError(f"duration must be positive, got {duration_hours}")
    text = corpus.read() if hasattr(corpus, "read") else corpus
    unique = len(set(text.split()))
    ratio = duration_hours / (unique / 1000.0) if unique else math.inf
    return CorpusStats(
        duration_hours=float(duration_hours),
        unique_words=unique,
        ratio=ratio,
    )
