"""Autoregressive decoding from pose features to text.

Beam size 1 is greedy argmax decoding (argmax ties resolve to the lower
token id); larger beams run standard beam search over cumulative log
probabilities, with hypotheses ranked by sum(log p) / length^alpha at
finalization. Pad and bos can never be emitted. No repetition penalty is
applied by default; a score penalty per already-emitted token is exposed
as an off-by-default knob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Parameters, decode_logits, encode_features
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, Vocabulary, decode


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 256
    alpha: float = 1.0
    repetition_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.repetition_penalty < 0.0:
            raise ValueError("repetition_penalty must be >= 0")


@dataclass(frozen=True)
class TranslationHypothesis:
    """Decoded ids (eos included when emitted), text, and normalized score."""

    token_ids: tuple[int, ...]
    text: str
    score: float
    reached_max_len: bool


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - math.log(np.exp(shifted).sum())


def _step_logprobs(params, enc_out, prefix, cfg) -> np.ndarray:
    logits = decode_logits(params, enc_out, prefix)
    logp = _log_softmax(logits[-1])
    logp[PAD_ID] = -np.inf
    logp[BOS_ID] = -np.inf
    if cfg.repetition_penalty > 0.0:
        for tid in prefix[1:]:
            logp[tid] -= cfg.repetition_penalty
    return logp


def _normalized(score_sum: float, length: int, alpha: float) -> float:
    return score_sum / (max(length, 1) ** alpha)


def translate(
    params: Parameters,
    vocab: Vocabulary,
    src,
    cfg: DecodeConfig = DecodeConfig(),
    trace: list | None = None,
) -> TranslationHypothesis:
    """Decode one source feature sequence into a translation hypothesis.

    When ``trace`` is a list, beam search appends the set of live prefixes
    kept after each step (diagnostics only; scoring is unaffected).
    """
    if vocab.size != params.config.vocab_size:
        raise ValueError(
            f"vocabulary size {vocab.size} != model vocab_size "
            f"{params.config.vocab_size}"
        )
    enc_out = encode_features(params, src)
    if cfg.beam_size == 1:
        return _greedy(params, vocab, enc_out, cfg)
    return _beam(params, vocab, enc_out, cfg, trace)


def _finalize(vocab, emitted: tuple[int, ...], score_sum: float, cfg) -> TranslationHypothesis:
    reached_max = not (emitted and emitted[-1] == EOS_ID)
    return TranslationHypothesis(
        token_ids=emitted,
        text=decode(vocab, emitted),
        score=_normalized(score_sum, len(emitted), cfg.alpha),
        reached_max_len=reached_max,
    )


def _greedy(params, vocab, enc_out, cfg) -> TranslationHypothesis:
    prefix = [BOS_ID]
    score_sum = 0.0
    for _ in range(cfg.max_len):
        logp = _step_logprobs(params, enc_out, prefix, cfg)
        next_id = int(np.argmax(logp))  # first max = lowest id on ties
        score_sum += float(logp[next_id])
        prefix.append(next_id)
        if next_id == EOS_ID:
            break
    return _finalize(vocab, tuple(prefix[1:]), score_sum, cfg)


def _beam(params, vocab, enc_out, cfg, trace=None) -> TranslationHypothesis:
    live: list[tuple[float, tuple[int, ...]]] = [(0.0, (BOS_ID,))]
    finished: list[tuple[float, tuple[int, ...]]] = []
    for _ in range(cfg.max_len):
        expansions: list[tuple[float, int, int]] = []
        for bi, (score_sum, prefix) in enumerate(live):
            logp = _step_logprobs(params, enc_out, list(prefix), cfg)
            for tid in range(len(logp)):
                if np.isfinite(logp[tid]):
                    expansions.append((score_sum + float(logp[tid]), bi, tid))
        # Deterministic: by score, then earlier beam, then lower token id.
        expansions.sort(key=lambda e: (-e[0], e[1], e[2]))
        next_live = []
        step_kept = []
        for score_sum, bi, tid in expansions[: cfg.beam_size]:
            prefix = live[bi][1] + (tid,)
            step_kept.append(prefix[1:])
            if tid == EOS_ID:
                finished.append((score_sum, prefix))
            else:
                next_live.append((score_sum, prefix))
        if trace is not None:
            trace.append(step_kept)
        live = next_live
        if not live:
            break
    finished.extend(live)  # hit max length without eos
    best = max(
        finished,
        key=lambda f: (_normalized(f[0], len(f[1]) - 1, cfg.alpha), f[1]),
    )
    return _finalize(vocab, best[1][1:], best[0], cfg)
