"""Deterministic synthetic pose/text corpora for tests and demos.

Each sample draws a sentence from a template inventory; the pose is a
deterministic function of that sentence: the frame range is split into one
segment per word, and every word is rendered as a word-keyed sum of two or
three sinusoids per (keypoint, coordinate) track, evaluated on the
segment's normalized time. The same word therefore always produces the
same segment shape (up to temporal stretch and a small seeded jitter), so
the sentence-to-pose mapping is learnable in principle. All coordinates
stay inside [0, 1] and confidences are 1, so generated poses validate
cleanly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .pose import Component, PoseSequence

DEFAULT_TEMPLATES = (
    "der hund läuft schnell",
    "die katze schläft gern",
    "ein vogel singt laut",
    "das kind spielt draußen",
    "der mann liest heute",
    "die frau kocht abends",
    "ein auto fährt langsam",
    "der zug kommt später",
    "die sonne scheint hell",
    "ein fisch schwimmt tief",
    "das pferd springt hoch",
    "die blume blüht bunt",
)


@dataclass(frozen=True)
class SynthSpec:
    num_pairs: int
    frames_min: int = 24
    frames_max: int = 48
    keypoints: int = 5
    coords: int = 3
    fps: Fraction = Fraction(25)
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    seed: int = 0
    jitter: float = 0.004

    def __post_init__(self):
        object.__setattr__(self, "fps", Fraction(self.fps))
        object.__setattr__(self, "templates", tuple(self.templates))
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if not 2 <= self.frames_min <= self.frames_max:
            raise ValueError("need 2 <= frames_min <= frames_max")
        if self.keypoints < 1 or self.coords not in (2, 3):
            raise ValueError("need keypoints >= 1 and coords in {2, 3}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not self.templates or any(not t.split() for t in self.templates):
            raise ValueError("templates must be non-empty sentences")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")


def _word_rng(word: str) -> np.random.Generator:
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def _word_waves(word: str, keypoints: int, coords: int) -> np.ndarray:
    """Per-(keypoint, coord) sinusoid bank: rows of (amp, freq, phase)."""
    rng = _word_rng(word)
    n_waves = int(rng.integers(2, 4))
    amps = rng.uniform(0.3, 1.0, size=(keypoints, coords, 3))
    amps[:, :, n_waves:] = 0.0
    amps *= 0.35 / np.abs(amps).sum(axis=2, keepdims=True)
    freqs = rng.uniform(0.5, 2.5, size=(keypoints, coords, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(keypoints, coords, 3))
    return np.stack([amps, freqs, phases], axis=-1)


def _render_segment(word: str, length: int, keypoints: int, coords: int) -> np.ndarray:
    waves = _word_waves(word, keypoints, coords)
    u = np.arange(length, dtype=np.float64) / max(length, 1)
    amps = waves[..., 0][None]
    freqs = waves[..., 1][None]
    phases = waves[..., 2][None]
    t = u[:, None, None, None]
    values = 0.5 + (amps * np.sin(2.0 * np.pi * freqs * t + phases)).sum(axis=-1)
    return values


def _segment_lengths(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def generate(spec: SynthSpec) -> tuple[list[PoseSequence], list[str]]:
    """Generate ``spec.num_pairs`` aligned (pose, sentence) samples."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    components = (Component("body", 0, spec.keypoints),)
    poses: list[PoseSequence] = []
    sentences: list[str] = []
    for _ in range(spec.num_pairs):
        sentence = spec.templates[int(rng.integers(len(spec.templates)))]
        words = sentence.split()
        frames_total = int(rng.integers(spec.frames_min, spec.frames_max + 1))
        segments = []
        for word, seg_len in zip(words, _segment_lengths(frames_total, len(words))):
            if seg_len > 0:
                segments.append(
                    _render_segment(word, seg_len, spec.keypoints, spec.coords)
                )
        frames = np.concatenate(segments, axis=0)
        if spec.jitter > 0:
            frames = frames + rng.normal(0.0, spec.jitter, size=frames.shape)
        frames = np.clip(frames, 0.0, 1.0)
        poses.append(
            PoseSequence(
                fps=spec.fps,
                frames=frames.astype(np.float32),
                confidence=np.ones((frames.shape[0], spec.keypoints), dtype=np.float32),
                components=components,
            )
        )
        sentences.append(sentence)
    return poses, sentences
