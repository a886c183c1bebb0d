"""Pose-keypoint-to-text translation toolkit."""

from .augment import AugmentationParams, AugmentationPolicy, apply, sample_params
from .decoding import DecodeConfig, TranslationHypothesis, translate
from .metrics import BleuReport, CorpusStats, bleu4, chrf_pp, corpus_stats
from .model import ModelConfig, Parameters, backward, forward, init, param_count
from .pose import (
    Component,
    Diagnostic,
    FeatureSequence,
    PoseCorruptionError,
    PoseError,
    PoseFormatError,
    PoseSequence,
    PoseTruncationError,
    flatten,
    load_pose,
    read_pose_jsonl,
    save_pose,
    validate,
)
from .resample import ResampleSpec, resample
from .synthetic import SynthSpec, generate
from .tokenizer import (
    TokenSequence,
    Vocabulary,
    VocabularyError,
    decode,
    encode,
    load_vocab,
    save_vocab,
    train_vocab,
    vocab_hash,
)
from .trainer import (
    Checkpoint,
    TrainingConfig,
    TrainingError,
    VocabMismatchError,
    average_checkpoints,
    load_checkpoint,
    save_checkpoint,
    select_best,
    train,
    train_step,
)

__version__ = "0.1.0"
