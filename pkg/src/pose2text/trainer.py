"""Training loop: teacher forcing, checkpoint selection, and averaging.

Optimization follows the classic transformer recipe: Adam (beta1 0.9,
beta2 0.98, eps 1e-9) under an inverse-sqrt learning-rate schedule with
linear warmup, label-smoothed cross-entropy over non-pad target positions,
and global-norm gradient clipping. Checkpoints are snapshotted at a fixed
eval cadence with their dev BLEU, and fine-tuning restarts the optimizer
state and schedule from a loaded checkpoint.

Checkpoint file layout: the header line ``P2TX-CKPT v1``, the JSON-encoded
model config (u32 length prefix), the named float32 tensors sorted by name
(u16 name length + name, u8 rank, u32 dims, raw little-endian values), and
a JSON metadata blob (update count, dev score when recorded, epoch,
vocabulary hash).
"""

from __future__ import annotations

import io
import json
import math
import struct
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import augment as augment_mod
from . import model as model_mod
from .augment import AugmentationPolicy
from .decoding import DecodeConfig, translate
from .metrics import bleu4
from .model import ModelConfig, Parameters
from .pose import FeatureSequence, PoseSequence, flatten
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, TokenSequence, Vocabulary, encode, vocab_hash

CKPT_HEADER = b"P2TX-CKPT v1\n"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9


class TrainingError(Exception):
    """Raised when training cannot proceed (for example a non-finite loss)."""


class VocabMismatchError(TrainingError):
    """Pretrained checkpoint and current run use different vocabularies."""


@dataclass(frozen=True)
class TrainingConfig:
    max_epochs: int
    batch_size: int = 8
    learning_rate: float = 2e-3
    warmup_updates: int = 100
    label_smoothing: float = 0.1
    clip_norm: float = 1.0
    eval_every: int = 1
    patience: int = 5
    seed: int = 0
    augmentation: AugmentationPolicy | None = None
    pretrained: str | bytes | None = None
    max_src_frames: int = 4096
    dev_max_len: int = 64
    fill_value: float = 0.0

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.warmup_updates < 1:
            raise ValueError("warmup_updates must be >= 1")


@dataclass
class Checkpoint:
    """Parameters plus training metadata; the unit of averaging."""

    params: Parameters
    update_count: int
    dev_bleu: float | None
    epoch: int
    vocab_sha: str | None = None

    def __post_init__(self):
        if self.dev_bleu is not None and not 0.0 <= self.dev_bleu <= 100.0:
            raise ValueError(f"dev BLEU must be in [0, 100], got {self.dev_bleu}")

    @property
    def config(self) -> ModelConfig:
        return self.params.config


def learning_rate_at(step: int, base_lr: float, warmup: int) -> float:
    """Linear warmup to ``base_lr`` at ``warmup`` updates, then 1/sqrt decay."""
    if step < 1:
        raise ValueError("step counts from 1")
    return base_lr * min(step / warmup, math.sqrt(warmup / step))


def label_smoothed_loss(logits: np.ndarray, labels: np.ndarray, smoothing: float):
    """Per-position smoothed cross-entropy and its logits gradient.

    The smoothed target distribution puts 1 - eps on the gold label and
    eps/V uniformly on every class. Pad label positions contribute nothing.
    Returns (loss_sum, token_count, dlogits_sum) where ``dlogits_sum`` is
    the gradient of the un-normalized loss sum (softmax minus target);
    callers divide by their batch token total.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    v = logits.shape[1]
    keep = labels != PAD_ID
    count = int(keep.sum())
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    probs = np.exp(logp)
    q = np.full_like(logits, smoothing / v)
    rows = np.arange(len(labels))
    q[rows, labels] += 1.0 - smoothing
    per_pos = -(q * logp).sum(axis=1)
    dlogits = probs - q
    per_pos[~keep] = 0.0
    dlogits[~keep] = 0.0
    return float(per_pos.sum()), count, dlogits


def init_optimizer(params: Parameters) -> dict:
    return {
        "step": 0,
        "m": {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.tensors.items()},
        "v": {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.tensors.items()},
    }


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale gradients in place so the global norm is at most ``clip_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


def teacher_forcing_pair(target: TokenSequence | Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Decoder input bos+target and label row target+eos, both length |t|+1."""
    ids = list(target)
    return (
        np.asarray([BOS_ID] + ids, dtype=np.int64),
        np.asarray(ids + [EOS_ID], dtype=np.int64),
    )


def train_step(
    params: Parameters,
    batch: Sequence[tuple[FeatureSequence, TokenSequence]],
    config: TrainingConfig,
    optimizer_state: dict,
    rng: np.random.Generator | None = None,
):
    """One optimizer update over a batch of (features, target ids) pairs.

    The loss is the token-mean label-smoothed cross-entropy over all
    non-pad label positions of the batch; gradients accumulate per sample,
    are clipped to ``config.clip_norm``, and feed one Adam update at the
    scheduled learning rate. Returns (params, optimizer_state, loss).
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    pairs = [teacher_forcing_pair(t) for _, t in batch]
    total_tokens = sum(int((labels != PAD_ID).sum()) for _, labels in pairs)
    if total_tokens == 0:
        raise TrainingError("batch has no non-pad target tokens")

    train_mode = params.config.dropout > 0.0
    grads_total: dict[str, np.ndarray] | None = None
    loss_sum = 0.0
    for (feats, _), (dec_in, labels) in zip(batch, pairs):
        logits, cache = model_mod.forward(params, feats, dec_in, train_mode, rng)
        sample_loss, _, dlogits = label_smoothed_loss(logits, labels, config.label_smoothing)
        loss_sum += sample_loss
        grads = model_mod.backward(params, cache, dlogits / total_tokens)
        if grads_total is None:
            grads_total = grads
        else:
            for k, g in grads.items():
                grads_total[k] += g

    loss = loss_sum / total_tokens
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite training loss {loss}")

    clip_gradients(grads_total, config.clip_norm)
    step = optimizer_state["step"] + 1
    lr = learning_rate_at(step, config.learning_rate, config.warmup_updates)
    new_tensors = {}
    m_state, v_state = optimizer_state["m"], optimizer_state["v"]
    bc1 = 1.0 - ADAM_BETA1**step
    bc2 = 1.0 - ADAM_BETA2**step
    for name, w in params.tensors.items():
        g = grads_total[name]
        m = m_state[name] = ADAM_BETA1 * m_state[name] + (1.0 - ADAM_BETA1) * g
        v = v_state[name] = ADAM_BETA2 * v_state[name] + (1.0 - ADAM_BETA2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_tensors[name] = (w.astype(np.float64) - update).astype(np.float32)
    optimizer_state["step"] = step
    return Parameters(params.config, new_tensors), optimizer_state, loss


def _snapshot(params: Parameters) -> Parameters:
    return Parameters(params.config, {k: v.copy() for k, v in params.tensors.items()})


def _prepare_features(
    pose: PoseSequence, config: TrainingConfig, log: list[dict]
) -> FeatureSequence:
    feats = flatten(pose, [c.name for c in pose.components], fill=config.fill_value)
    if feats.num_frames > config.max_src_frames:
        log.append(
            {
                "event": "truncated-source",
                "frames": feats.num_frames,
                "cap": config.max_src_frames,
            }
        )
        feats = FeatureSequence(
            feats.fps,
            feats.features[: config.max_src_frames],
            feats.frame_mask[: config.max_src_frames],
        )
    return feats


def evaluate_dev(
    params: Parameters,
    dev_data: Sequence[tuple[FeatureSequence, str]],
    vocab: Vocabulary,
    max_len: int,
) -> float:
    """Greedy-decode the dev set and score smoothed corpus BLEU-4."""
    cfg = DecodeConfig(beam_size=1, max_len=max_len, alpha=1.0)
    hyps = [translate(params, vocab, feats, cfg).text for feats, _ in dev_data]
    refs = [text for _, text in dev_data]
    return bleu4(hyps, refs, smooth="exp").bleu


def train(
    train_data: Sequence[tuple[PoseSequence, str]],
    dev_data: Sequence[tuple[PoseSequence, str]],
    model_config: ModelConfig,
    config: TrainingConfig,
    vocab: Vocabulary,
):
    """Run the full training loop; returns (checkpoints, log).

    Checkpoints are snapshotted at every eval interval with their dev BLEU
    and returned sorted by dev BLEU descending (ties to the later epoch).
    Training stops at ``max_epochs`` or once ``patience`` consecutive evals
    pass without a dev improvement. When ``config.pretrained`` is set the
    run starts from that checkpoint (vocabulary hashes must match), the
    optimizer state and schedule restart, and an epoch-0 eval baselines
    the inherited model.
    """
    if vocab.size != model_config.vocab_size:
        raise TrainingError(
            f"model vocab_size {model_config.vocab_size} != vocabulary size {vocab.size}"
        )
    run_hash = vocab_hash(vocab)
    log: list[dict] = []
    t0 = time.monotonic()

    if config.pretrained is not None:
        loaded = (
            load_checkpoint(config.pretrained)
            if isinstance(config.pretrained, (bytes, bytearray))
            else load_checkpoint_file(config.pretrained)
        )
        if loaded.vocab_sha is not None and loaded.vocab_sha != run_hash:
            raise VocabMismatchError(
                "pretrained checkpoint was trained with a different vocabulary: "
                f"checkpoint vocab sha256 {loaded.vocab_sha}, current vocab "
                f"sha256 {run_hash}"
            )
        if loaded.config != model_config:
            raise TrainingError(
                f"pretrained model config {loaded.config} != requested {model_config}"
            )
        params = _snapshot(loaded.params)
    else:
        params = model_mod.init(model_config, config.seed)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    optimizer = init_optimizer(params)

    train_feats = [_prepare_features(p, config, log) for p, _ in train_data]
    train_targets = [encode(vocab, text) for _, text in train_data]
    dev_feats = [
        (_prepare_features(p, config, log), text) for p, text in dev_data
    ]
    for i, feats in enumerate(train_feats):
        if feats.dim != model_config.input_dim:
            raise TrainingError(
                f"sample {i} has feature width {feats.dim}, model expects "
                f"{model_config.input_dim}"
            )

    checkpoints: list[Checkpoint] = []
    best_dev = -math.inf
    evals_without_improvement = 0
    updates = 0

    def run_eval(epoch: int) -> float:
        dev = evaluate_dev(params, dev_feats, vocab, config.dev_max_len)
        checkpoints.append(
            Checkpoint(_snapshot(params), updates, dev, epoch, run_hash)
        )
        log.append(
            {
                "epoch": epoch,
                "update": updates,
                "dev_bleu": dev,
                "wall_time": time.monotonic() - t0,
            }
        )
        return dev

    if config.pretrained is not None:
        best_dev = run_eval(epoch=0)

    n = len(train_data)
    for epoch in range(1, config.max_epochs + 1):
        order = list(rng.permutation(n))
        order.sort(key=lambda i: train_feats[i].num_frames)  # length buckets
        batches = [
            order[i : i + config.batch_size]
            for i in range(0, n, config.batch_size)
        ]
        batch_order = rng.permutation(len(batches))
        epoch_loss = 0.0
        epoch_tokens = 0
        for bi in batch_order:
            batch = []
            for si in batches[bi]:
                feats = train_feats[si]
                if config.augmentation is not None:
                    aug = augment_mod.sample_params(config.augmentation, rng)
                    pose = augment_mod.apply(
                        train_data[si][0], aug, config.augmentation.center
                    )
                    feats = _prepare_features(pose, config, log)
                batch.append((feats, train_targets[si]))
            params, optimizer, loss = train_step(params, batch, config, optimizer, rng)
            updates += 1
            tokens = sum(len(t) + 1 for _, t in batch)
            epoch_loss += loss * tokens
            epoch_tokens += tokens
        mean_loss = epoch_loss / max(epoch_tokens, 1)
        log.append(
            {
                "epoch": epoch,
                "update": updates,
                "loss": mean_loss,
                "lr": learning_rate_at(optimizer["step"], config.learning_rate, config.warmup_updates),
                "wall_time": time.monotonic() - t0,
            }
        )
        if epoch % config.eval_every == 0:
            dev = run_eval(epoch)
            if dev > best_dev:
                best_dev = dev
                evals_without_improvement = 0
            else:
                evals_without_improvement += 1
                if evals_without_improvement >= config.patience:
                    log.append({"event": "patience-exhausted", "epoch": epoch})
                    break

    checkpoints.sort(key=lambda c: (-(c.dev_bleu if c.dev_bleu is not None else -math.inf), -c.epoch))
    return checkpoints, log


def select_best(checkpoints: Sequence[Checkpoint], n: int) -> list[Checkpoint]:
    """Top-n checkpoints by dev BLEU; score ties go to the later epoch."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scored = [c for c in checkpoints if c.dev_bleu is not None]
    if len(scored) < n:
        raise ValueError(f"need {n} scored checkpoints, have {len(scored)}")
    scored.sort(key=lambda c: (-c.dev_bleu, -c.epoch))
    return scored[:n]


def average_checkpoints(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Elementwise arithmetic mean of the checkpoints' parameter tensors.

    Values are upcast to float64, sorted per coordinate before summation
    (so the result is independent of checkpoint order, bit-exactly), and
    stored back at float32. The dev score is dropped: an averaged model
    must be re-measured.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    first = checkpoints[0]
    for c in checkpoints[1:]:
        if c.config != first.config:
            raise ValueError(f"config mismatch: {c.config} != {first.config}")
        if set(c.params.tensors) != set(first.params.tensors):
            raise ValueError("checkpoint tensor names differ")
        for name, w in c.params.tensors.items():
            if w.shape != first.params.tensors[name].shape:
                raise ValueError(f"shape mismatch for tensor {name!r}")
    n = len(checkpoints)
    mean_tensors = {}
    for name in first.params.tensors:
        stack = np.stack(
            [c.params.tensors[name].astype(np.float64) for c in checkpoints]
        )
        stack = np.sort(stack, axis=0)
        acc = np.zeros(stack.shape[1:], dtype=np.float64)
        for row in stack:
            acc += row
        mean_tensors[name] = (acc / n).astype(np.float32)
    hashes = {c.vocab_sha for c in checkpoints}
    return Checkpoint(
        params=Parameters(first.config, mean_tensors),
        update_count=max(c.update_count for c in checkpoints),
        dev_bleu=None,
        epoch=max(c.epoch for c in checkpoints),
        vocab_sha=hashes.pop() if len(hashes) == 1 else None,
    )


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize to the P2TX-CKPT v1 byte layout (deterministic)."""
    out = io.BytesIO()
    out.write(CKPT_HEADER)
    cfg = json.dumps(ckpt.config.to_dict(), sort_keys=True).encode("utf-8")
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    names = sorted(ckpt.params.tensors)
    out.write(struct.pack("<I", len(names)))
    for name in names:
        raw_name = name.encode("utf-8")
        tensor = ckpt.params.tensors[name]
        out.write(struct.pack("<H", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<B", tensor.ndim))
        out.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        out.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    meta = json.dumps(
        {
            "update_count": ckpt.update_count,
            "dev_bleu": ckpt.dev_bleu,
            "epoch": ckpt.epoch,
            "vocab_sha": ckpt.vocab_sha,
        },
        sort_keys=True,
    ).encode("utf-8")
    out.write(struct.pack("<I", len(meta)))
    out.write(meta)
    return out.getvalue()


def load_checkpoint(data: bytes) -> Checkpoint:
    """Parse a checkpoint byte stream; shapes are validated against config."""
    if not data.startswith(CKPT_HEADER):
        raise TrainingError("not a P2TX-CKPT v1 checkpoint")
    pos = len(CKPT_HEADER)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TrainingError("truncated checkpoint")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (cfg_len,) = struct.unpack("<I", take(4))
    config = ModelConfig.from_dict(json.loads(take(cfg_len)))
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        values = np.frombuffer(take(4 * count), dtype="<f4")
        tensors[name] = values.reshape(shape).copy()
    expected = model_mod.tensor_shapes(config)
    if set(tensors) != set(expected):
        raise TrainingError("checkpoint tensor names do not match its config")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise TrainingError(
                f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}"
            )
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len))
    if pos != len(data):
        raise TrainingError("trailing bytes after checkpoint payload")
    return Checkpoint(
        params=Parameters(config, tensors),
        update_count=int(meta["update_count"]),
        dev_bleu=meta.get("dev_bleu"),
        epoch=int(meta.get("epoch", 0)),
        vocab_sha=meta.get("vocab_sha"),
    )


def load_checkpoint_file(path) -> Checkpoint:
    with open(path, "rb") as f:
        return load_checkpoint(f.read())


def save_checkpoint_file(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as f:
        f.write(save_checkpoint(ckpt))
