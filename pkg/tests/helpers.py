"""Shared test utilities: tiny model builders and the finite-difference oracle."""

from fractions import Fraction

import numpy as np

from pose2text.model import ModelConfig, Parameters, backward, forward, init
from pose2text.pose import Component, PoseSequence
from pose2text.trainer import label_smoothed_loss, teacher_forcing_pair

TINY_CONFIG = ModelConfig(
    layers=1, heads=2, ffn_dim=16, embed_dim=8, input_dim=6, vocab_size=11,
    max_positions=64, dropout=0.0,
)


def tiny_setup(seed=0, t_src=4, tgt=(4, 7, 9)):
    params = init(TINY_CONFIG, seed)
    rng = np.random.default_rng(seed + 1)
    src = rng.random((t_src, TINY_CONFIG.input_dim))
    dec_in, labels = teacher_forcing_pair(list(tgt))
    return params, src, dec_in, labels


def loss_at(params: Parameters, src, dec_in, labels, smoothing=0.0) -> float:
    logits, _ = forward(params, src, dec_in)
    loss_sum, count, _ = label_smoothed_loss(logits, labels, smoothing)
    return loss_sum / count


def finite_difference_check(params, src, dec_in, labels, n_samples=100, h=1e-3, seed=99):
    """Max relative error between analytic and central-difference gradients.

    The oracle evaluates the scalar loss at float64-perturbed parameter
    points; it shares no code with the backward pass.
    """
    logits, cache = forward(params, src, dec_in)
    loss_sum, count, dlogits = label_smoothed_loss(logits, labels, 0.0)
    grads = backward(params, cache, dlogits / count)

    rng = np.random.default_rng(seed)
    names = sorted(params.tensors)
    worst = 0.0
    for _ in range(n_samples):
        name = names[rng.integers(len(names))]
        base_tensor = params.tensors[name].astype(np.float64)
        idx = tuple(int(rng.integers(s)) for s in base_tensor.shape)

        def perturbed(delta):
            tensors = dict(params.tensors)
            bumped = base_tensor.copy()
            bumped[idx] += delta
            tensors[name] = bumped
            return Parameters(params.config, tensors)

        fd = (
            loss_at(perturbed(+h), src, dec_in, labels)
            - loss_at(perturbed(-h), src, dec_in, labels)
        ) / (2.0 * h)
        analytic = float(grads[name][idx])
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
        worst = max(worst, rel)
    return worst


def constant_pose(t=4, k=2, c=3, fps=25, value=0.5):
    frames = np.full((t, k, c), value, dtype=np.float32)
    conf = np.ones((t, k), dtype=np.float32)
    return PoseSequence(Fraction(fps), frames, conf, (Component("body", 0, k),))
