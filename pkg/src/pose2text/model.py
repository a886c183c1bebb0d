"""Transformer encoder-decoder over pose features, with manual backprop.

The encoder consumes continuous per-frame feature rows (input projection,
sinusoidal positions, pre-norm self-attention/FFN layers); the decoder
consumes subword token ids (scaled tied embeddings, causal self-attention,
cross-attention) and projects back to vocabulary logits through the
transposed embedding matrix. Forward and reverse-mode gradients are
implemented directly on numpy arrays; no autodiff framework is involved,
and the backward pass is validated against central finite differences.

Parameters are held and serialized as float32; all computation runs in
float64 so analytic gradients can meet a 1e-4 finite-difference tolerance.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

LAYERNORM_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; tensor shapes derive from this alone."""

    layers: int
    heads: int
    ffn_dim: int
    embed_dim: int
    input_dim: int
    vocab_size: int
    max_positions: int = 4096
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("layers", "heads", "ffn_dim", "embed_dim", "input_dim", "vocab_size", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "embed_dim": self.embed_dim,
            "input_dim": self.input_dim,
            "vocab_size": self.vocab_size,
            "max_positions": self.max_positions,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class Parameters:
    """Named float32 weight tensors plus the config they were shaped by."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map, in deterministic construction order."""
    d, f = config.embed_dim, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "src_proj.w": (config.input_dim, d),
        "src_proj.b": (d,),
        "tok_embed": (config.vocab_size, d),
    }

    def norm(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def attn(prefix):
        for name in _attn_names(prefix):
            shapes[name] = (d, d) if name.rsplit(".", 1)[1].startswith("w") else (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(config.layers):
        norm(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        norm(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ffn")
    norm("enc.ln")
    for i in range(config.layers):
        norm(f"dec.{i}.ln1")
        attn(f"dec.{i}.self_attn")
        norm(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross_attn")
        norm(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ffn")
    norm("dec.ln")
    return shapes


def param_count(config: ModelConfig) -> int:
    """Exact scalar count of all tensors, as a closed form.

    d(D + V + 5) covers input projection (Dd + d), tied embeddings (Vd),
    and the two final norms (4d); each encoder layer holds 4d^2 + 2df +
    9d + f scalars and each decoder layer 8d^2 + 2df + 15d + f.
    """
    d, f, l = config.embed_dim, config.ffn_dim, config.layers
    return d * (config.input_dim + config.vocab_size + 5) + l * (
        12 * d * d + 4 * d * f + 24 * d + 2 * f
    )


def init(config: ModelConfig, seed: int) -> Parameters:
    """Deterministic scaled-uniform initialization.

    Weight matrices (embedding included) draw from U(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); biases and norm biases start at 0,
    norm gains at 1.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "tok_embed" or leaf.startswith("w"):
            fan_in, fan_out = shape[0], shape[1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
        elif leaf == "g":
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return Parameters(config=config, tensors=tensors)


@functools.lru_cache(maxsize=4)
def _position_table(max_positions: int, dim: int) -> np.ndarray:
    """Sinusoidal position encodings, float64, shape (max_positions, dim)."""
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    half = np.arange(0, dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, half / dim)
    table = np.zeros((max_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : table[:, 1::2].shape[1]])
    table.flags.writeable = False
    return table


def _as_f64(params: Parameters) -> dict[str, np.ndarray]:
    return {k: v.astype(np.float64) for k, v in params.tensors.items()}


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout_fwd(x, p, train, rng):
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng state")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def _dropout_bwd(dy, mask):
    return dy if mask is None else dy * mask


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(cache, dy):
    xhat, inv, g = cache
    q = dy * g
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dx = inv * (
        q
        - q.mean(axis=-1, keepdims=True)
        - xhat * (q * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _attention_fwd(p, prefix, xq, xkv, heads, causal):
    tq, d = xq.shape
    tk = xkv.shape[0]
    dh = d // heads
    q = xq @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
    k = xkv @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]
    v = xkv @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]
    qh = q.reshape(tq, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(tk, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(tk, heads, dh).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(dh)
    if causal:
        scores = np.where(np.triu(np.ones((tq, tk), dtype=bool), k=1), -np.inf, scores)
    attn = _softmax_rows(scores)
    ctx = attn @ vh
    concat = ctx.transpose(1, 0, 2).reshape(tq, d)
    out = concat @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    cache = (prefix, heads, xq, xkv, qh, kh, vh, attn, concat)
    return out, cache


def _attention_bwd(p, cache, dout, grads):
    prefix, heads, xq, xkv, qh, kh, vh, attn, concat = cache
    tq, d = xq.shape
    dh = d // heads
    grads[f"{prefix}.wo"] += concat.T @ dout
    grads[f"{prefix}.bo"] += dout.sum(axis=0)
    dconcat = dout @ p[f"{prefix}.wo"].T
    dctx = dconcat.reshape(tq, heads, dh).transpose(1, 0, 2)
    dattn = dctx @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ dctx
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    scale = 1.0 / math.sqrt(dh)
    dqh = ds @ kh * scale
    dkh = ds.transpose(0, 2, 1) @ qh * scale
    dq = dqh.transpose(1, 0, 2).reshape(tq, d)
    dk = dkh.transpose(1, 0, 2).reshape(-1, d)
    dv = dvh.transpose(1, 0, 2).reshape(-1, d)
    grads[f"{prefix}.wq"] += xq.T @ dq
    grads[f"{prefix}.bq"] += dq.sum(axis=0)
    grads[f"{prefix}.wk"] += xkv.T @ dk
    grads[f"{prefix}.bk"] += dk.sum(axis=0)
    grads[f"{prefix}.wv"] += xkv.T @ dv
    grads[f"{prefix}.bv"] += dv.sum(axis=0)
    dxq = dq @ p[f"{prefix}.wq"].T
    dxkv = dk @ p[f"{prefix}.wk"].T + dv @ p[f"{prefix}.wv"].T
    return dxq, dxkv


def _ffn_fwd(p, prefix, x):
    h1 = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    r = np.maximum(h1, 0.0)
    out = r @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    return out, (prefix, x, h1, r)


def _ffn_bwd(p, cache, dout, grads):
    prefix, x, h1, r = cache
    grads[f"{prefix}.w2"] += r.T @ dout
    grads[f"{prefix}.b2"] += dout.sum(axis=0)
    dr = dout @ p[f"{prefix}.w2"].T
    dh1 = dr * (h1 > 0.0)
    grads[f"{prefix}.w1"] += x.T @ dh1
    grads[f"{prefix}.b1"] += dh1.sum(axis=0)
    return dh1 @ p[f"{prefix}.w1"].T


def _encoder_fwd(p, cfg, feats, train, rng):
    t = feats.shape[0]
    pe = _position_table(cfg.max_positions, cfg.embed_dim)[:t]
    h = feats @ p["src_proj.w"] + p["src_proj.b"] + pe
    h, in_mask = _dropout_fwd(h, cfg.dropout, train, rng)
    layers = []
    for i in range(cfg.layers):
        a, ln1 = _layernorm_fwd(h, p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"])
        s, attn = _attention_fwd(p, f"enc.{i}.attn", a, a, cfg.heads, causal=False)
        s, m1 = _dropout_fwd(s, cfg.dropout, train, rng)
        h = h + s
        a, ln2 = _layernorm_fwd(h, p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"])
        f, ffn = _ffn_fwd(p, f"enc.{i}.ffn", a)
        f, m2 = _dropout_fwd(f, cfg.dropout, train, rng)
        h = h + f
        layers.append((ln1, attn, m1, ln2, ffn, m2))
    out, ln_f = _layernorm_fwd(h, p["enc.ln.g"], p["enc.ln.b"])
    cache = {"feats": feats, "in_mask": in_mask, "layers": layers, "ln_f": ln_f}
    return out, cache


def _encoder_bwd(p, cfg, cache, dout, grads):
    dh, dg, db = _layernorm_bwd(cache["ln_f"], dout)
    grads["enc.ln.g"] += dg
    grads["enc.ln.b"] += db
    for i in reversed(range(cfg.layers)):
        ln1, attn, m1, ln2, ffn, m2 = cache["layers"][i]
        df = _dropout_bwd(dh, m2)
        da = _ffn_bwd(p, ffn, df, grads)
        dx, dg, db = _layernorm_bwd(ln2, da)
        grads[f"enc.{i}.ln2.g"] += dg
        grads[f"enc.{i}.ln2.b"] += db
        dh = dh + dx
        ds = _dropout_bwd(dh, m1)
        dxq, dxkv = _attention_bwd(p, attn, ds, grads)
        dx, dg, db = _layernorm_bwd(ln1, dxq + dxkv)
        grads[f"enc.{i}.ln1.g"] += dg
        grads[f"enc.{i}.ln1.b"] += db
        dh = dh + dx
    dh = _dropout_bwd(dh, cache["in_mask"])
    grads["src_proj.w"] += cache["feats"].T @ dh
    grads["src_proj.b"] += dh.sum(axis=0)


def _decoder_fwd(p, cfg, ids, enc_out, train, rng):
    u = len(ids)
    pe = _position_table(cfg.max_positions, cfg.embed_dim)[:u]
    scale = math.sqrt(cfg.embed_dim)
    h = p["tok_embed"][ids] * scale + pe
    h, in_mask = _dropout_fwd(h, cfg.dropout, train, rng)
    layers = []
    for i in range(cfg.layers):
        a, ln1 = _layernorm_fwd(h, p[f"dec.{i}.ln1.g"], p[f"dec.{i}.ln1.b"])
        s, self_attn = _attention_fwd(p, f"dec.{i}.self_attn", a, a, cfg.heads, causal=True)
        s, m1 = _dropout_fwd(s, cfg.dropout, train, rng)
        h = h + s
        a, ln2 = _layernorm_fwd(h, p[f"dec.{i}.ln2.g"], p[f"dec.{i}.ln2.b"])
        c, cross = _attention_fwd(p, f"dec.{i}.cross_attn", a, enc_out, cfg.heads, causal=False)
        c, m2 = _dropout_fwd(c, cfg.dropout, train, rng)
        h = h + c
        a, ln3 = _layernorm_fwd(h, p[f"dec.{i}.ln3.g"], p[f"dec.{i}.ln3.b"])
        f, ffn = _ffn_fwd(p, f"dec.{i}.ffn", a)
        f, m3 = _dropout_fwd(f, cfg.dropout, train, rng)
        h = h + f
        layers.append((ln1, self_attn, m1, ln2, cross, m2, ln3, ffn, m3))
    out, ln_f = _layernorm_fwd(h, p["dec.ln.g"], p["dec.ln.b"])
    logits = out @ p["tok_embed"].T
    cache = {"ids": ids, "in_mask": in_mask, "layers": layers, "ln_f": ln_f, "dec_out": out}
    return logits, cache


def _decoder_bwd(p, cfg, cache, dlogits, grads):
    """Returns the gradient flowing back into the encoder output."""
    grads["tok_embed"] += dlogits.T @ cache["dec_out"]
    dh = dlogits @ p["tok_embed"]
    dh, dg, db = _chain_ln(cache["ln_f"], dh, grads, "dec.ln")
    denc = None
    for i in reversed(range(cfg.layers)):
        ln1, self_attn, m1, ln2, cross, m2, ln3, ffn, m3 = cache["layers"][i]
        df = _dropout_bwd(dh, m3)
        da = _ffn_bwd(p, ffn, df, grads)
        dx, dg, db = _layernorm_bwd(ln3, da)
        grads[f"dec.{i}.ln3.g"] += dg
        grads[f"dec.{i}.ln3.b"] += db
        dh = dh + dx
        dc = _dropout_bwd(dh, m2)
        dxq, dxkv = _attention_bwd(p, cross, dc, grads)
        denc = dxkv if denc is None else denc + dxkv
        dx, dg, db = _layernorm_bwd(ln2, dxq)
        grads[f"dec.{i}.ln2.g"] += dg
        grads[f"dec.{i}.ln2.b"] += db
        dh = dh + dx
        ds = _dropout_bwd(dh, m1)
        dxq, dxkv = _attention_bwd(p, self_attn, ds, grads)
        dx, dg, db = _layernorm_bwd(ln1, dxq + dxkv)
        grads[f"dec.{i}.ln1.g"] += dg
        grads[f"dec.{i}.ln1.b"] += db
        dh = dh + dx
    dh = _dropout_bwd(dh, cache["in_mask"])
    scale = math.sqrt(cfg.embed_dim)
    np.add.at(grads["tok_embed"], cache["ids"], dh * scale)
    return denc


def _chain_ln(cache, dy, grads, prefix):
    dx, dg, db = _layernorm_bwd(cache, dy)
    grads[f"{prefix}.g"] += dg
    grads[f"{prefix}.b"] += db
    return dx, dg, db


def _check_inputs(cfg: ModelConfig, feats: np.ndarray, ids: np.ndarray) -> None:
    if feats.ndim != 2 or feats.shape[1] != cfg.input_dim:
        raise ValueError(
            f"source features must be T x {cfg.input_dim}, got shape {feats.shape}"
        )
    if feats.shape[0] > cfg.max_positions or len(ids) > cfg.max_positions:
        raise ValueError(
            f"sequence exceeds max_positions {cfg.max_positions}: "
            f"src {feats.shape[0]}, tgt {len(ids)}"
        )
    if len(ids) < 1:
        raise ValueError("decoder input must hold at least one token")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token ids must be in [0, {cfg.vocab_size})")


def _coerce(src, tgt_in):
    feats = np.asarray(getattr(src, "features", src), dtype=np.float64)
    ids = np.asarray(list(tgt_in), dtype=np.int64)
    return feats, ids


def forward(params: Parameters, src, tgt_in, train_mode: bool = False, rng_state=None):
    """Run the full encoder-decoder; returns (logits, cache).

    ``src`` is a FeatureSequence (or T x D array), ``tgt_in`` a token id
    sequence. Logits are |tgt_in| x V in float64. Dropout fires only when
    ``train_mode`` is set, drawing masks from ``rng_state``; evaluation
    calls are fully deterministic. The cache feeds :func:`backward`.
    """
    cfg = params.config
    feats, ids = _coerce(src, tgt_in)
    _check_inputs(cfg, feats, ids)
    p = _as_f64(params)
    enc_out, enc_cache = _encoder_fwd(p, cfg, feats, train_mode, rng_state)
    logits, dec_cache = _decoder_fwd(p, cfg, ids, enc_out, train_mode, rng_state)
    cache = {"cfg": cfg, "p": p, "enc": enc_cache, "dec": dec_cache}
    return logits, cache


def backward(params: Parameters, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter tensor.

    ``dlogits`` is the gradient of the scalar loss with respect to the
    logits returned by the matching :func:`forward` call.
    """
    cfg = cache["cfg"]
    if cfg != params.config:
        raise ValueError("cache was produced under a different model config")
    p = cache["p"]
    grads = {
        name: np.zeros(shape, dtype=np.float64)
        for name, shape in tensor_shapes(cfg).items()
    }
    dlogits = np.asarray(dlogits, dtype=np.float64)
    denc = _decoder_bwd(p, cfg, cache["dec"], dlogits, grads)
    _encoder_bwd(p, cfg, cache["enc"], denc, grads)
    return grads


def encode_features(params: Parameters, src) -> np.ndarray:
    """Encoder-only forward for decoding loops (no dropout, no cache kept)."""
    cfg = params.config
    feats = np.asarray(getattr(src, "features", src), dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cfg.input_dim:
        raise ValueError(
            f"source features must be T x {cfg.input_dim}, got shape {feats.shape}"
        )
    if feats.shape[0] > cfg.max_positions:
        raise ValueError(f"sequence exceeds max_positions {cfg.max_positions}")
    enc_out, _ = _encoder_fwd(_as_f64(params), cfg, feats, False, None)
    return enc_out


def decode_logits(params: Parameters, enc_out: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    """Decoder-only forward over a precomputed encoder output."""
    cfg = params.config
    ids = np.asarray(list(ids), dtype=np.int64)
    if len(ids) < 1 or len(ids) > cfg.max_positions:
        raise ValueError("decoder input length out of range")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token ids must be in [0, {cfg.vocab_size})")
    logits, _ = _decoder_fwd(_as_f64(params), cfg, ids, enc_out, False, None)
    return logits
