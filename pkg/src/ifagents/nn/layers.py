"""Parameter containers, GRU and self-attention encoder forward passes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatch, SeqTooLong
from . import autodiff as ad

INIT_RANGE = 0.08


def init_params(shapes: dict, seed: int) -> dict:
    """Initialise a ParamContainer from ``{name: (shape, kind)}``.

    ``kind`` is "weight" (uniform in +/-0.08), "bias" (zeros) or "scale"
    (ones, for layer-norm gains). Entries are drawn in insertion order from one
    seeded stream, so equal seeds give bitwise-equal containers.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, kind) in shapes.items():
        if kind == "weight":
            params[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
        elif kind == "bias":
            params[name] = np.zeros(shape)
        elif kind == "scale":
            params[name] = np.ones(shape)
        else:
            raise ValueError(f"unknown parameter kind {kind!r}")
    return params


def gru_shapes(prefix: str, input_dim: int, hidden: int, groups: int = 0) -> dict:
    lead = (groups,) if groups else ()
    return {
        f"{prefix}.wx": (lead + (input_dim, 3 * hidden), "weight"),
        f"{prefix}.wh": (lead + (hidden, 3 * hidden), "weight"),
        f"{prefix}.b": (lead + (3 * hidden,), "bias"),
    }


def gru_forward(params: dict, inputs, prefix: str = "gru", lengths=None):
    """Run a GRU over a ``(T, E)`` sequence or a ``(B, T, E)`` padded batch.

    Returns ``(final_hidden, all_hiddens)`` as Tensors. Inputs may be arrays or
    Tensors; params are Tensors (use ``autodiff.constant`` for plain arrays).
    """
    wx, wh, b = params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"]
    x = ad.as_tensor(inputs)
    if x.data.ndim not in (2, 3):
        raise DimMismatch("GRU input must be (T, E) or (B, T, E)")
    single = x.data.ndim == 2
    if x.shape[-1] != wx.shape[-2]:
        raise DimMismatch(f"GRU expects input dim {wx.shape[-2]}, got {x.shape[-1]}")
    hidden = wh.shape[-2]
    if x.shape[-2] == 0:
        batch = () if single else (x.shape[0],)
        zero = ad.Tensor(np.zeros(batch + (hidden,)))
        return zero, ad.Tensor(np.zeros(batch + (0, hidden)))
    x4 = ad.reshape(x, (1, 1) + x.shape if single else (1,) + x.shape)
    lens = None if lengths is None else np.asarray(lengths)[None]
    if lens is not None and single:
        lens = lens.reshape(1, 1)
    out = ad.gru(x4, ad.reshape(wx, (1,) + wx.shape), ad.reshape(wh, (1,) + wh.shape),
                 ad.reshape(b, (1,) + b.shape), lens)
    out = ad.reshape(out, out.shape[2:] if single else out.shape[1:])
    return out[..., -1, :], out


def stacked_gru(params: dict, prefix: str, inputs, lengths):
    """Final hiddens of G independent GRUs held as stacked weights.

    ``inputs`` is (G, B, T, E) and ``lengths`` (G, B); returns (G, B, H).
    """
    hs = ad.gru(inputs, params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"], lengths)
    return hs[:, :, -1, :]


# --------------------------------------------------------------------------
# self-attention encoder


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 32
    heads: int = 4
    layers: int = 2
    max_len: int = 64
    ff_dim: int = 64

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("encoder dim must be divisible by head count")


def encoder_shapes(cfg: EncoderConfig) -> dict:
    d = cfg.dim
    shapes = {
        "tok_emb": ((cfg.vocab_size, d), "weight"),
        "pos_emb": ((cfg.max_len, d), "weight"),
    }
    for i in range(cfg.layers):
        p = f"layer{i}"
        shapes.update({
            f"{p}.wq": ((d, d), "weight"),
            f"{p}.wk": ((d, d), "weight"),
            f"{p}.wv": ((d, d), "weight"),
            f"{p}.wo": ((d, d), "weight"),
            f"{p}.ln1.scale": ((d,), "scale"),
            f"{p}.ln1.shift": ((d,), "bias"),
            f"{p}.ff1.w": ((d, cfg.ff_dim), "weight"),
            f"{p}.ff1.b": ((cfg.ff_dim,), "bias"),
            f"{p}.ff2.w": ((cfg.ff_dim, d), "weight"),
            f"{p}.ff2.b": ((d,), "bias"),
            f"{p}.ln2.scale": ((d,), "scale"),
            f"{p}.ln2.shift": ((d,), "bias"),
        })
    shapes["mlm_out"] = ((d, cfg.vocab_size), "weight")
    return shapes


def attn_encode(params: dict, cfg: EncoderConfig, ids, pad_mask=None):
    """Contextual token vectors for ``ids`` (T,) or (B, T).

    Post-norm transformer layers: multi-head self-attention scaled by
    1/sqrt(d_head) with padded keys excluded, residual, layer norm, ReLU
    feed-forward, residual, layer norm.
    """
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
        pad_mask = None if pad_mask is None else np.asarray(pad_mask)[None]
    B, T = ids.shape
    if T > cfg.max_len:
        raise SeqTooLong(f"sequence of {T} tokens exceeds max_len {cfg.max_len}")
    h, d = cfg.heads, cfg.dim
    dh = d // h
    x = params["tok_emb"][ids] + params["pos_emb"][np.arange(T)]
    if pad_mask is None:
        bias = np.zeros((B, 1, 1, T))
    else:
        bias = np.where(np.asarray(pad_mask, dtype=bool), -1e9, 0.0)[:, None, None, :]
    scale = 1.0 / math.sqrt(dh)
    for i in range(cfg.layers):
        p = f"layer{i}."

        def heads_of(w):
            return ad.transpose(ad.reshape(x @ params[p + w], (B, T, h, dh)), (0, 2, 1, 3))

        q, k, v = heads_of("wq"), heads_of("wk"), heads_of("wv")
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * scale + bias
        att = ad.matmul(ad.softmax(scores, axis=-1), v)
        att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (B, T, d)) @ params[p + "wo"]
        x = ad.layer_norm(x + att, params[p + "ln1.scale"], params[p + "ln1.shift"])
        ff = ad.relu(x @ params[p + "ff1.w"] + params[p + "ff1.b"]) @ params[p + "ff2.w"] + params[p + "ff2.b"]
        x = ad.layer_norm(x + ff, params[p + "ln2.scale"], params[p + "ln2.shift"])
    return x[0] if single else x


def mlm_logits(params: dict, encoded, positions):
    """Vocabulary logits at ``positions`` of ``encoded``.

    ``positions`` indexes rows of a (T, d) sequence, or is a ``(rows, cols)``
    pair of index arrays into a (B, T, d) batch.
    """
    picked = ad.getitem(encoded, tuple(positions) if isinstance(positions, tuple) else np.asarray(positions))
    return picked @ params["mlm_out"]


def cross_entropy(logits, target):
    """``-log softmax(logits)[target]``; batched when logits are (N, V)."""
    logits = ad.as_tensor(logits)
    if logits.data.ndim == 1:
        return ad.cross_entropy(ad.reshape(logits, (1, -1)), [target])
    return ad.cross_entropy(logits, target)
