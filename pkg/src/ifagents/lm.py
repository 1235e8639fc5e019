"""Masked-language-model pretraining and the frozen encoding service."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import corpus as C
from . import nn
from .nn import autodiff as ad


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 3
    batch_size: int = 32
    mask_rate: float = 0.15
    max_len: int = 64
    lr: float = 1e-3
    seed: int = 0
    layers: int = 2
    dim: int = 32
    heads: int = 4
    ff_dim: int = 64
    vocab_size: int = 200

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "max_len", "lr", "layers", "dim", "heads", "ff_dim", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.mask_rate <= 1:
            raise ValueError("mask_rate must be in (0, 1]")

    def encoder_config(self, vocab_size: int) -> nn.EncoderConfig:
        return nn.EncoderConfig(vocab_size=vocab_size, dim=self.dim, heads=self.heads,
                                layers=self.layers, max_len=self.max_len, ff_dim=self.ff_dim)


class FrozenEncoder:
    """Read-only snapshot of a pretrained encoder.

    Parameter arrays are marked non-writeable and the fingerprint is taken at
    construction; ``verify()`` recomputes it.
    """

    def __init__(self, params: dict, vocab: C.Vocab, config: nn.EncoderConfig):
        self.params = {}
        for k, v in params.items():
            arr = np.array(v, dtype=np.float64, copy=True)
            arr.flags.writeable = False
            self.params[k] = arr
        self.vocab = vocab
        self.config = config
        self.fingerprint = nn.fingerprint(self.params)
        self._const = ad.constant(self.params)
        self._cache: dict = {}

    @property
    def dim(self) -> int:
        return self.config.dim

    def verify(self) -> bool:
        return nn.fingerprint(self.params) == self.fingerprint

    def encode_ids(self, text: str) -> tuple:
        ids = C.tokenize(text, self.vocab).ids
        keep = self.config.max_len - 1
        if len(ids) > keep:
            ids = ids[len(ids) - keep:]
        return (C.CLS_ID,) + tuple(ids)

    def encode_text(self, text: str) -> np.ndarray:
        out = self._cache.get(text)
        if out is None:
            out = nn.attn_encode(self._const, self.config, np.array(self.encode_ids(text))).data
            out.flags.writeable = False
            self._cache[text] = out
        return out

    def save(self, path) -> None:
        path = Path(path)
        vocab_file = path.name + ".vocab"
        self.vocab.save(path.parent / vocab_file)
        nn.save_checkpoint(path, self.params, {
            "kind": "encoder",
            "config": asdict(self.config),
            "vocab_file": vocab_file,
            "fingerprint": self.fingerprint,
        })

    @classmethod
    def load(cls, path) -> "FrozenEncoder":
        path = Path(path)
        params, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "encoder":
            raise ValueError(f"{path} is not an encoder checkpoint")
        vocab = C.Vocab.load(path.parent / meta["vocab_file"])
        enc = cls(params, vocab, nn.EncoderConfig(**meta["config"]))
        if enc.fingerprint != meta["fingerprint"]:
            raise ValueError(f"{path}: fingerprint mismatch")
        return enc


def encode_text(enc: FrozenEncoder, text: str) -> np.ndarray:
    return enc.encode_text(text)


def mlm_loss(params: dict, config: nn.EncoderConfig, batch: C.MaskedBatch):
    """Mean cross-entropy of the original token at every masked position."""
    if not batch.targets:
        return ad.Tensor(0.0)
    rows = np.array([t[0] for t in batch.targets])
    cols = np.array([t[1] for t in batch.targets])
    gold = np.array([t[2] for t in batch.targets])
    encoded = nn.attn_encode(params, config, batch.input_ids, batch.pad_mask)
    return nn.cross_entropy(nn.mlm_logits(params, encoded, (rows, cols)), gold)


def _sequences(corpus: C.Corpus, vocab: C.Vocab, max_len: int) -> list:
    return [C.encode_pair(C.tokenize(o, vocab), C.tokenize(a, vocab), max_len) for o, a in corpus.pairs]


def _masked_batches(seqs, order, batch_size, rate, rng):
    for start in range(0, len(order), batch_size):
        rows = []
        for i in order[start:start + batch_size]:
            if C.maskable_positions(seqs[i].ids):
                rows.append(C.mask_sequence(seqs[i], rate, rng))
        if rows:
            yield C.collate(rows)


def pretrain(corpus: C.Corpus, config: PretrainConfig, vocab: Optional[C.Vocab] = None):
    """Train the encoder with MLM on ``corpus``.

    Returns ``(FrozenEncoder, per-batch loss history)``.
    """
    if not len(corpus):
        raise ValueError("cannot pretrain on an empty corpus")
    vocab = vocab or C.build_vocab(corpus, config.vocab_size)
    cfg = config.encoder_config(len(vocab))
    params = nn.init_params(nn.encoder_shapes(cfg), config.seed)
    rng = np.random.default_rng([config.seed, 1])
    seqs = _sequences(corpus, vocab, config.max_len)
    opt = nn.AdamState.zeros_like(params)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(seqs))
        for batch in _masked_batches(seqs, order, config.batch_size, config.mask_rate, rng):
            loss, grads = ad.value_and_grad(mlm_loss, params, cfg, batch)
            params, opt = nn.adam_step(params, grads, opt, config.lr)
            history.append(loss.item())
    return FrozenEncoder(params, vocab, cfg), history


def heldout_masked_ce(enc: FrozenEncoder, heldout: C.Corpus, config: PretrainConfig,
                      seed: int = 1234) -> float:
    """Mean masked-token cross-entropy on ``heldout`` under a fixed masking."""
    if not len(heldout):
        raise ValueError("heldout corpus is empty")
    rng = np.random.default_rng(seed)
    seqs = _sequences(heldout, enc.vocab, enc.config.max_len)
    total, count = 0.0, 0
    for batch in _masked_batches(seqs, np.arange(len(seqs)), config.batch_size, config.mask_rate, rng):
        n = len(batch.targets)
        total += mlm_loss(enc._const, enc.config, batch).item() * n
        count += n
    return total / count
