"""Gameplay transcript corpora, the word-level tokenizer, and MLM masking."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import env as E
from .errors import NoMaskableError, TranscriptFormatError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

_TOKEN_RE = re.compile(r"[.,!?;:'\"()]|[^\s.,!?;:'\"()]+")

DATA_DIR = Path(__file__).parent / "data"
BUNDLED_CORPUS = DATA_DIR / "transcripts.tsv"
# games the bundled corpus is generated from; anything else stays unseen by the encoder
PRETRAIN_GAMES = ("tworoom", "treasure")


def split_words(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(split_words(text))


@dataclass(frozen=True)
class Vocab:
    tokens: tuple

    def __post_init__(self):
        if tuple(self.tokens[:5]) != SPECIALS:
            raise ValueError("vocab must start with the five special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocab")
        object.__setattr__(self, "index", {tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(tuple(Path(path).read_text(encoding="utf-8").splitlines()))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    source_text: str = ""

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class MaskedBatch:
    input_ids: np.ndarray  # (batch, length) int
    targets: list  # (row, position, original id)
    pad_mask: np.ndarray  # (batch, length) bool, True at padding


@dataclass(frozen=True)
class Corpus:
    pairs: tuple

    def __len__(self) -> int:
        return len(self.pairs)


def ingest_transcripts(data) -> Corpus:
    """Parse ``observation<TAB>action`` lines into a normalised corpus."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    pairs = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise TranscriptFormatError(lineno)
        obs, act = normalize(parts[0]), normalize(parts[1])
        if not obs or not act:
            raise TranscriptFormatError(lineno, "empty observation or action")
        pairs.append((obs, act))
    return Corpus(tuple(pairs))


def load_corpus(path=BUNDLED_CORPUS) -> Corpus:
    return ingest_transcripts(Path(path).read_bytes())


def split_heldout(corpus: Corpus, frac: float = 0.1) -> tuple:
    """Fixed split: the last ``frac`` of pairs are held out."""
    n_held = max(1, int(round(len(corpus) * frac)))
    return Corpus(corpus.pairs[:-n_held]), Corpus(corpus.pairs[-n_held:])


def build_vocab(corpus: Corpus, max_size: int) -> Vocab:
    if max_size < 6:
        raise ValueError("max_size must be at least 6")
    counts = Counter()
    for obs, act in corpus.pairs:
        counts.update(split_words(obs))
        counts.update(split_words(act))
    for tok in SPECIALS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: max_size - len(SPECIALS)]]
    return Vocab(SPECIALS + tuple(words))


def tokenize(text: str, vocab: Vocab) -> TokenSequence:
    return TokenSequence(tuple(vocab.lookup(w) for w in split_words(text)), text)


def encode_pair(obs: TokenSequence, act: TokenSequence, max_len: int) -> TokenSequence:
    """``[CLS] obs [SEP] act``; the observation loses tokens from its left,
    the action from its right."""
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    budget = max_len - 2
    act_ids = act.ids[:budget]
    room = budget - len(act_ids)
    obs_ids = obs.ids[len(obs.ids) - room:] if room < len(obs.ids) else obs.ids
    if room == 0:
        obs_ids = ()
    ids = (CLS_ID,) + tuple(obs_ids) + (SEP_ID,) + tuple(act_ids)
    return TokenSequence(ids, f"{obs.source_text} [SEP] {act.source_text}")


def maskable_positions(ids: Sequence[int]) -> list:
    return [i for i, t in enumerate(ids) if t >= len(SPECIALS)]


def mask_sequence(seq: TokenSequence, rate: float, rng: np.random.Generator) -> MaskedBatch:
    if not 0 < rate <= 1:
        raise ValueError("mask rate must be in (0, 1]")
    cand = maskable_positions(seq.ids)
    if not cand:
        raise NoMaskableError("sequence contains only special tokens")
    # tolerance keeps e.g. 0.07 * 100 from rounding up to 8
    k = min(len(cand), math.ceil(rate * len(cand) - 1e-9))
    picked = sorted(rng.choice(len(cand), size=k, replace=False).tolist())
    ids = np.array(seq.ids, dtype=np.int64)
    targets = []
    for j in picked:
        pos = cand[j]
        targets.append((0, pos, int(ids[pos])))
        ids[pos] = MASK_ID
    return MaskedBatch(ids[None, :], targets, np.zeros((1, len(ids)), dtype=bool))


def collate(rows: Sequence[MaskedBatch]) -> MaskedBatch:
    """Stack single-row batches, right-padding with [PAD]."""
    length = max(r.input_ids.shape[1] for r in rows)
    ids = np.full((len(rows), length), PAD_ID, dtype=np.int64)
    pad = np.ones((len(rows), length), dtype=bool)
    targets = []
    for b, r in enumerate(rows):
        n = r.input_ids.shape[1]
        ids[b, :n] = r.input_ids[0]
        pad[b, :n] = r.pad_mask[0]
        targets.extend((b, pos, orig) for _, pos, orig in r.targets)
    return MaskedBatch(ids, targets, pad)


# --------------------------------------------------------------------------
# Synthetic transcripts


def generate_corpus(games: Iterable, n_pairs: int = 5000, seed: int = 0,
                    walkthroughs: Optional[dict] = None, optimal_fraction: float = 0.2,
                    invalid_fraction: float = 0.1, max_walk: int = 40) -> Corpus:
    """Random and optimal walks over ``games`` rendered as (state text, command).

    Episodes alternate between games. Random walks mostly pick valid actions
    and occasionally an arbitrary candidate so "nothing happens" shows up too.
    """
    rng = np.random.default_rng(seed)
    games = list(games)
    walkthroughs = walkthroughs or {}
    pairs: list = []
    episode = 0
    while len(pairs) < n_pairs:
        game = games[episode % len(games)]
        episode += 1
        state, obs = E.reset(game)
        plan = walkthroughs.get(game.game_id)
        if plan and rng.random() < optimal_fraction:
            commands = iter(plan)
            pick = lambda s: E.parse_command(game, next(commands, plan[-1]))
        else:
            cands = E.enumerate_candidate_actions(game)

            def pick(s):
                valid = E.valid_actions(game, s)
                if not valid or rng.random() < invalid_fraction:
                    return cands[rng.integers(len(cands))]
                return valid[rng.integers(len(valid))]
        for _ in range(max_walk):
            if state.done or len(pairs) >= n_pairs:
                break
            action = pick(state)
            pairs.append((normalize(E.render_state_text(obs)), normalize(action.command_text)))
            state, obs, _, _ = E.step(game, state, action)
    return Corpus(tuple(pairs))


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obs, act in corpus.pairs:
            fh.write(f"{obs}\t{act}\n")
