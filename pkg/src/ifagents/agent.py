"""DRRN and TDQN value agents, their losses, and the two-tier replay buffer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import corpus as C
from . import env as E
from . import nn
from .errors import BufferEmpty, EmptyCandidates, IndexOutOfRange
from .nn import autodiff as ad

N_STATE_PARTS = 3  # event, inventory, look


# --------------------------------------------------------------------------
# text -> vector sequences


def game_vocab(game: E.GameSpec, max_size: int = 500) -> C.Vocab:
    """Vocabulary covering every string the engine can print for ``game``."""
    texts = ["taken.", "dropped.", E.NOTHING_HAPPENS, "you carry: ,", "you are empty handed.",
             "you see a and nothing special.", "done."]
    for room in game.rooms.values():
        texts += [room.name, room.description]
    texts += [obj.name for obj in game.objects.values()]
    texts += [ev.text for ev in game.reward_events if ev.text]
    texts += [t.surface for t in game.templates] + list(game.filler_vocab)
    pseudo = C.Corpus(tuple((t, t) for t in texts if C.normalize(t)))
    return C.build_vocab(pseudo, max_size)


class ScratchEmbedder:
    """Trainable embedding table indexed by a word vocabulary."""

    source = "scratch"

    def __init__(self, vocab: C.Vocab, dim: int = 32):
        self.vocab = vocab
        self.dim = dim
        self._ids: dict = {}

    def param_shapes(self) -> dict:
        return {"embed": ((len(self.vocab), self.dim), "weight")}

    def ids(self, text: str) -> tuple:
        out = self._ids.get(text)
        if out is None:
            out = self._ids[text] = C.tokenize(text, self.vocab).ids
        return out

    def embed_groups(self, params: dict, groups: Sequence[Sequence[str]]):
        seqs = [[self.ids(t) for t in g] for g in groups]
        n = max(len(g) for g in seqs)
        t = max([len(s) for g in seqs for s in g] + [1])
        ids = np.zeros((len(groups), n, t), dtype=np.int64)
        lengths = np.zeros((len(groups), n), dtype=np.int64)
        for gi, g in enumerate(seqs):
            for i, s in enumerate(g):
                ids[gi, i, : len(s)] = s
                lengths[gi, i] = len(s)
        return ad.getitem(params["embed"], ids), lengths


class FrozenEmbedder:
    """Per-token vectors from a frozen pretrained encoder (or only [CLS])."""

    source = "pretrained"

    def __init__(self, encoder, pooling: str = "tokens"):
        if pooling not in ("tokens", "cls"):
            raise ValueError("pooling must be 'tokens' or 'cls'")
        self.encoder = encoder
        self.pooling = pooling
        self.dim = encoder.dim
        self._cache: dict = {}  # the encoder is frozen, so outputs depend on text alone

    def param_shapes(self) -> dict:
        return {}

    def vectors(self, text: str) -> np.ndarray:
        out = self._cache.get(text)
        if out is None:
            vecs = self.encoder.encode_text(text)
            out = self._cache[text] = vecs[:1] if self.pooling == "cls" else vecs
        return out

    def embed_groups(self, params: dict, groups: Sequence[Sequence[str]]):
        seqs = [[self.vectors(t) for t in g] for g in groups]
        n = max(len(g) for g in seqs)
        t = max(len(s) for g in seqs for s in g)
        out = np.zeros((len(groups), n, t, self.dim))
        lengths = np.zeros((len(groups), n), dtype=np.int64)
        for gi, g in enumerate(seqs):
            for i, s in enumerate(g):
                out[gi, i, : len(s)] = s
                lengths[gi, i] = len(s)
        return ad.Tensor(out), lengths


class BowEmbedder:
    """Length-normalised word counts fed to the GRUs as a one-step sequence."""

    source = "bow"

    def __init__(self, vocab: C.Vocab):
        self.vocab = vocab
        self.dim = len(vocab)
        self._cache: dict = {}

    def param_shapes(self) -> dict:
        return {}

    def vector(self, text: str) -> np.ndarray:
        out = self._cache.get(text)
        if out is None:
            out = np.zeros(self.dim)
            ids = C.tokenize(text, self.vocab).ids
            for i in ids:
                out[i] += 1.0
            if ids:
                out /= len(ids)
            self._cache[text] = out
        return out

    def embed_groups(self, params: dict, groups: Sequence[Sequence[str]]):
        n = max(len(g) for g in groups)
        out = np.zeros((len(groups), n, 1, self.dim))
        lengths = np.zeros((len(groups), n), dtype=np.int64)
        for gi, g in enumerate(groups):
            for i, text in enumerate(g):
                out[gi, i, 0] = self.vector(text)
                lengths[gi, i] = 1
        return ad.Tensor(out), lengths


def _index(texts: list, table: dict, text: str) -> int:
    i = table.get(text)
    if i is None:
        i = table[text] = len(texts)
        texts.append(text)
    return i


def _state_parts(obs: E.Observation) -> tuple:
    return obs.event_text, obs.inventory_text, obs.look_text


# --------------------------------------------------------------------------
# transitions and replay


@dataclass(frozen=True)
class Transition:
    state: E.Observation
    prev_action_text: str
    action: E.Action
    reward: float
    next_state: E.Observation
    next_valid_actions: tuple
    done: bool
    episode_score_at_store: float = 0.0


class _Ring:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: list = []
        self.pos = 0

    def append(self, item) -> None:
        if self.capacity <= 0:
            return
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.pos] = item
        self.pos = (self.pos + 1) % self.capacity

    def __len__(self) -> int:
        return len(self.items)


class ReplayBuffer:
    """General ring buffer plus a priority ring of best-episode transitions."""

    def __init__(self, general_capacity: int = 100_000, priority_capacity: int = 10_000,
                 seed: Optional[int] = None):
        self.general = _Ring(general_capacity)
        self.priority = _Ring(priority_capacity)
        self.rng = np.random.default_rng(seed)

    def push(self, t: Transition, episode_final_score, best_seen_score) -> None:
        self.general.append(t)
        if episode_final_score >= best_seen_score:
            self.priority.append(t)

    def sample(self, batch_size: int, priority_fraction: float = 0.5, rng=None,
               return_origin: bool = False):
        rng = rng if rng is not None else self.rng
        if not len(self.general):
            raise BufferEmpty("general replay buffer is empty")
        n_prio = int(round(priority_fraction * batch_size))
        if not len(self.priority):
            n_prio = 0
        out, origin = [], []
        for _ in range(n_prio):
            out.append(self.priority.items[rng.integers(len(self.priority))])
            origin.append("priority")
        for _ in range(batch_size - n_prio):
            out.append(self.general.items[rng.integers(len(self.general))])
            origin.append("general")
        return (out, origin) if return_origin else out


def replay_push(buf: ReplayBuffer, t: Transition, episode_final_score, best_seen_score) -> None:
    buf.push(t, episode_final_score, best_seen_score)


def replay_sample(buf: ReplayBuffer, batch_size: int, priority_fraction: float, rng=None) -> list:
    return buf.sample(batch_size, priority_fraction, rng)


# --------------------------------------------------------------------------
# action selection


def softmax_sample(q, temperature: float, rng: np.random.Generator) -> int:
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise EmptyCandidates("no Q-values to sample from")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = ad.softmax_np(q / temperature)
    return int(rng.choice(q.size, p=p))


# --------------------------------------------------------------------------
# DRRN


class DrrnAgent:
    """Scores (state, candidate) pairs with four GRUs and a two-layer head.

    GRU group order is event text, inventory text, look text, action text.
    """

    kind = "drrn"

    def __init__(self, embedder, hidden: int = 32, seed: int = 0, params: Optional[dict] = None):
        self.embedder = embedder
        self.hidden = hidden
        h = hidden
        shapes = dict(embedder.param_shapes())
        shapes.update(nn.gru_shapes("gru", embedder.dim, h, groups=N_STATE_PARTS + 1))
        shapes.update({
            "head.w1": ((4 * h, h), "weight"),
            "head.b1": ((h,), "bias"),
            "head.w2": ((h, 1), "weight"),
            "head.b2": ((1,), "bias"),
        })
        self.shapes = shapes
        self.params = params if params is not None else nn.init_params(shapes, seed)

    def pair_q(self, P: dict, states: Sequence[E.Observation], candidates: Sequence[Sequence[str]]):
        """Flat Q-values for every (state, candidate text) pair, state-major."""
        groups = [[] for _ in range(N_STATE_PARTS + 1)]
        tables = [{} for _ in range(N_STATE_PARTS + 1)]
        rows = []
        for obs, cands in zip(states, candidates):
            s = [_index(groups[g], tables[g], part) for g, part in enumerate(_state_parts(obs))]
            for text in cands:
                rows.append(s + [_index(groups[3], tables[3], text)])
        if not rows:
            raise EmptyCandidates("no candidate actions")
        x, lengths = self.embedder.embed_groups(P, groups)
        hidden = nn.stacked_gru(P, "gru", x, lengths)  # (4, N, H)
        rows = np.array(rows)
        gather = ad.getitem(hidden, (np.broadcast_to(np.arange(4), rows.shape), rows))  # (M, 4, H)
        z = ad.reshape(gather, (len(rows), 4 * self.hidden))
        z = ad.relu(z @ P["head.w1"] + P["head.b1"])
        return ad.reshape(z @ P["head.w2"] + P["head.b2"], (len(rows),))

    def q_values(self, obs: E.Observation, candidates: Sequence, params: Optional[dict] = None) -> np.ndarray:
        if not candidates:
            raise EmptyCandidates("drrn needs at least one candidate")
        texts = [a.command_text if isinstance(a, E.Action) else a for a in candidates]
        P = ad.constant(params if params is not None else self.params)
        return self.pair_q(P, [obs], [texts]).data.copy()

    def q_batch(self, states, candidate_lists) -> list:
        texts = [[a.command_text for a in c] for c in candidate_lists]
        flat = self.pair_q(ad.constant(self.params), states, texts).data
        out, i = [], 0
        for c in texts:
            out.append(flat[i: i + len(c)].copy())
            i += len(c)
        return out

    def targets(self, P: dict, batch: Sequence[Transition], gamma: float) -> np.ndarray:
        """Bootstrap targets r + gamma * max Q(o', a'), as plain arrays."""
        nxt = [(i, t) for i, t in enumerate(batch) if not t.done]
        out = np.array([t.reward for t in batch], dtype=np.float64)
        if nxt:
            q = self.pair_q(P, [t.next_state for _, t in nxt],
                            [[a.command_text for a in t.next_valid_actions] for _, t in nxt]).data
            pos = 0
            for i, t in nxt:
                k = len(t.next_valid_actions)
                out[i] += gamma * q[pos: pos + k].max()
                pos += k
        return out

    def losses(self, P: dict, batch: Sequence[Transition], gamma: float, targets=None):
        """(total, td, aux) as Tensors; DRRN has no auxiliary term.

        ``targets`` overrides the bootstrap targets (used to check gradients
        with the target held fixed)."""
        states, cands = [], []
        for t in batch:
            states.append(t.state)
            cands.append([t.action.command_text])
        nxt = [(i, t) for i, t in enumerate(batch) if not t.done]
        for _, t in nxt:
            states.append(t.next_state)
            cands.append([a.command_text for a in t.next_valid_actions])
        q = self.pair_q(P, states, cands)
        n = len(batch)
        bootstrap = np.zeros(n)
        pos = n
        for i, t in nxt:
            k = len(t.next_valid_actions)
            bootstrap[i] = q.data[pos: pos + k].max()
            pos += k
        target = np.array([t.reward for t in batch]) + gamma * bootstrap if targets is None else targets
        resid = ad.sub(target, q[:n])
        td = ad.mean(ad.mul(resid, resid))
        return td, td, ad.Tensor(0.0)


def drrn_q_values(agent: DrrnAgent, state: E.Observation, candidates: Sequence) -> np.ndarray:
    return agent.q_values(state, candidates)


# --------------------------------------------------------------------------
# TDQN


class TdqnAgent:
    """Template and two filler Q heads over an encoding of the state and the
    previous command."""

    kind = "tdqn"

    def __init__(self, embedder, n_templates: int, n_fillers: int, hidden: int = 32,
                 seed: int = 0, params: Optional[dict] = None):
        self.embedder = embedder
        self.hidden = hidden
        self.n_templates = n_templates
        self.n_fillers = n_fillers
        h = hidden
        shapes = dict(embedder.param_shapes())
        shapes.update(nn.gru_shapes("gru", embedder.dim, h, groups=N_STATE_PARTS + 1))
        shapes.update({
            "body.w": ((4 * h, h), "weight"),
            "body.b": ((h,), "bias"),
            "tmpl.w": ((h, n_templates), "weight"),
            "tmpl.b": ((n_templates,), "bias"),
            "f1.w": ((h, n_fillers), "weight"),
            "f1.b": ((n_fillers,), "bias"),
            "f2.w": ((h, n_fillers), "weight"),
            "f2.b": ((n_fillers,), "bias"),
        })
        self.shapes = shapes
        self.params = params if params is not None else nn.init_params(shapes, seed)

    def heads(self, P: dict, states: Sequence[E.Observation], prev_actions: Sequence[str]):
        groups = [[] for _ in range(N_STATE_PARTS + 1)]
        tables = [{} for _ in range(N_STATE_PARTS + 1)]
        rows = []
        for obs, prev in zip(states, prev_actions):
            parts = _state_parts(obs) + (prev,)
            rows.append([_index(groups[g], tables[g], part) for g, part in enumerate(parts)])
        x, lengths = self.embedder.embed_groups(P, groups)
        hidden = nn.stacked_gru(P, "gru", x, lengths)
        rows = np.array(rows)
        gather = ad.getitem(hidden, (np.broadcast_to(np.arange(4), rows.shape), rows))
        z = ad.relu(ad.reshape(gather, (len(rows), 4 * self.hidden)) @ P["body.w"] + P["body.b"])
        return (z @ P["tmpl.w"] + P["tmpl.b"], z @ P["f1.w"] + P["f1.b"], z @ P["f2.w"] + P["f2.b"])

    def q_heads(self, obs: E.Observation, prev_action_text: str, params: Optional[dict] = None):
        P = ad.constant(params if params is not None else self.params)
        return tuple(h.data[0].copy() for h in self.heads(P, [obs], [prev_action_text]))

    def heads_batch(self, states, prev_actions) -> list:
        qt, q1, q2 = (h.data for h in self.heads(ad.constant(self.params), states, prev_actions))
        return [(qt[i].copy(), q1[i].copy(), q2[i].copy()) for i in range(len(states))]

    def targets(self, P: dict, batch: Sequence[Transition], gamma: float) -> np.ndarray:
        """Bootstrap targets r + gamma * max Q(o', a'), as plain arrays."""
        out = np.array([t.reward for t in batch], dtype=np.float64)
        qt = self.heads(P, [t.next_state for t in batch], [t.action.command_text for t in batch])[0].data
        for i, t in enumerate(batch):
            if not t.done and t.next_valid_actions:
                out[i] += gamma * qt[i, sorted({a.template_id for a in t.next_valid_actions})].max()
        return out

    def losses(self, P: dict, batch: Sequence[Transition], gamma: float, targets=None):
        """TD loss on each head the chosen command used, plus the valid-action
        BCE on next states. Every used head regresses onto the same target
        ``r + gamma * max`` over templates of the next valid actions."""
        n = len(batch)
        states = [t.state for t in batch] + [t.next_state for t in batch]
        prevs = [t.prev_action_text for t in batch] + [t.action.command_text for t in batch]
        qt, q1, q2 = self.heads(P, states, prevs)
        bootstrap = np.zeros(n)
        for i, t in enumerate(batch):
            if not t.done and t.next_valid_actions:
                ids = sorted({a.template_id for a in t.next_valid_actions})
                bootstrap[i] = qt.data[n + i, ids].max()
        target = np.array([t.reward for t in batch]) + gamma * bootstrap if targets is None else targets
        rows = np.arange(n)
        tmpl = np.array([t.action.template_id for t in batch])
        terms = [ad.sub(target, ad.getitem(qt, (rows, tmpl)))]
        for head, attr in ((q1, "filler1"), (q2, "filler2")):
            used = [i for i, t in enumerate(batch) if getattr(t.action, attr) is not None]
            if used:
                fill = np.array([getattr(batch[i].action, attr) for i in used])
                resid = ad.sub(target[used], ad.getitem(head, (np.array(used), fill)))
                terms.append(resid)
        sq = [ad.sum(ad.mul(r, r)) for r in terms]
        td = ad.mul(sq[0] + (sq[1] if len(sq) > 1 else 0.0) + (sq[2] if len(sq) > 2 else 0.0), 1.0 / n)
        live = [i for i, t in enumerate(batch) if not t.done]
        if live:
            idx = np.array(live) + n
            aux = tdqn_valid_aux_loss((ad.getitem(qt, idx), ad.getitem(q1, idx), ad.getitem(q2, idx)),
                                      [batch[i].next_valid_actions for i in live], None,
                                      sizes=(self.n_templates, self.n_fillers))
        else:
            aux = ad.Tensor(0.0)
        return td + aux, td, aux


def valid_targets(valid_set: Sequence[E.Action], n_templates: int, n_fillers: int) -> tuple:
    t = np.zeros(n_templates)
    f1 = np.zeros(n_fillers)
    f2 = np.zeros(n_fillers)
    for a in valid_set:
        t[a.template_id] = 1.0
        if a.filler1 is not None:
            f1[a.filler1] = 1.0
        if a.filler2 is not None:
            f2[a.filler2] = 1.0
    return t, f1, f2


def tdqn_valid_aux_loss(q_heads, valid_set, game: Optional[E.GameSpec] = None, sizes=None):
    """Mean BCE between sigmoid of every head output and multi-hot valid targets.

    ``q_heads`` holds one-row vectors or (N, width) batches; for a batch,
    ``valid_set`` is a list of N valid-action lists.
    """
    qt, q1, q2 = (ad.as_tensor(h) for h in q_heads)
    if sizes is None:
        sizes = (len(game.templates), len(game.filler_vocab)) if game is not None else (qt.shape[-1], q1.shape[-1])
    if qt.data.ndim == 1:
        targets = [valid_targets(valid_set, *sizes)]
        qt, q1, q2 = (ad.reshape(h, (1, -1)) for h in (qt, q1, q2))
    else:
        targets = [valid_targets(v, *sizes) for v in valid_set]
    tgt = np.stack([np.concatenate(t) for t in targets])
    return ad.bce_with_logits(ad.concat([qt, q1, q2], axis=-1), tgt)


def tdqn_q_heads(agent: TdqnAgent, state: E.Observation, prev_action_text: str):
    return agent.q_heads(state, prev_action_text)


def assemble_template_action(game: E.GameSpec, template_id: int, f1: Optional[int], f2: Optional[int]) -> E.Action:
    if not 0 <= template_id < len(game.templates):
        raise IndexOutOfRange(f"template {template_id} out of range for {game.game_id}")
    n = game.templates[template_id].blank_count
    for slot, f in enumerate((f1, f2)):
        if slot < n and (f is None or not 0 <= f < len(game.filler_vocab)):
            raise IndexOutOfRange(f"filler {f} out of range for {game.game_id}")
    return E.make_action(game, template_id, f1, f2)


def tdqn_select(agent: TdqnAgent, game: E.GameSpec, state: E.Observation, prev_action_text: str,
                temperature: float, rng: np.random.Generator, heads=None) -> E.Action:
    qt, q1, q2 = heads if heads is not None else agent.q_heads(state, prev_action_text)
    u = softmax_sample(qt, temperature, rng)
    p1 = softmax_sample(q1, temperature, rng)
    p2 = softmax_sample(q2, temperature, rng)
    return assemble_template_action(game, u, p1, p2)


# --------------------------------------------------------------------------
# learning


def td_targets(agent, batch: Sequence[Transition], gamma: float, params: Optional[dict] = None) -> np.ndarray:
    """Bootstrap targets ``r + gamma * max Q(o', a')`` under ``params``."""
    P = ad.constant(params if params is not None else agent.params)
    return agent.targets(P, batch, gamma)


def td_loss(agent, batch: Sequence[Transition], gamma: float, params: Optional[dict] = None) -> float:
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    P = ad.constant(params if params is not None else agent.params)
    return agent.losses(P, batch, gamma)[1].item()


@dataclass
class UpdateConfig:
    batch_size: int = 32
    gamma: float = 0.9
    lr: float = 1e-4
    priority_fraction: float = 0.5
    clip_norm: float = 5.0


@dataclass
class Learner:
    """Owns an agent's optimiser state; the only writer of its parameters."""

    agent: object
    config: UpdateConfig = field(default_factory=UpdateConfig)
    opt: Optional[nn.AdamState] = None

    def __post_init__(self):
        if self.opt is None:
            self.opt = nn.AdamState.zeros_like(self.agent.params)


def agent_update(learner: Learner, buf: ReplayBuffer, rng: Optional[np.random.Generator] = None) -> dict:
    cfg = learner.config
    batch = buf.sample(cfg.batch_size, cfg.priority_fraction, rng)
    agent = learner.agent

    def loss_fn(P):
        return agent.losses(P, batch, cfg.gamma)

    (total, td, aux), grads = ad.value_and_grad(loss_fn, agent.params)
    grads = nn.clip_by_global_norm(grads, cfg.clip_norm)
    agent.params, learner.opt = nn.adam_step(agent.params, grads, learner.opt, cfg.lr)
    return {"td_loss": td.item(), "aux_loss": aux.item()}
