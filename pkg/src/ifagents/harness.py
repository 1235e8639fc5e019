"""Training loop, evaluation, ablation, transfer and the tabular oracle."""

from __future__ import annotations

import shutil
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import agent as A
from . import env as E
from . import nn
from .errors import CheckpointError, IncompatibleActionSpace, StateSpaceTooLarge
from .lm import FrozenEncoder

CSV_HEADER = "step,episodes,last100_avg,max_seen,td_loss,aux_loss"
MAX_ORACLE_STATES = 10_000


@dataclass
class TrainConfig:
    game: str = "treasure"
    agent: str = "drrn"  # drrn | tdqn
    encoder: str = "scratch"  # scratch | bow | path to an encoder checkpoint
    pooling: str = "tokens"  # tokens | cls, for pretrained encoders
    env_count: int = 8
    max_steps: int = 50_000
    gamma: float = 0.9
    lr: float = 1e-4
    temperature: float = 1.0
    eval_temperature: float = 0.01
    seeds: tuple = (0,)
    batch_size: int = 32
    eval_window: int = 100
    priority_fraction: float = 0.5
    hidden: int = 32
    embed_dim: int = 32
    clip_norm: float = 5.0
    general_capacity: int = 100_000
    priority_capacity: int = 10_000
    log_every: int = 100

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.env_count < 1:
            raise ValueError("env_count must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if self.agent not in ("drrn", "tdqn"):
            raise ValueError(f"unknown agent kind {self.agent!r}")
        if self.temperature <= 0 or self.eval_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def echo(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name.replace('_', '-')} = {v}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MetricRecord:
    step: int
    episodes: int
    last100_avg: float
    max_seen: float
    td_loss: float
    aux_loss: float


@dataclass
class RunMetrics:
    seed: int = 0
    records: list = field(default_factory=list)
    episode_scores: list = field(default_factory=list)
    steps_to_threshold: Optional[int] = None
    window: int = 100

    @property
    def final_score(self) -> float:
        return evaluate_last100(self.episode_scores, self.window)

    @property
    def max_seen(self) -> float:
        return float(max(self.episode_scores)) if self.episode_scores else 0.0


@dataclass
class TrainResult:
    metrics: RunMetrics
    agent: object
    encoder: Optional[FrozenEncoder] = None


# --------------------------------------------------------------------------
# scoring


def evaluate_last100(finished_episode_scores: Sequence, window: int = 100) -> float:
    if not len(finished_episode_scores):
        return 0.0
    return float(np.mean(list(finished_episode_scores)[-window:]))


def aggregate_runs(per_seed: Sequence[RunMetrics]) -> tuple:
    if not per_seed:
        raise ValueError("need at least one run")
    return (float(np.mean([m.final_score for m in per_seed])),
            float(np.mean([m.max_seen for m in per_seed])))


def emit_metrics_csv(metrics: RunMetrics, destination) -> None:
    lines = [CSV_HEADER]
    for r in metrics.records:
        lines.append(f"{r.step},{r.episodes},{r.last100_avg:.6f},{r.max_seen:.6f},"
                     f"{r.td_loss:.8f},{r.aux_loss:.8f}")
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# building agents


def build_embedder(config: TrainConfig, game: E.GameSpec, encoder: Optional[FrozenEncoder] = None):
    if config.encoder == "scratch":
        return A.ScratchEmbedder(A.game_vocab(game), config.embed_dim)
    if config.encoder == "bow":
        return A.BowEmbedder(A.game_vocab(game))
    enc = encoder if encoder is not None else FrozenEncoder.load(config.encoder)
    return A.FrozenEmbedder(enc, config.pooling)


def build_agent(config: TrainConfig, game: E.GameSpec, seed: int, encoder=None):
    emb = build_embedder(config, game, encoder)
    if config.agent == "drrn":
        return A.DrrnAgent(emb, config.hidden, seed=seed)
    return A.TdqnAgent(emb, len(game.templates), len(game.filler_vocab), config.hidden, seed=seed)


def save_agent(agent, path, config: Optional[TrainConfig] = None, encoder_file: Optional[str] = None) -> None:
    emb = agent.embedder
    meta = {
        "kind": agent.kind,
        "hidden": agent.hidden,
        "source": emb.source,
        "config": config.echo() if config else "",
    }
    if emb.source in ("scratch", "bow"):
        meta["vocab"] = list(emb.vocab.tokens)
    if emb.source == "scratch":
        meta["embed_dim"] = emb.dim
    if emb.source == "pretrained":
        meta["encoder_fingerprint"] = emb.encoder.fingerprint
        meta["encoder_file"] = encoder_file
        meta["pooling"] = emb.pooling
    if agent.kind == "tdqn":
        meta["n_templates"] = agent.n_templates
        meta["n_fillers"] = agent.n_fillers
    nn.save_checkpoint(path, agent.params, meta)


def load_agent(path, encoder: Optional[FrozenEncoder] = None):
    from .corpus import Vocab

    path = Path(path)
    params, meta = nn.load_checkpoint(path)
    source = meta.get("source")
    if source == "scratch":
        emb = A.ScratchEmbedder(Vocab(tuple(meta["vocab"])), meta["embed_dim"])
    elif source == "bow":
        emb = A.BowEmbedder(Vocab(tuple(meta["vocab"])))
    elif source == "pretrained":
        if encoder is None:
            if not meta.get("encoder_file"):
                raise CheckpointError(f"{path}: pretrained agent needs its encoder checkpoint")
            encoder = FrozenEncoder.load(path.parent / meta["encoder_file"])
        if encoder.fingerprint != meta["encoder_fingerprint"]:
            raise CheckpointError(f"{path}: encoder fingerprint does not match the agent")
        emb = A.FrozenEmbedder(encoder, meta["pooling"])
    else:
        raise CheckpointError(f"{path}: not an agent checkpoint")
    if meta["kind"] == "drrn":
        agent = A.DrrnAgent(emb, meta["hidden"], params=params)
    elif meta["kind"] == "tdqn":
        agent = A.TdqnAgent(emb, meta["n_templates"], meta["n_fillers"], meta["hidden"], params=params)
    else:
        raise CheckpointError(f"{path}: unknown agent kind {meta['kind']!r}")
    if set(params) != set(agent.shapes) or any(params[k].shape != agent.shapes[k][0] for k in params):
        raise CheckpointError(f"{path}: parameter table does not match a {meta['kind']} agent")
    return agent


# --------------------------------------------------------------------------
# acting


def select_actions(agent, game: E.GameSpec, states, observations, prev_texts, temperature: float,
                   rngs, cache: Optional[dict] = None) -> list:
    """One action per env from a shared parameter snapshot.

    Returns ``[(action, shown_actions, shown_q)]``; for TDQN the shown lists
    are the template head. ``cache`` memoises Q-values by state text when the
    parameters are fixed.
    """
    n = len(states)
    if agent.kind == "drrn":
        cands = [E.valid_actions(game, s) for s in states]
        for i, c in enumerate(cands):
            if not c:  # nothing changes the world; every command is equally useless
                cands[i] = E.enumerate_candidate_actions(game)[:1]
        keys = [(observations[i], tuple(a.command_text for a in cands[i])) for i in range(n)]
        qs = [None] * n
        todo = [i for i in range(n) if cache is None or keys[i] not in cache]
        if todo:
            fresh = agent.q_batch([observations[i] for i in todo], [cands[i] for i in todo])
            for i, q in zip(todo, fresh):
                qs[i] = q
                if cache is not None:
                    cache[keys[i]] = q
        for i in range(n):
            if qs[i] is None:
                qs[i] = cache[keys[i]]
        return [(cands[i][A.softmax_sample(qs[i], temperature, rngs[i])], cands[i], qs[i]) for i in range(n)]
    keys = [(observations[i], prev_texts[i]) for i in range(n)]
    heads = [None] * n
    todo = [i for i in range(n) if cache is None or keys[i] not in cache]
    if todo:
        fresh = agent.heads_batch([observations[i] for i in todo], [prev_texts[i] for i in todo])
        for i, h in zip(todo, fresh):
            heads[i] = h
            if cache is not None:
                cache[keys[i]] = h
    out = []
    for i in range(n):
        h = heads[i] if heads[i] is not None else cache[keys[i]]
        act = A.tdqn_select(agent, game, observations[i], prev_texts[i], temperature, rngs[i], heads=h)
        out.append((act, [t.surface for t in game.templates], h[0]))
    return out


# --------------------------------------------------------------------------
# training


def _load(game) -> E.GameSpec:
    return game if isinstance(game, E.GameSpec) else E.load_game_file(E.resolve_game_path(game))


def train(config: TrainConfig, seed: Optional[int] = None, run_dir=None,
          encoder: Optional[FrozenEncoder] = None, threshold: Optional[float] = None) -> TrainResult:
    """Round-robin DQN training over ``config.env_count`` copies of the game.

    Every global step selects one action per env with the current
    parameters, steps each env in order, stores finished episodes in replay,
    then applies one update once replay holds a batch.
    """
    seed = config.seeds[0] if seed is None else seed
    game = _load(config.game)
    if config.encoder not in ("scratch", "bow") and encoder is None:
        encoder = FrozenEncoder.load(config.encoder)
    streams = np.random.SeedSequence(seed).spawn(config.env_count + 3)
    init_seed = int(streams[0].generate_state(1)[0])
    agent = build_agent(config, game, init_seed, encoder)
    update_rng = np.random.default_rng(streams[1])
    buf = A.ReplayBuffer(config.general_capacity, config.priority_capacity, seed=streams[2])
    env_rngs = [np.random.default_rng(s) for s in streams[3:]]
    learner = A.Learner(agent, A.UpdateConfig(config.batch_size, config.gamma, config.lr,
                                              config.priority_fraction, config.clip_norm))
    metrics = RunMetrics(seed=seed, window=config.eval_window)

    envs = [E.reset(game) for _ in range(config.env_count)]
    states = [s for s, _ in envs]
    obs = [o for _, o in envs]
    prevs = [""] * config.env_count
    scores = [0] * config.env_count
    pending: list = [[] for _ in range(config.env_count)]
    best_seen = -np.inf
    recent = deque(maxlen=config.eval_window)
    td_acc, aux_acc, n_upd = 0.0, 0.0, 0

    for step in range(1, config.max_steps + 1):
        picks = select_actions(agent, game, states, obs, prevs, config.temperature, env_rngs)
        for i, (action, _, _) in enumerate(picks):
            s2, o2, r, done = E.step(game, states[i], action)
            nxt = tuple(E.valid_actions(game, s2)) if not done else ()
            pending[i].append(A.Transition(obs[i], prevs[i], action, float(r), o2, nxt, done))
            scores[i] += r
            if done:
                final = scores[i]
                for t in pending[i]:
                    buf.push(A.Transition(**{**t.__dict__, "episode_score_at_store": float(final)}),
                             final, best_seen)
                best_seen = max(best_seen, final)
                metrics.episode_scores.append(final)
                recent.append(final)
                # a partial window would favour the quick (winning) episodes
                if (threshold is not None and metrics.steps_to_threshold is None
                        and len(recent) == recent.maxlen and np.mean(recent) >= threshold):
                    metrics.steps_to_threshold = step
                pending[i], scores[i] = [], 0
                s2, o2 = E.reset(game)
                action_text = ""
            else:
                action_text = action.command_text
            states[i], obs[i], prevs[i] = s2, o2, action_text
        if len(buf.general) >= config.batch_size:
            out = A.agent_update(learner, buf, update_rng)
            td_acc += out["td_loss"]
            aux_acc += out["aux_loss"]
            n_upd += 1
        if step % config.log_every == 0:
            metrics.records.append(MetricRecord(
                step, len(metrics.episode_scores), evaluate_last100(metrics.episode_scores, config.eval_window),
                metrics.max_seen, td_acc / n_upd if n_upd else 0.0, aux_acc / n_upd if n_upd else 0.0))
            td_acc, aux_acc, n_upd = 0.0, 0.0, 0

    result = TrainResult(metrics, agent, encoder)
    if run_dir is not None:
        write_run_dir(result, config, run_dir, game)
    return result


def write_run_dir(result: TrainResult, config: TrainConfig, run_dir, game: E.GameSpec,
                  transcript_episodes: int = 1) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.echo").write_text(config.echo(), encoding="utf-8")
    emit_metrics_csv(result.metrics, run_dir / "metrics.csv")
    enc_file = None
    if result.encoder is not None:
        enc_file = "encoder.ckpt"
        src = Path(config.encoder)
        if src.exists():
            shutil.copyfile(src, run_dir / enc_file)
            shutil.copyfile(src.parent / (src.name + ".vocab"), run_dir / (enc_file + ".vocab"))
        else:
            result.encoder.save(run_dir / enc_file)
    save_agent(result.agent, run_dir / "agent.ckpt", config, enc_file)
    tdir = run_dir / "transcripts"
    tdir.mkdir(exist_ok=True)
    for k in range(transcript_episodes):
        text = play_transcript(result.agent, game, config.eval_temperature, seed=k)
        (tdir / f"episode_{k}.txt").write_text(text, encoding="utf-8")
    return run_dir


def train_seeds(config: TrainConfig, run_dir=None, encoder=None, threshold=None) -> list:
    out = []
    for seed in config.seeds:
        sub = None if run_dir is None else Path(run_dir) / f"seed_{seed}"
        out.append(train(config, seed, sub, encoder, threshold))
    return out


# --------------------------------------------------------------------------
# evaluation


def run_episodes(agent, game: E.GameSpec, episodes: int, temperature: float = 0.01,
                 seed: int = 0, lanes: int = 10) -> list:
    """Final scores of ``episodes`` episodes without any learning.

    Episodes run in parallel lanes, and Q-values are memoised because the
    parameters never change during evaluation.
    """
    rng = np.random.default_rng(seed)
    cache: dict = {}
    scores = []
    while len(scores) < episodes:
        n = min(lanes, episodes - len(scores))
        pairs = [E.reset(game) for _ in range(n)]
        states = [s for s, _ in pairs]
        obs = [o for _, o in pairs]
        prevs = [""] * n
        live = list(range(n))
        rngs = [rng] * n
        while live:
            picks = select_actions(agent, game, [states[i] for i in live], [obs[i] for i in live],
                                   [prevs[i] for i in live], temperature, rngs[: len(live)], cache)
            still = []
            for i, (action, _, _) in zip(live, picks):
                states[i], obs[i], _, done = E.step(game, states[i], action)
                prevs[i] = action.command_text
                if not done:
                    still.append(i)
            live = still
        scores.extend(s.cumulative_score for s in states)
    return scores


def evaluate(agent, game, episodes: int = 100, temperature: float = 0.01, seed: int = 0) -> float:
    return float(np.mean(run_episodes(agent, _load(game), episodes, temperature, seed)))


def play_transcript(agent, game: E.GameSpec, temperature: float = 0.01, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    state, obs = E.reset(game)
    prev, steps = "", []
    while not state.done:
        action, shown, q = select_actions(agent, game, [state], [obs], [prev], temperature, [rng])[0]
        new_state, new_obs, r, done = E.step(game, state, action)
        steps.append(E.TranscriptStep(obs, shown, q, action, r, new_state.cumulative_score, done))
        state, obs, prev = new_state, new_obs, action.command_text
    return E.record_transcript(steps)


def check_action_space(agent, game: E.GameSpec) -> None:
    if agent.kind == "tdqn" and (agent.n_templates != len(game.templates)
                                 or agent.n_fillers != len(game.filler_vocab)):
        raise IncompatibleActionSpace(
            f"agent heads ({agent.n_templates}, {agent.n_fillers}) do not fit {game.game_id} "
            f"({len(game.templates)}, {len(game.filler_vocab)})")


def transfer_eval(agent, target_game, episodes: int = 300, temperature: float = 0.01, seed: int = 0) -> float:
    """Mean score on ``target_game`` with frozen parameters (fingerprint-checked)."""
    game = _load(target_game)
    check_action_space(agent, game)
    before = nn.fingerprint(agent.params)
    enc = getattr(agent.embedder, "encoder", None)
    enc_before = enc.fingerprint if enc is not None else None
    scores = run_episodes(agent, game, episodes, temperature, seed)
    if nn.fingerprint(agent.params) != before or (enc is not None and not enc.verify()):
        raise RuntimeError("parameters changed during evaluation")
    assert enc is None or enc.fingerprint == enc_before
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    arm: str
    seed: int
    final_score: float
    max_seen: float
    steps_to_threshold: Optional[int]


@dataclass
class AblationReport:
    rows: list
    threshold: float
    max_steps: int
    curves: dict  # (arm, seed) -> RunMetrics

    def median_steps(self, arm: str) -> float:
        vals = [r.steps_to_threshold if r.steps_to_threshold is not None else self.max_steps + 1
                for r in self.rows if r.arm == arm]
        return float(np.median(vals))

    def aggregate(self, arm: str) -> tuple:
        return aggregate_runs([self.curves[(r.arm, r.seed)] for r in self.rows if r.arm == arm])

    def table(self) -> str:
        lines = ["arm,seed,final_score,max_seen,steps_to_threshold"]
        for r in self.rows:
            lines.append(f"{r.arm},{r.seed},{r.final_score:.4f},{r.max_seen:.4f},"
                         f"{'' if r.steps_to_threshold is None else r.steps_to_threshold}")
        return "\n".join(lines) + "\n"


def ablation(configs: dict, out_dir=None, encoders: Optional[dict] = None) -> AblationReport:
    """Run every arm of ``configs`` (name -> TrainConfig) over the same seeds.

    The arms must differ only in their encoder source.
    """
    names = list(configs)
    base = {k: v for k, v in asdict(configs[names[0]]).items() if k not in ("encoder", "pooling")}
    for n in names[1:]:
        other = {k: v for k, v in asdict(configs[n]).items() if k not in ("encoder", "pooling")}
        if other != base:
            raise ValueError("ablation arms may differ only in encoder source")
    cfg0 = configs[names[0]]
    game = _load(cfg0.game)
    threshold = 0.9 * game.max_score
    rows, curves = [], {}
    for seed in cfg0.seeds:
        for name in names:
            enc = (encoders or {}).get(name)
            res = train(configs[name], seed, encoder=enc, threshold=threshold)
            m = res.metrics
            rows.append(AblationRow(name, seed, m.final_score, m.max_seen, m.steps_to_threshold))
            curves[(name, seed)] = m
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                emit_metrics_csv(m, Path(out_dir) / f"{name}_seed{seed}.csv")
    report = AblationReport(rows, threshold, cfg0.max_steps, curves)
    if out_dir is not None:
        (Path(out_dir) / "ablation.csv").write_text(report.table(), encoding="utf-8")
    return report


# --------------------------------------------------------------------------
# tabular oracle


@dataclass
class OracleResult:
    values: dict  # state digest -> optimal discounted value
    optimal_return: int
    actions: list  # command texts of the greedy optimal walk
    n_states: int


def _enumerate_states(game: E.GameSpec, limit: int):
    start, _ = E.reset(game)
    key0 = E.state_hash(start)
    states = {key0: start}
    edges: dict = {}
    frontier = deque([key0])
    while frontier:
        key = frontier.popleft()
        s = states[key]
        out = []
        for a in E.valid_actions(game, s):
            s2, _, r, terminal = E._transition(game, s, a)
            k2 = E.state_hash(s2)
            out.append((a, r, terminal, k2))
            if not terminal and k2 not in states:
                if len(states) >= limit:
                    raise StateSpaceTooLarge(f"{game.game_id}: more than {limit} reachable states")
                states[k2] = s2
                frontier.append(k2)
        edges[key] = out
    return key0, states, edges


def tabular_oracle(game, gamma: float = 0.9, limit: int = MAX_ORACLE_STATES, tol: float = 1e-10) -> OracleResult:
    """Value iteration over the reachable (digest-identified) state graph."""
    game = _load(game)
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    key0, states, edges = _enumerate_states(game, limit)
    V = dict.fromkeys(states, 0.0)

    def backup(key):
        return [r + (0.0 if term else gamma * V[k2]) for _, r, term, k2 in edges[key]]

    while True:
        resid = 0.0
        for key in states:
            q = backup(key)
            v = max(q) if q else 0.0
            resid = max(resid, abs(v - V[key]))
            V[key] = v
        if resid < tol:
            break
    key, total, walk = key0, 0, []
    for _ in range(game.episode_cap):
        if not edges[key]:
            break
        q = backup(key)
        best = int(np.argmax(q))
        if q[best] <= 0:  # nothing left to earn from here
            break
        a, r, term, k2 = edges[key][best]
        walk.append(a.command_text)
        total += r
        if term:
            break
        key = k2
    return OracleResult(V, int(total), walk, len(states))
