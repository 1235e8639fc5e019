"""Command-line entry points: ``python -m ifagents <subcommand> ...``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines whose
keys are long flag names; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import IFAgentsError, InputFormatError

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliInvocation:
    subcommand: str
    flags: dict = field(default_factory=dict)
    config_path: Optional[str] = None


def _train_flags(p, steps_default=50_000):
    p.add_argument("--game", default="treasure")
    p.add_argument("--agent", choices=("drrn", "tdqn"), default="drrn")
    p.add_argument("--encoder", default="scratch", help="scratch, bow, or an encoder checkpoint path")
    p.add_argument("--pooling", choices=("tokens", "cls"), default="tokens")
    p.add_argument("--env-count", type=int, default=8)
    p.add_argument("--steps", "--max-steps", dest="max_steps", type=int, default=steps_default)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--eval-temperature", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=None, help="single seed (overrides --seeds)")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--eval-window", type=int, default=100)
    p.add_argument("--priority-fraction", type=float, default=0.5)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--log-every", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="ifagents", description="Text-game agents with a pretrained frozen encoder.")
    sub = root.add_subparsers(dest="subcommand", parser_class=_Parser, required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="file of 'key = value' defaults")
        return p

    p = add("pretrain", "masked-LM pretraining of the encoder")
    p.add_argument("--corpus", default=None, help="TSV transcript corpus (default: bundled)")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--mask-rate", type=float, default=0.15)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-dim", type=int, default=64)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--out", required=True)

    p = add("train", "train an agent")
    _train_flags(p)
    p.add_argument("--out", default="runs/train")

    p = add("eval", "evaluate a trained agent without updates")
    p.add_argument("--agent", required=True, help="agent checkpoint")
    p.add_argument("--game", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    p = add("transfer", "zero-shot evaluation on another game")
    p.add_argument("--agent", required=True, help="agent checkpoint")
    p.add_argument("--game", required=True)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    p = add("ablate", "scratch vs pretrained encoder over paired seeds")
    _train_flags(p, steps_default=5_000)
    p.set_defaults(encoder=None, game="cottage", seeds="0,1,2,3,4")
    p.add_argument("--out", default="runs/ablation")

    p = add("oracle", "tabular value iteration on a small game")
    p.add_argument("--game", required=True)
    p.add_argument("--gamma", type=float, default=0.9)

    p = add("play", "type commands against a game")
    p.add_argument("--game", required=True)

    p = add("gen-corpus", "write a synthetic transcript corpus")
    p.add_argument("--out", default=None, help="default: the bundled corpus path")
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--games", default="tworoom,treasure")
    p.add_argument("--optimal-fraction", type=float, default=0.2)
    return root


def _config_args(path: str) -> list:
    out = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "config":
            raise UsageError(f"{path}:{lineno}: config files cannot nest")
        out += [f"--{key}", value]
    return out


def parse_args(argv) -> CliInvocation:
    argv = list(argv)
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.config is not None:
        # file values first so explicit flags parse later and win
        ns = parser.parse_args([argv[0]] + _config_args(ns.config) + argv[1:])
    flags = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config")}
    return CliInvocation(ns.subcommand, flags, ns.config)


# --------------------------------------------------------------------------
# commands


def _train_config(f: dict, **override):
    from .harness import TrainConfig

    seeds = (f["seed"],) if f.get("seed") is not None else tuple(int(s) for s in str(f["seeds"]).split(",") if s)
    kw = dict(game=f["game"], agent=f["agent"], encoder=f["encoder"], pooling=f["pooling"],
              env_count=f["env_count"], max_steps=f["max_steps"], gamma=f["gamma"], lr=f["lr"],
              temperature=f["temperature"], eval_temperature=f["eval_temperature"], seeds=seeds,
              batch_size=f["batch_size"], eval_window=f["eval_window"],
              priority_fraction=f["priority_fraction"], hidden=f["hidden"], embed_dim=f["embed_dim"],
              clip_norm=f["clip_norm"], log_every=f["log_every"])
    kw.update(override)
    return TrainConfig(**kw)


def _cmd_pretrain(f, out):
    from . import corpus as C
    from .lm import PretrainConfig, heldout_masked_ce, pretrain

    corpus = C.load_corpus(f["corpus"] or C.BUNDLED_CORPUS)
    train, held = C.split_heldout(corpus)
    cfg = PretrainConfig(epochs=f["epochs"], batch_size=f["batch_size"], mask_rate=f["mask_rate"],
                         max_len=f["max_len"], lr=f["lr"], seed=f["seed"], layers=f["layers"],
                         dim=f["dim"], heads=f["heads"], ff_dim=f["ff_dim"], vocab_size=f["vocab_size"])
    enc, history = pretrain(train, cfg)
    Path(f["out"]).parent.mkdir(parents=True, exist_ok=True)
    enc.save(f["out"])
    if history:
        print(f"first batch loss: {history[0]:.4f}  last batch loss: {history[-1]:.4f}", file=out)
    if len(held):
        print(f"heldout masked CE: {heldout_masked_ce(enc, held, cfg):.4f}", file=out)
    print(f"fingerprint: {enc.fingerprint}", file=out)


def _cmd_train(f, out):
    from .harness import aggregate_runs, train_seeds

    cfg = _train_config(f)
    results = train_seeds(cfg, run_dir=f["out"])
    for r in results:
        m = r.metrics
        print(f"seed {m.seed}: last100 {m.final_score:.3f}  max seen {m.max_seen:.1f}  "
              f"episodes {len(m.episode_scores)}", file=out)
    raw, best = aggregate_runs([r.metrics for r in results])
    print(f"final score: {raw:.3f}  max seen: {best:.3f}", file=out)


def _cmd_eval(f, out, transfer=False):
    from .harness import check_action_space, evaluate, load_agent, transfer_eval, _load

    agent = load_agent(f["agent"])
    if transfer:
        score = transfer_eval(agent, f["game"], f["episodes"], f["temperature"], f["seed"])
    else:
        game = _load(f["game"])
        check_action_space(agent, game)
        score = evaluate(agent, game, f["episodes"], f["temperature"], f["seed"])
    print(f"average score: {score:.3f} over {f['episodes']} episodes", file=out)


def _cmd_ablate(f, out):
    from .harness import ablation
    from .lm import FrozenEncoder

    if not f["encoder"]:
        raise UsageError("ablate needs --encoder pointing at a pretrained encoder checkpoint")
    enc = FrozenEncoder.load(f["encoder"])
    configs = {"scratch": _train_config(f, encoder="scratch"), "pretrained": _train_config(f)}
    report = ablation(configs, f["out"], encoders={"pretrained": enc})
    out.write(report.table())
    for arm in configs:
        raw, best = report.aggregate(arm)
        print(f"{arm}: final {raw:.3f}  max seen {best:.3f}  median steps to {report.threshold:g}: "
              f"{report.median_steps(arm):g}", file=out)
    if not enc.verify():
        raise RuntimeError("encoder parameters changed during the ablation")


def _cmd_oracle(f, out):
    from .harness import tabular_oracle

    res = tabular_oracle(f["game"], f["gamma"])
    print(f"optimal return: {res.optimal_return}", file=out)
    print(f"reachable states: {res.n_states}", file=out)
    print("walk: " + "; ".join(res.actions), file=out)


def _cmd_play(f, out, inp):
    from . import env as E

    game = E.load_game_file(E.resolve_game_path(f["game"]))
    state, obs = E.reset(game)
    print(E.render_state_text(obs), file=out)
    for line in inp:
        cmd = line.strip()
        if cmd in ("quit", "exit"):
            break
        if cmd == "valid":
            print(", ".join(a.command_text for a in E.valid_actions(game, state)), file=out)
            continue
        action = E.parse_command(game, cmd)
        if action is None:
            print("unknown command", file=out)
            continue
        state, obs, r, done = E.step(game, state, action)
        print(E.render_state_text(obs), file=out)
        print(f"reward {r}, score {state.cumulative_score}", file=out)
        if done:
            print(f"Episode finished. Score {state.cumulative_score}", file=out)
            break


def _cmd_gen_corpus(f, out):
    from . import corpus as C
    from . import env as E
    from .harness import tabular_oracle

    games = [E.load_game_file(E.resolve_game_path(g)) for g in f["games"].split(",") if g]
    walks = {g.game_id: tabular_oracle(g).actions for g in games}
    corpus = C.generate_corpus(games, f["pairs"], f["seed"], walks, f["optimal_fraction"])
    dest = Path(f["out"]) if f["out"] else C.BUNDLED_CORPUS
    dest.parent.mkdir(parents=True, exist_ok=True)
    C.write_corpus(corpus, dest)
    print(f"wrote {len(corpus)} pairs to {dest}", file=out)


def run(inv: CliInvocation, out=None, inp=None) -> int:
    out = out or sys.stdout
    f = inv.flags
    cmd = inv.subcommand
    if cmd == "pretrain":
        _cmd_pretrain(f, out)
    elif cmd == "train":
        _cmd_train(f, out)
    elif cmd in ("eval", "transfer"):
        _cmd_eval(f, out, transfer=cmd == "transfer")
    elif cmd == "ablate":
        _cmd_ablate(f, out)
    elif cmd == "oracle":
        _cmd_oracle(f, out)
    elif cmd == "play":
        _cmd_play(f, out, inp or sys.stdin)
    elif cmd == "gen-corpus":
        _cmd_gen_corpus(f, out)
    return EXIT_OK


def main(argv=None, out=None, inp=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return run(inv, out, inp)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputFormatError as exc:
        print(f"input format error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IFAgentsError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
