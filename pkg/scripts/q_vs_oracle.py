"""Train a DRRN agent, then print learned Q next to the oracle Q* for every
valid action along the optimal walk.

    python3 scripts/q_vs_oracle.py --game treasure --steps 10000
"""

import argparse

from ifagents import env as E
from ifagents import harness as H


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--game", default="treasure")
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma", type=float, default=0.9)
    args = ap.parse_args()

    cfg = H.TrainConfig(game=args.game, max_steps=args.steps, lr=args.lr, gamma=args.gamma)
    res = H.train(cfg, args.seed)
    print(f"last-100 {res.metrics.final_score:.2f}  greedy {H.evaluate(res.agent, args.game, 100):.2f}")
    game = E.bundled_game(args.game)
    oracle = H.tabular_oracle(game, args.gamma)
    _, _, edges = H._enumerate_states(game, H.MAX_ORACLE_STATES)
    state, obs = E.reset(game)
    for cmd in oracle.actions:
        out = edges[E.state_hash(state)]
        acts = [a for a, *_ in out]
        qstar = [r + (0.0 if term else args.gamma * oracle.values[k2]) for _, r, term, k2 in out]
        q = res.agent.q_batch([obs], [acts])[0]
        print(f"-- {cmd}")
        for a, qs, ql in sorted(zip(acts, qstar, q), key=lambda x: -x[1]):
            print(f"   {a.command_text:26s} Q* {qs:6.3f}   Q {ql:6.3f}")
        state, obs, _, _ = E.step(game, state, E.parse_command(game, cmd))


if __name__ == "__main__":
    main()
