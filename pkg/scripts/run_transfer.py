"""Train DRRN on one game and evaluate it zero-shot on every bundled game.

    python3 scripts/run_transfer.py --source treasure --steps 30000
"""

import argparse
import time

from ifagents import harness as H
from ifagents import nn


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--source", default="treasure")
    ap.add_argument("--steps", type=int, default=30_000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--episodes", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    res = H.train(H.TrainConfig(game=args.source, max_steps=args.steps, lr=args.lr), args.seed)
    print(f"trained on {args.source}: last-100 {res.metrics.final_score:.2f}")
    for game in ("tworoom", "treasure", "cottage"):
        before = nn.fingerprint(res.agent.params)
        t0 = time.time()
        score = H.transfer_eval(res.agent, game, args.episodes)
        assert nn.fingerprint(res.agent.params) == before
        print(f"{game:10s} {score:6.3f}  ({time.time() - t0:.1f}s)")


if __name__ == "__main__":
    main()
