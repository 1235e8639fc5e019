"""Train DRRN over several seeds and report final last-100 and greedy scores.

    python3 scripts/sweep_drrn.py --game treasure --steps 30000 --seeds 0,1,2,3,4
"""

import argparse
import time

from ifagents import harness as H


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--game", default="treasure")
    ap.add_argument("--agent", default="drrn", choices=("drrn", "tdqn"))
    ap.add_argument("--steps", type=int, default=30_000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--threshold", type=float, default=None)
    ap.add_argument("--temperature", type=float, default=1.0)
    args = ap.parse_args()

    cfg = H.TrainConfig(game=args.game, agent=args.agent, max_steps=args.steps, lr=args.lr,
                        temperature=args.temperature, hidden=args.hidden, embed_dim=args.hidden)
    for seed in (int(s) for s in args.seeds.split(",")):
        t0 = time.time()
        res = H.train(cfg, seed, threshold=args.threshold)
        m = res.metrics
        greedy = H.evaluate(res.agent, args.game, 100)
        print(f"seed {seed}: last-100 {m.final_score:.2f}  max seen {m.max_seen}  greedy {greedy:.2f}  "
              f"first step >= threshold {m.steps_to_threshold}  {time.time() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
