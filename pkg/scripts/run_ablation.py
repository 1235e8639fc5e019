"""Pretrain an encoder on the bundled corpus, then compare DRRN with the
frozen pretrained encoder against the scratch encoder on the held-out game.

    python3 scripts/run_ablation.py --steps 5000 --out runs/ablation
"""

import argparse
from pathlib import Path

from ifagents import corpus as C
from ifagents import harness as H
from ifagents import lm


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--game", default="cottage")
    ap.add_argument("--steps", type=int, default=5_000)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--pooling", default="tokens", choices=("tokens", "cls"))
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = C.split_heldout(C.load_corpus())
    enc, _ = lm.pretrain(train, lm.PretrainConfig())
    enc.save(out / "encoder.ckpt")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    base = dict(game=args.game, max_steps=args.steps, lr=args.lr, seeds=seeds)
    configs = {"scratch": H.TrainConfig(encoder="scratch", **base),
               "pretrained": H.TrainConfig(encoder=str(out / "encoder.ckpt"), pooling=args.pooling, **base)}
    report = H.ablation(configs, out, encoders={"pretrained": enc})
    print(report.table(), end="")
    for arm in configs:
        print(f"{arm}: median steps to {report.threshold:g} = {report.median_steps(arm):g}")
    assert enc.verify(), "encoder changed during training"


if __name__ == "__main__":
    main()
