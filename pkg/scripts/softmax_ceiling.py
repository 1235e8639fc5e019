"""Exact score distribution of softmax exploration with ideal values.

For DRRN the policy is softmax(Q*/T) over the valid actions. For TDQN each
head is filled with the best Q* of any valid command using that slot and
gamma * V* for slots no valid command uses (the TD fixed point of an invalid
command, which pays 0 and leaves the state unchanged); template and fillers
are then sampled independently. Both bound what a last-100 average measured
under the training temperature can reach.

    python3 scripts/softmax_ceiling.py treasure 1.0 0.5 0.2
"""

import sys

import numpy as np

from ifagents import env as E
from ifagents import harness as H


def _softmax(q, temperature):
    e = np.exp((q - q.max()) / temperature)
    return e / e.sum()


def _drrn_policy(game, oracle, edges, temperature, gamma):
    pol = {}
    for key, out in edges.items():
        q = np.array([r + (0.0 if term else gamma * oracle.values[k2]) for _, r, term, k2 in out])
        pol[key] = (list(zip([(r, term, k2) for _, r, term, k2 in out], _softmax(q, temperature))), 0.0)
    return pol


def _tdqn_policy(game, oracle, edges, temperature, gamma):
    n_t, n_f = len(game.templates), len(game.filler_vocab)
    pol = {}
    for key, out in edges.items():
        base = gamma * oracle.values[key]
        qt, q1, q2 = np.full(n_t, base), np.full(n_f, base), np.full(n_f, base)
        for a, r, term, k2 in out:
            q = r + (0.0 if term else gamma * oracle.values[k2])
            qt[a.template_id] = max(qt[a.template_id], q)
            if a.filler1 is not None:
                q1[a.filler1] = max(q1[a.filler1], q)
            if a.filler2 is not None:
                q2[a.filler2] = max(q2[a.filler2], q)
        pt, p1, p2 = (_softmax(q, temperature) for q in (qt, q1, q2))
        moves = []
        for a, r, term, k2 in out:
            p = pt[a.template_id]
            p *= p1[a.filler1] if a.filler1 is not None else 1.0
            p *= p2[a.filler2] if a.filler2 is not None else 1.0
            moves.append(((r, term, k2), p))
        pol[key] = (moves, 1.0 - sum(p for _, p in moves))
    return pol


def ceiling(game, temperature, gamma=0.9, agent="drrn"):
    """Map final score -> probability within the episode cap."""
    oracle = H.tabular_oracle(game, gamma)
    key0, _, edges = H._enumerate_states(game, H.MAX_ORACLE_STATES)
    build = _drrn_policy if agent == "drrn" else _tdqn_policy
    pol = build(game, oracle, edges, temperature, gamma)
    dist, final = {(key0, 0): 1.0}, {}
    for _ in range(game.episode_cap):
        nxt = {}
        for (key, score), p in dist.items():
            moves, stay = pol[key]
            if stay > 0:
                nxt[(key, score)] = nxt.get((key, score), 0.0) + p * stay
            for (r, term, k2), pa in moves:
                bucket = final if term else nxt
                k = score + r if term else (k2, score + r)
                bucket[k] = bucket.get(k, 0.0) + p * pa
        dist = nxt
    for (_, score), p in dist.items():
        final[score] = final.get(score, 0.0) + p
    return final


if __name__ == "__main__":
    game = E.bundled_game(sys.argv[1] if len(sys.argv) > 1 else "treasure")
    for t in [float(x) for x in sys.argv[2:]] or [1.0]:
        for agent in ("drrn", "tdqn"):
            final = ceiling(game, t, agent=agent)
            mean = sum(s * p for s, p in final.items())
            print(f"{agent} T={t:g}: P(max score)={final.get(game.max_score, 0.0):.4f}  mean score={mean:.3f}")
