"""Lockstep rollout collection with episode-aligned batched scoring.

Episodes are numbered globally and each owns an rng stream derived from
(master seed, episode index), so the multiset of trajectories is invariant
to how many worker slots advance in parallel.  Each lockstep step embeds
every live state and candidate set in one batched policy call; each round
scores all terminal graphs in one batched scorer exchange.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from . import sgat
from .fragment_env import FragmentEnv
from .graphs import AttributedGraph


def seed_streams(master_seed: int, n: int) -> list[np.random.Generator]:
    """Reproducible independent streams; stream i depends only on
    (master_seed, i)."""
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        (int(master_seed), int(i))))) for i in range(n)]


def episode_stream(master_seed: int, episode_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((int(master_seed), int(episode_id)))))


@dataclass
class Transition:
    episode: int
    t: int
    state: AttributedGraph
    candidates: tuple[AttributedGraph, ...]
    chosen: int
    log_prob: float
    value: float
    next_state: AttributedGraph
    terminal: bool
    r_main: float = 0.0       # terminal transitions only
    r_innovation: float = 0.0
    reward: float = 0.0       # composed per-step reward


@dataclass
class EpisodeResult:
    episode: int
    transitions: list[Transition]
    final_graph: AttributedGraph
    main_score: float


@dataclass
class SamplerConfig:
    n_workers: int = 4
    master_seed: int = 0
    mode: str = "sample"

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValueError("need at least one worker slot")


def collect(env: FragmentEnv, policy_params: pol.PolicyParams,
            policy_cfg: pol.PolicyConfig, scorer, cfg: SamplerConfig,
            first_episode: int, n_episodes: int,
            cache: sgat.PackCache | None = None) -> list[EpisodeResult]:
    """Run episodes [first_episode, first_episode + n_episodes) in lockstep
    rounds of ``n_workers`` slots."""
    results: list[EpisodeResult] = []
    done = 0
    while done < n_episodes:
        round_ids = [first_episode + done + w
                     for w in range(min(cfg.n_workers, n_episodes - done))]
        results.extend(_run_round(env, policy_params, policy_cfg, scorer,
                                  cfg, round_ids, cache))
        done += len(round_ids)
    return results


def _run_round(env, params, pcfg, scorer, cfg, episode_ids, cache):
    rngs = {ep: episode_stream(cfg.master_seed, ep) for ep in episode_ids}
    states = {ep: env.reset(ep, rngs[ep]) for ep in episode_ids}
    transitions: dict[int, list[Transition]] = {ep: [] for ep in episode_ids}
    live = [ep for ep in episode_ids if not states[ep].terminal]
    while live:
        batch_states = [states[ep].graph for ep in live]
        batch_cands = [list(states[ep].candidates.graphs) for ep in live]
        picks = pol.select_actions(batch_states, batch_cands, params, pcfg,
                                   cfg.mode, [rngs[ep] for ep in live], cache)
        next_live = []
        for ep, (idx, rec) in zip(live, picks):
            st = states[ep]
            nxt = env.step(st, idx)
            transitions[ep].append(Transition(
                episode=ep, t=st.t, state=st.graph,
                candidates=st.candidates.graphs, chosen=idx,
                log_prob=rec.log_prob, value=rec.value,
                next_state=nxt.graph, terminal=nxt.terminal,
            ))
            states[ep] = nxt
            if not nxt.terminal:
                next_live.append(ep)
        live = next_live
    finals = [states[ep].graph for ep in episode_ids]
    scores = scorer.score_batch(finals)  # one batched exchange per round
    out = []
    for ep, g, s in zip(episode_ids, finals, scores):
        trs = transitions[ep]
        if trs:
            trs[-1].r_main = float(s)
        out.append(EpisodeResult(episode=ep, transitions=trs,
                                 final_graph=g, main_score=float(s)))
    return out
