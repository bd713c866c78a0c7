"""Clipped-surrogate policy optimization over lockstep rollout batches.

Per iteration: collect a batch of episodes with the frozen snapshot, attach
innovation and terminal rewards, compute reward-to-go and advantages, run
several epochs of minibatch updates, then refresh the curiosity predictor.
The old policy is implicitly cloned each iteration: stored log-probs come
from the snapshot the batch was collected with.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import policy as pol
from . import rewards as rw
from . import sampler as smp
from . import sgat
from .checkpoint import save_checkpoint
from .fragment_env import FragmentEnv
from .rnd import RndExplorer

log = logging.getLogger("fraggen")


@dataclass
class TrainerConfig:
    episodes: int = 2000
    gamma: float = 0.99
    clip_eps: float = 0.1
    epochs: int = 30
    batch_size: int = 300          # transitions collected per iteration
    minibatch: int = 64
    lr_actor: float = 2e-3
    lr_critic: float = 1e-4
    iota: float = 0.1
    innovation_delay: int = 100
    innovation_cutoff: int = 1000
    entropy_coef: float = 0.01
    normalize_advantages: bool = True
    checkpoint_every: int = 10
    keep_last: int = 1000          # generated-set size emitted at the end
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip epsilon must lie in (0, 1)")


@dataclass
class RewardComposer:
    """Terminal-reward transform per the configured objective."""

    spec: rw.RewardSpec
    qed_params: rw.QedParams | None = None
    sa_table: rw.SaTable | None = None

    def __post_init__(self):
        if self.spec.kind == "multi":
            self.qed_params = self.qed_params or rw.load_qed_params()
            self.sa_table = self.sa_table or rw.load_sa_table()

    def terminal_reward(self, start, final, main_score: float) -> float:
        if self.spec.kind == "single":
            return main_score
        if self.spec.kind == "constrained":
            return rw.constrained_reward(main_score, start, final,
                                         self.spec.lam, self.spec.delta,
                                         self.spec.fp_radius, self.spec.fp_width)
        q = rw.qed(final, self.qed_params)
        s = rw.sa_star(rw.sa(final, self.sa_table))
        return rw.multiobjective_reward(main_score, q, s,
                                        self.spec.omega, self.spec.mu)


def returns_and_advantages(transitions: list[smp.Transition], gamma: float
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Realized reward-to-go and critic-baselined advantages (pre-norm)."""
    if not transitions:
        raise ValueError("empty episode")
    T = len(transitions)
    q = np.zeros(T)
    acc = 0.0
    for i in range(T - 1, -1, -1):
        acc = transitions[i].reward + gamma * acc
        q[i] = acc
    values = np.array([tr.value for tr in transitions])
    return q, q - values


def compose_reward(episode: smp.EpisodeResult, terminal_reward: float,
                   iota: float, in_window: bool) -> None:
    """Attach per-transition scalar rewards in place."""
    for tr in episode.transitions:
        tr.reward = iota * tr.r_innovation if in_window else 0.0
        if tr.terminal:
            tr.reward += terminal_reward


def ppo_loss(logp_new: ad.Tensor, values: ad.Tensor, entropy: ad.Tensor,
             logp_old: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
             clip_eps: float, entropy_coef: float
             ) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """(actor loss incl. entropy bonus, critic loss, mean entropy)."""
    ratio = ad.elementwise_activation(
        ad.sub(logp_new, ad.constant(logp_old.reshape(-1, 1))), "exp")
    if not np.all(np.isfinite(ratio.data)):
        raise RuntimeError(
            "non-finite policy ratio; log-prob range "
            f"[{logp_new.data.min():.3g}, {logp_new.data.max():.3g}]")
    adv = ad.constant(advantages.reshape(-1, 1))
    surr = ad.minimum(ad.mul(ratio, adv),
                      ad.mul(ad.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv))
    mean_entropy = ad.reduce_mean(entropy)
    actor = ad.sub(ad.scalar_mul(-1.0, ad.reduce_mean(surr)),
                   ad.scalar_mul(entropy_coef, mean_entropy))
    diff = ad.sub(values, ad.constant(returns.reshape(-1, 1)))
    critic = ad.reduce_mean(ad.mul(diff, diff))
    return actor, critic, mean_entropy


@dataclass
class IterationRow:
    iteration: int
    episode: int
    mean_reward: float
    best_reward: float
    actor_loss: float
    critic_loss: float
    rnd_loss: float
    entropy: float
    unique_frac: float
    diversity: float

    HEADER = ("iter,episode,mean_reward,best_reward,actor_loss,critic_loss,"
              "rnd_loss,entropy,unique_frac,diversity")

    def as_csv(self) -> str:
        def f(x):
            return format(float(x), ".9g")
        return ",".join([str(self.iteration), str(self.episode),
                         f(self.mean_reward), f(self.best_reward),
                         f(self.actor_loss), f(self.critic_loss),
                         f(self.rnd_loss), f(self.entropy),
                         f(self.unique_frac), f(self.diversity)])


@dataclass
class TrainResult:
    history: list[IterationRow]
    episode_rewards: list[float]       # composed terminal reward per episode
    recent: deque                      # (graph, composed terminal reward)
    checkpoint_path: Path | None


def policy_checkpoint(params: pol.PolicyParams, explorer: RndExplorer | None
                      ) -> dict[str, np.ndarray]:
    out = {k: v.data for k, v in params.named().items()}
    if explorer is not None:
        out.update({k: v.data for k, v in explorer.params.named().items()})
    return out


def train(cfg: TrainerConfig, env: FragmentEnv, scorer,
          params: pol.PolicyParams, pcfg: pol.PolicyConfig,
          explorer: RndExplorer | None, sampler_cfg: smp.SamplerConfig,
          composer: RewardComposer | None = None,
          out_dir: Path | None = None) -> TrainResult:
    composer = composer or RewardComposer(rw.RewardSpec(kind="single"))
    horizon = env.cfg.horizon
    episodes_per_iter = max(1, math.ceil(cfg.batch_size / max(1, horizon)))
    opt_actor = ad.Adam(params.actor_parameters(), lr=cfg.lr_actor)
    opt_critic = ad.Adam(params.critic_parameters(), lr=cfg.lr_critic)
    trainer_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((cfg.seed, 0x7E11))))
    cache = sgat.PackCache(pcfg.encoder)

    history: list[IterationRow] = []
    episode_rewards: list[float] = []
    recent: deque = deque(maxlen=cfg.keep_last)
    best = -np.inf
    episodes_done = 0
    iteration = 0
    csv_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "metrics.csv"
        csv_path.write_text(IterationRow.HEADER + "\n")

    while episodes_done < cfg.episodes:
        n_ep = min(episodes_per_iter, cfg.episodes - episodes_done)
        iteration += 1
        batch_eps = smp.collect(env, params, pcfg, scorer, sampler_cfg,
                                first_episode=episodes_done, n_episodes=n_ep,
                                cache=cache)

        # innovation rewards on the explored next states, chronological
        rnd_loss = 0.0
        all_next = [tr.next_state for ep in batch_eps for tr in ep.transitions]
        if explorer is not None and all_next:
            embs = pol.shared_embedding(all_next, params, pcfg, cache)
            rewards = explorer.rewards(embs)
            k = 0
            for ep in batch_eps:
                for tr in ep.transitions:
                    tr.r_innovation = float(rewards[k])
                    k += 1

        transitions: list[smp.Transition] = []
        q_parts, a_parts = [], []
        iter_rewards = []
        for ep in batch_eps:
            start = ep.transitions[0].state if ep.transitions else ep.final_graph
            r_terminal = composer.terminal_reward(start, ep.final_graph,
                                                  ep.main_score)
            in_window = (cfg.innovation_delay <= ep.episode
                         < cfg.innovation_cutoff) and explorer is not None
            compose_reward(ep, r_terminal, cfg.iota, in_window)
            episode_rewards.append(r_terminal)
            iter_rewards.append(r_terminal)
            recent.append((ep.final_graph, r_terminal))
            best = max(best, r_terminal)
            if ep.transitions:
                q, a = returns_and_advantages(ep.transitions, cfg.gamma)
                q_parts.append(q)
                a_parts.append(a)
                transitions.extend(ep.transitions)
        episodes_done += n_ep

        if not transitions:
            continue
        returns = np.concatenate(q_parts)
        advantages = np.concatenate(a_parts)
        if cfg.normalize_advantages:
            std = advantages.std()
            advantages = (advantages - advantages.mean()) / (std + 1e-8)
        logp_old = np.array([tr.log_prob for tr in transitions])

        actor_losses, critic_losses, entropies = [], [], []
        n = len(transitions)
        # one random partition per iteration, revisited each epoch, so
        # minibatch graph packs are built once
        order = trainer_rng.permutation(n)
        minibatches = []
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            mb = [transitions[i] for i in idx]
            cands = [list(tr.candidates) for tr in mb]
            packed = pol.pack_policy_input([tr.state for tr in mb], cands,
                                           pcfg, cache)
            rows = pol.chosen_rows(cands, [tr.chosen for tr in mb])
            minibatches.append((idx, packed, rows))
        for _ in range(cfg.epochs):
            for idx, packed, rows in minibatches:
                logp, values, entropy, _ = pol.evaluate_actions(
                    None, None, None, params, pcfg, packed=packed, rows=rows)
                actor, critic, ment = ppo_loss(
                    logp, values, entropy, logp_old[idx], advantages[idx],
                    returns[idx], cfg.clip_eps, cfg.entropy_coef)
                total = ad.add(actor, critic)
                if not np.isfinite(total.data):
                    raise RuntimeError(
                        f"non-finite PPO loss at iteration {iteration}")
                opt_actor.zero_grad()
                opt_critic.zero_grad()
                total.backward()
                opt_actor.step()
                opt_critic.step()
                actor_losses.append(actor.item())
                critic_losses.append(critic.item())
                entropies.append(ment.item())

        if explorer is not None and all_next:
            embs = pol.shared_embedding(all_next, params, pcfg, cache)
            rnd_loss = explorer.update(embs)

        finals = [ep.final_graph for ep in batch_eps]
        met = rw.summary_metrics(finals)
        row = IterationRow(
            iteration=iteration, episode=episodes_done,
            mean_reward=float(np.mean(iter_rewards)), best_reward=float(best),
            actor_loss=float(np.mean(actor_losses)),
            critic_loss=float(np.mean(critic_losses)),
            rnd_loss=float(rnd_loss), entropy=float(np.mean(entropies)),
            unique_frac=met["uniqueness"], diversity=met["diversity"])
        history.append(row)
        if csv_path is not None:
            with csv_path.open("a") as fh:
                fh.write(row.as_csv() + "\n")
        log.info("iter %d ep %d mean %.3f best %.3f", iteration, episodes_done,
                 row.mean_reward, row.best_reward)
        if out_dir is not None and cfg.checkpoint_every \
                and iteration % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"ckpt_{iteration:04d}.dgpn",
                            policy_checkpoint(params, explorer))

    ckpt = None
    if out_dir is not None:
        ckpt = Path(out_dir) / "final.dgpn"
        save_checkpoint(ckpt, policy_checkpoint(params, explorer))
    return TrainResult(history=history, episode_rewards=episode_rewards,
                       recent=recent, checkpoint_path=ckpt)
