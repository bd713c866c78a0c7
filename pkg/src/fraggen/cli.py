"""Command-line entry points: train, evaluate, greedy, pretrain,
constrained, score, metrics.

Configuration is a flat ``key = value`` file; flags override file values;
``--set key=value`` overrides anything else.  Set ``FRAGGEN_LOG`` to
``error``, ``info`` or ``debug`` to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import figures, policy as pol, ppo, pretrain as pt, rewards as rw
from . import sampler as smp, sgat
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, set_key, valid_keys
from .fragment_env import EnvConfig, FragmentEnv, load_library
from .graphs import parse_graphs, serialize_graph, serialize_graphs
from .rnd import RndConfig, RndExplorer
from .scorer import make_scorer
from .toylibs import leafy_library, leafy_start, tiny_library

log = logging.getLogger("fraggen")


def _setup_logging():
    level = os.environ.get("FRAGGEN_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"FRAGGEN_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_library(cfg: RunConfig):
    if cfg.library == "tiny":
        return tiny_library()
    if cfg.library == "leafy2":
        return leafy_library(backbone_len=2)
    if cfg.library == "leafy3":
        return leafy_library(backbone_len=3)
    return load_library(cfg.library)


def load_starts(cfg: RunConfig):
    if not cfg.start_file:
        if cfg.library in ("leafy2", "leafy3"):
            # corpus-derived grammars have no lone-seed contexts; start from
            # the canonical base molecule instead of a cold grow
            return (leafy_start(2 if cfg.library == "leafy2" else 3),)
        return ()
    return tuple(parse_graphs(Path(cfg.start_file).read_text()))


def build_env(cfg: RunConfig, lib, mode: str) -> FragmentEnv:
    if mode == "train":
        env_cfg = EnvConfig(
            horizon=cfg.horizon_train, candidates_lo=cfg.candidates_lo,
            candidates_hi=cfg.candidates_hi, resample_candidates=True,
            max_fragment_size=cfg.max_fragment_size, seed_label=cfg.seed_label,
            edge_dim=cfg.edge_dim, extra_dim=cfg.extra_dim,
            starts=load_starts(cfg))
    else:
        env_cfg = EnvConfig(
            horizon=cfg.horizon_eval, candidates_lo=cfg.candidates_eval,
            candidates_hi=cfg.candidates_eval, resample_candidates=False,
            max_fragment_size=cfg.max_fragment_size, seed_label=cfg.seed_label,
            edge_dim=cfg.edge_dim, extra_dim=cfg.extra_dim,
            starts=load_starts(cfg))
    return FragmentEnv(lib, env_cfg, cache_size=cfg.mutation_cache)


def encoder_config(cfg: RunConfig) -> sgat.EncoderConfig:
    return sgat.EncoderConfig(
        n_labels=cfg.n_labels, extra_dim=cfg.extra_dim, edge_dim=cfg.edge_dim,
        n_layers=cfg.n_layers, hidden=cfg.hidden, heads=cfg.heads,
        spatial_k=cfg.spatial_k, use_spatial=cfg.use_spatial,
        n_shared=cfg.n_shared, mlp_depth=cfg.mlp_depth)


def build_policy(cfg: RunConfig):
    pcfg = pol.PolicyConfig(encoder=encoder_config(cfg), d_k=cfg.d_k,
                            final_hidden=cfg.final_hidden,
                            critic_depth=cfg.critic_depth)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((cfg.seed, 0xA11))))
    params = pol.init_policy(pcfg, rng)
    if cfg.pretrained:
        load_pretrained_encoder(params, pcfg, cfg.pretrained)
    return params, pcfg


def load_pretrained_encoder(params: pol.PolicyParams, pcfg: pol.PolicyConfig,
                            path) -> None:
    """Copy pretrained sgat layers into the shared stack and freeze them."""
    ckpt = load_checkpoint(path)
    loaded = _assign(params, lambda name: _rename_sgat(name, pcfg), ckpt,
                     required=False)
    if not loaded:
        raise CheckpointError(f"{path}: no sgat.layer* parameters found")
    params.freeze_shared()
    log.info("loaded %d pretrained tensors from %s (shared layers frozen)",
             loaded, path)


def _rename_sgat(name: str, pcfg) -> str | None:
    if not name.startswith("policy.shared.sgat."):
        return None
    return name.replace("policy.shared.", "")


def _assign(params: pol.PolicyParams, renamer, ckpt: dict, required: bool) -> int:
    count = 0
    for name, tensor in params.named().items():
        key = renamer(name) if renamer else name
        if key is None:
            continue
        if key not in ckpt:
            if required:
                raise CheckpointError(f"checkpoint missing parameter {key}")
            continue
        arr = ckpt[key]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise CheckpointError(
                f"checkpoint/config dim mismatch for {key}: "
                f"file {tuple(arr.shape)} vs config {tuple(tensor.data.shape)}")
        tensor.data = arr.copy()
        count += 1
    return count


def load_policy_checkpoint(params: pol.PolicyParams,
                           explorer: RndExplorer | None, path) -> None:
    ckpt = load_checkpoint(path)
    _assign(params, None, ckpt, required=True)
    if explorer is not None:
        for name, tensor in explorer.params.named().items():
            if name not in ckpt:
                raise CheckpointError(f"checkpoint missing parameter {name}")
            if tuple(ckpt[name].shape) != tuple(tensor.data.shape):
                raise CheckpointError(
                    f"checkpoint/config dim mismatch for {name}: "
                    f"file {tuple(ckpt[name].shape)} vs config "
                    f"{tuple(tensor.data.shape)}")
            tensor.data = ckpt[name].copy()


def build_rnd(cfg: RunConfig) -> RndExplorer | None:
    if not cfg.use_rnd:
        return None
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((cfg.seed, 0xB22))))
    return RndExplorer(RndConfig(in_dim=cfg.hidden, out_dim=cfg.rnd_dim,
                                 eta=cfg.eta, lr=cfg.lr_rnd,
                                 buffer_capacity=cfg.rnd_buffer), rng)


def reward_spec(cfg: RunConfig) -> rw.RewardSpec:
    return rw.RewardSpec(kind=cfg.objective, scorer=cfg.scorer,
                         omega=cfg.omega, mu=cfg.mu, lam=cfg.lam,
                         delta=cfg.delta, fp_radius=cfg.fp_radius,
                         fp_width=cfg.fp_width)


def trainer_config(cfg: RunConfig) -> ppo.TrainerConfig:
    return ppo.TrainerConfig(
        episodes=cfg.episodes, gamma=cfg.gamma, clip_eps=cfg.clip_eps,
        epochs=cfg.epochs, batch_size=cfg.batch_size, minibatch=cfg.minibatch,
        lr_actor=cfg.lr_actor, lr_critic=cfg.lr_critic, iota=cfg.iota,
        innovation_delay=cfg.innovation_delay,
        innovation_cutoff=cfg.innovation_cutoff,
        entropy_coef=cfg.entropy_coef,
        normalize_advantages=cfg.normalize_advantages,
        checkpoint_every=cfg.checkpoint_every, keep_last=cfg.keep_last,
        seed=cfg.seed)


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lib = build_library(cfg)
    env = build_env(cfg, lib, "train")
    params, pcfg = build_policy(cfg)
    explorer = build_rnd(cfg)
    scorer = make_scorer(cfg.scorer, timeout=cfg.scorer_timeout)
    composer = ppo.RewardComposer(reward_spec(cfg))
    try:
        res = ppo.train(trainer_config(cfg), env, scorer, params, pcfg,
                        explorer, smp.SamplerConfig(n_workers=cfg.workers,
                                                    master_seed=cfg.seed),
                        composer=composer, out_dir=out)
    finally:
        scorer.close()
    graphs = [g for g, _ in res.recent]
    scores = [s for _, s in res.recent]
    (out / "graphs.atg").write_text(serialize_graphs(graphs))
    with (out / "scores.csv").open("w") as fh:
        fh.write("index,reward\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{_fmt(s)}\n")
    if cfg.figures and res.history:
        figures.training_figure(res.history, out / "reward_curve.png")
    log.info("run directory: %s", out)
    return out


def _rollout_outputs(cfg: RunConfig, out: Path, episodes, composer) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    graphs, mains, rewards = [], [], []
    for ep in episodes:
        start = ep.transitions[0].state if ep.transitions else ep.final_graph
        graphs.append(ep.final_graph)
        mains.append(ep.main_score)
        rewards.append(composer.terminal_reward(start, ep.final_graph,
                                                ep.main_score))
    (out / "graphs.atg").write_text(serialize_graphs(graphs))
    with (out / "scores.csv").open("w") as fh:
        fh.write("episode,main_score,reward\n")
        for ep, m, r in zip(episodes, mains, rewards):
            fh.write(f"{ep.episode},{_fmt(m)},{_fmt(r)}\n")
    met = rw.summary_metrics(graphs, scores=rewards)
    with (out / "summary.csv").open("w") as fh:
        fh.write("uniqueness,diversity,mean_score,best_score\n")
        fh.write(",".join(_fmt(met[k]) for k in
                          ("uniqueness", "diversity", "mean_score",
                           "best_score")) + "\n")
    if cfg.figures:
        figures.score_histogram(rewards, out / "score_hist.png", "reward")
    return out


def cmd_evaluate(cfg: RunConfig, checkpoint: str) -> Path:
    out = Path(cfg.out)
    lib = build_library(cfg)
    env = build_env(cfg, lib, "eval")
    params, pcfg = build_policy(cfg)
    explorer = build_rnd(cfg)
    load_policy_checkpoint(params, explorer, checkpoint)
    scorer = make_scorer(cfg.scorer, timeout=cfg.scorer_timeout)
    composer = ppo.RewardComposer(reward_spec(cfg))
    try:
        episodes = smp.collect(env, params, pcfg, scorer,
                               smp.SamplerConfig(n_workers=cfg.workers,
                                                 master_seed=cfg.seed,
                                                 mode="argmax"),
                               first_episode=0, n_episodes=cfg.eval_episodes)
    finally:
        scorer.close()
    out = _rollout_outputs(cfg, out, episodes, composer)
    manifest = {
        "mode": "argmax",
        "checkpoint": str(checkpoint),
        "episodes": cfg.eval_episodes,
        "horizon": cfg.horizon_eval,
        "candidates": cfg.candidates_eval,
        "scorer": cfg.scorer,
        "objective": cfg.objective,
        "seed": cfg.seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("evaluation outputs in %s", out)
    return out


def cmd_greedy(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    lib = build_library(cfg)
    env = build_env(cfg, lib, "eval")
    scorer = make_scorer(cfg.scorer, timeout=cfg.scorer_timeout)
    composer = ppo.RewardComposer(reward_spec(cfg))
    episodes = []
    try:
        for ep in range(cfg.eval_episodes):
            rng = smp.episode_stream(cfg.seed, ep)
            _, final, score = pol.greedy_search(
                env, scorer.score_batch, cfg.horizon_eval, ep, rng)
            episodes.append(smp.EpisodeResult(
                episode=ep, transitions=[], final_graph=final,
                main_score=score))
    finally:
        scorer.close()
    out = _rollout_outputs(cfg, out, episodes, composer)
    log.info("greedy outputs in %s", out)
    return out


def cmd_pretrain(cfg: RunConfig) -> Path:
    if not cfg.dataset:
        raise ConfigError("pretrain needs dataset = <path>")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = pt.load_dataset(cfg.dataset)
    enc_cfg = encoder_config(cfg)
    res = pt.pretrain(pairs, enc_cfg,
                      pt.PretrainConfig(epochs=cfg.pretrain_epochs,
                                        minibatch=cfg.pretrain_minibatch,
                                        lr=cfg.pretrain_lr, seed=cfg.seed),
                      csv_path=out / "pretrain_loss.csv")
    save_checkpoint(out / "encoder.dgpn",
                    {k: v.data for k, v in res.named_params().items()})
    if cfg.figures:
        figures.pretrain_figure(res.history, out / "loss_curve.png")
    log.info("pretrained encoder in %s", out)
    return out


def cmd_constrained(cfg: RunConfig) -> Path:
    if cfg.objective != "constrained":
        cfg.objective = "constrained"
    starts = load_starts(cfg)
    if not starts:
        raise ConfigError("constrained runs need start molecules "
                          "(start_file or a bundled library with starts)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lib = build_library(cfg)
    rows = []
    for delta in cfg.deltas():
        sub = RunConfig(**{**cfg.__dict__})
        sub.delta = delta
        sub.out = str(out / f"delta_{delta:g}")
        env = build_env(sub, lib, "train")
        params, pcfg = build_policy(sub)
        explorer = build_rnd(sub)
        scorer = make_scorer(sub.scorer, timeout=sub.scorer_timeout)
        composer = ppo.RewardComposer(reward_spec(sub))
        try:
            ppo.train(trainer_config(sub), env, scorer, params, pcfg,
                      explorer, smp.SamplerConfig(n_workers=sub.workers,
                                                  master_seed=sub.seed),
                      composer=composer, out_dir=Path(sub.out))
            eval_env = build_env(sub, lib, "eval")
            episodes = smp.collect(
                eval_env, params, pcfg, scorer,
                smp.SamplerConfig(n_workers=sub.workers,
                                  master_seed=sub.seed + 1, mode="argmax"),
                first_episode=0, n_episodes=max(len(starts), 20))
        finally:
            scorer.close()
        imps, sims = [], []
        for ep in episodes:
            start = starts[ep.episode % len(starts)]
            base = make_scorer(sub.scorer).score_batch([start])[0]
            imps.append(ep.main_score - base)
            sims.append(rw.similarity(start, ep.final_graph,
                                      sub.fp_radius, sub.fp_width))
        rows.append((delta, float(np.mean(imps)), float(np.std(imps)),
                     float(np.mean(sims)), float(np.std(sims))))
        log.info("delta %.2f: improvement %.3f+-%.3f similarity %.3f+-%.3f",
                 *rows[-1])
    with (out / "constrained.csv").open("w") as fh:
        fh.write("delta,improvement_mean,improvement_std,"
                 "similarity_mean,similarity_std\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    if cfg.figures:
        figures.constrained_figure(rows, out / "constrained.png")
    return out


def cmd_score(cfg: RunConfig, graphs_path: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    graphs = parse_graphs(Path(graphs_path).read_text())
    scorer = make_scorer(cfg.scorer, timeout=cfg.scorer_timeout)
    try:
        scores = scorer.score_batch(graphs)
    finally:
        scorer.close()
    path = out / "scores.csv"
    with path.open("w") as fh:
        fh.write("index,reward\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{_fmt(s)}\n")
    return path


def cmd_metrics(cfg: RunConfig, graphs_path: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    graphs = parse_graphs(Path(graphs_path).read_text())
    lib = build_library(cfg)
    met = rw.summary_metrics(graphs, valence=lib.valence,
                             fp_radius=cfg.fp_radius, fp_width=cfg.fp_width)
    path = out / "metrics_summary.csv"
    with path.open("w") as fh:
        keys = sorted(met)
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(_fmt(met[k]) for k in keys) + "\n")
    return path


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--objective", choices=["single", "constrained", "multi"])
    p.add_argument("--omega", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--iota", type=float)
    p.add_argument("--scorer",
                   help="surrogate-logp | qed | sa | node-count | "
                        "label-count:<k> | external:<cmd>")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable. Valid keys: "
                        + ", ".join(valid_keys()))


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for flag in ("seed", "workers", "objective", "omega", "delta", "iota",
                 "scorer", "out"):
        val = getattr(args, flag, None)
        if val is not None:
            set_key(cfg, "lam" if flag == "lambda" else flag, str(val))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        set_key(cfg, key.strip(), raw)
    return cfg


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="fraggen",
        description="Fragment-based attributed-graph generation with an "
                    "attention policy, PPO and curiosity rewards.")
    sub = ap.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy")
    _add_common(p_train)

    p_eval = sub.add_parser("evaluate", help="argmax rollouts of a checkpoint")
    p_eval.add_argument("checkpoint")
    _add_common(p_eval)

    p_greedy = sub.add_parser("greedy", help="greedy baseline rollouts")
    _add_common(p_greedy)

    p_pre = sub.add_parser("pretrain", help="supervised encoder pretraining")
    _add_common(p_pre)

    p_con = sub.add_parser("constrained",
                           help="sweep similarity thresholds (delta_list)")
    _add_common(p_con)

    p_score = sub.add_parser("score", help="score an ATG multi-record file")
    p_score.add_argument("graphs")
    _add_common(p_score)

    p_met = sub.add_parser("metrics", help="summary metrics of an ATG file")
    p_met.add_argument("graphs")
    _add_common(p_met)

    args = ap.parse_args(argv)
    _setup_logging()
    try:
        cfg = _resolve(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint)
        elif args.command == "greedy":
            cmd_greedy(cfg)
        elif args.command == "pretrain":
            cmd_pretrain(cfg)
        elif args.command == "constrained":
            cmd_constrained(cfg)
        elif args.command == "score":
            cmd_score(cfg, args.graphs)
        elif args.command == "metrics":
            cmd_metrics(cfg, args.graphs)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
