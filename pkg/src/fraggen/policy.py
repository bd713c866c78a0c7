"""Attention policy over dynamic candidate sets, plus the critic.

The state graph is encoded into a query, every candidate into a key, and a
final feed-forward layer scores each (query, key) pair; the next state is
sampled from the softmax over those scores.  Query and key encoders share
their first ``n_shared`` GNN layers (optionally frozen from pretraining).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import sgat
from .graphs import AttributedGraph


@dataclass
class PolicyConfig:
    encoder: sgat.EncoderConfig
    d_k: int = 64
    final_hidden: int = 256
    critic_depth: int = 3

    @property
    def n_private(self) -> int:
        return self.encoder.n_layers - self.encoder.n_shared


@dataclass
class PolicyParams:
    shared: list[sgat.LayerParams]
    query_layers: list[sgat.LayerParams]
    key_layers: list[sgat.LayerParams]
    query_mlp: sgat.MlpParams
    key_mlp: sgat.MlpParams
    final: sgat.MlpParams
    critic: sgat.MlpParams

    def named(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        for L, lp in enumerate(self.shared):
            out.update(lp.named(f"policy.shared.sgat.layer{L}"))
        for L, lp in enumerate(self.query_layers):
            out.update(lp.named(f"policy.query.sgat.layer{L}"))
        for L, lp in enumerate(self.key_layers):
            out.update(lp.named(f"policy.key.sgat.layer{L}"))
        out.update(self.query_mlp.named("policy.query.mlp"))
        out.update(self.key_mlp.named("policy.key.mlp"))
        out.update(self.final.named("policy.final"))
        out.update(self.critic.named("policy.critic.mlp"))
        return out

    def parameters(self) -> list[ad.Tensor]:
        return list(self.named().values())

    def actor_parameters(self) -> list[ad.Tensor]:
        return [t for n, t in self.named().items()
                if not n.startswith("policy.critic.")]

    def critic_parameters(self) -> list[ad.Tensor]:
        return [t for n, t in self.named().items()
                if n.startswith("policy.critic.")]

    def freeze_shared(self):
        for lp in self.shared:
            for t in lp.named("x").values():
                t.requires_grad = False


def init_policy(cfg: PolicyConfig, rng: np.random.Generator) -> PolicyParams:
    enc = cfg.encoder

    def gnn_layers(n, offset):
        out = []
        for L in range(n):
            d_hn, d_he = enc.head_dims(offset + L)
            out.append(sgat.init_layer(rng, d_hn, d_he, enc.hidden, enc.hidden,
                                       enc.heads))
        return out

    shared = gnn_layers(enc.n_shared, 0)
    query_layers = gnn_layers(cfg.n_private, enc.n_shared)
    key_layers = gnn_layers(cfg.n_private, enc.n_shared)
    head_dims = sgat.mlp_dims(enc, cfg.d_k)
    final_dims = [2 * cfg.d_k, cfg.final_hidden, 1]
    critic_dims = [enc.readout_dim] + [enc.hidden] * (cfg.critic_depth - 1) + [1]
    return PolicyParams(
        shared=shared,
        query_layers=query_layers,
        key_layers=key_layers,
        query_mlp=sgat.init_mlp(rng, head_dims),
        key_mlp=sgat.init_mlp(rng, head_dims),
        final=sgat.init_mlp(rng, final_dims),
        critic=sgat.init_mlp(rng, critic_dims),
    )


@dataclass
class ActionRecord:
    n_candidates: int
    chosen: int
    log_prob: float
    value: float
    entropy: float


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _encode_branch(batch: sgat.GraphBatch, params: PolicyParams,
                   cfg: PolicyConfig, branch: str):
    """Shared layers, then branch-private layers; returns (readout of the
    shared stack, branch head output)."""
    enc = cfg.encoder
    h, e = sgat.run_layers(batch, params.shared, enc)
    shared_read = sgat.readout(h, batch)
    layers = params.query_layers if branch == "query" else params.key_layers
    mlp = params.query_mlp if branch == "query" else params.key_mlp
    if layers:
        h, e = sgat.run_layers(batch, layers, enc, h_nodes=h, h_edges=e)
    head = sgat.run_mlp(sgat.readout(h, batch), mlp, enc.activation)
    return shared_read, head


def shared_embedding(graphs, params: PolicyParams, cfg: PolicyConfig,
                     cache: sgat.PackCache | None = None) -> np.ndarray:
    """Readout of the shared encoder stack (critic / curiosity input)."""
    batch = sgat.pack_graphs(graphs, cfg.encoder, cache)
    with ad.no_grad():
        h, _ = sgat.run_layers(batch, params.shared, cfg.encoder)
        return sgat.readout(h, batch).data


def candidate_logits(query: ad.Tensor, keys: ad.Tensor, cand_graph: np.ndarray,
                     params: PolicyParams, cfg: PolicyConfig) -> ad.Tensor:
    """Score candidates against their state's query embedding.

    ``query`` is (S, d_k), ``keys`` is (C, d_k), ``cand_graph[c]`` names the
    owning state row.  Returns (C, 1) logits.
    """
    if keys.shape[0] == 0:
        raise ValueError("empty candidate set")
    paired = ad.col_concat([ad.gather_rows(query, cand_graph), keys])
    return sgat.run_mlp(paired, params.final, cfg.encoder.activation)


@dataclass
class PolicyForward:
    logits: ad.Tensor        # (C, 1)
    log_probs: ad.Tensor     # (C, 1) log softmax within each state's segment
    probs: ad.Tensor         # (C, 1)
    values: ad.Tensor        # (S, 1) critic on detached shared embedding
    entropy: ad.Tensor       # (S, 1)
    cand_graph: np.ndarray   # (C,)


@dataclass
class PackedPolicyInput:
    """Pre-packed state/candidate batches; reusable across epochs."""

    sbatch: sgat.GraphBatch
    cbatch: sgat.GraphBatch
    cand_graph: np.ndarray
    spec: ad.SegSpec
    n_states: int


def pack_policy_input(states, candidate_lists, cfg: PolicyConfig,
                      cache: sgat.PackCache | None = None) -> PackedPolicyInput:
    states = list(states)
    flat: list[AttributedGraph] = []
    seg: list[int] = []
    for i, cands in enumerate(candidate_lists):
        if len(cands) == 0:
            raise ValueError(f"state {i} has an empty candidate set")
        flat.extend(cands)
        seg.extend([i] * len(cands))
    cand_graph = np.asarray(seg, dtype=np.intp)
    return PackedPolicyInput(
        sbatch=sgat.pack_graphs(states, cfg.encoder, cache),
        cbatch=sgat.pack_graphs(flat, cfg.encoder, cache),
        cand_graph=cand_graph,
        spec=ad.SegSpec(cand_graph, len(states)),
        n_states=len(states),
    )


def policy_forward(states, candidate_lists, params: PolicyParams,
                   cfg: PolicyConfig,
                   cache: sgat.PackCache | None = None,
                   packed: PackedPolicyInput | None = None) -> PolicyForward:
    if packed is None:
        packed = pack_policy_input(states, candidate_lists, cfg, cache)
    cand_graph, spec, n_states = packed.cand_graph, packed.spec, packed.n_states
    shared_read, query = _encode_branch(packed.sbatch, params, cfg, "query")
    _, keys = _encode_branch(packed.cbatch, params, cfg, "key")
    logits = candidate_logits(query, keys, cand_graph, params, cfg)
    probs = ad.segment_softmax(logits, cand_graph, n_states, spec)
    # log-softmax via the logsumexp trick with a detached per-segment max
    mx = ad._seg_max_data(logits.data[:, 0], cand_graph, n_states, spec)
    shifted = ad.sub(logits, ad.constant(mx[cand_graph][:, None]))
    lse = ad.elementwise_activation(
        ad.segment_sum(ad.elementwise_activation(shifted, "exp"),
                       cand_graph, n_states, spec), "log")
    log_probs = ad.sub(shifted, ad.gather_rows(lse, cand_graph))
    ent = ad.scalar_mul(-1.0, ad.segment_sum(ad.mul(probs, log_probs),
                                             cand_graph, n_states, spec))
    values = sgat.run_mlp(ad.stop_grad(shared_read), params.critic,
                          cfg.encoder.activation)
    return PolicyForward(logits=logits, log_probs=log_probs, probs=probs,
                         values=values, entropy=ent, cand_graph=cand_graph)


def select_actions(states, candidate_lists, params: PolicyParams,
                   cfg: PolicyConfig, mode: str, rngs,
                   cache: sgat.PackCache | None = None
                   ) -> list[tuple[int, ActionRecord]]:
    """Batched action selection; one rng stream per state keeps draws
    independent of how states are grouped."""
    if mode not in ("sample", "argmax"):
        raise ValueError(f"unknown mode {mode!r}")
    with ad.no_grad():
        fwd = policy_forward(states, candidate_lists, params, cfg, cache)
    out = []
    offset = 0
    for i, cands in enumerate(candidate_lists):
        n_v = len(cands)
        p = fwd.probs.data[offset:offset + n_v, 0]
        if mode == "argmax":
            idx = int(np.argmax(p))  # ties resolve to the lowest index
        else:
            p = p / p.sum()
            idx = int(rngs[i].choice(n_v, p=p))
        out.append((idx, ActionRecord(
            n_candidates=n_v,
            chosen=idx,
            log_prob=float(fwd.log_probs.data[offset + idx, 0]),
            value=float(fwd.values.data[i, 0]),
            entropy=float(fwd.entropy.data[i, 0]),
        )))
        offset += n_v
    return out


def select_action(state: AttributedGraph, candidates, params: PolicyParams,
                  cfg: PolicyConfig, mode: str,
                  rng: np.random.Generator) -> tuple[int, ActionRecord]:
    return select_actions([state], [list(candidates)], params, cfg, mode,
                          [rng])[0]


def chosen_rows(candidate_lists, chosen_indices) -> np.ndarray:
    offsets = np.cumsum([0] + [len(c) for c in candidate_lists[:-1]])
    rows = []
    for i, (off, idx) in enumerate(zip(offsets, chosen_indices)):
        if not 0 <= idx < len(candidate_lists[i]):
            raise IndexError(f"chosen index {idx} out of range for state {i}")
        rows.append(off + idx)
    return np.asarray(rows, dtype=np.intp)


def evaluate_actions(states, candidate_lists, chosen_indices,
                     params: PolicyParams, cfg: PolicyConfig,
                     cache: sgat.PackCache | None = None,
                     packed: PackedPolicyInput | None = None,
                     rows: np.ndarray | None = None
                     ) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor, PolicyForward]:
    """Differentiable log-probs/values/entropies of stored choices under the
    current parameters."""
    fwd = policy_forward(states, candidate_lists, params, cfg, cache, packed)
    if rows is None:
        rows = chosen_rows(candidate_lists, chosen_indices)
    logp = ad.gather_rows(fwd.log_probs, rows)
    return logp, fwd.values, fwd.entropy, fwd


def value(state: AttributedGraph, params: PolicyParams,
          cfg: PolicyConfig) -> float:
    emb = shared_embedding([state], params, cfg)
    with ad.no_grad():
        v = sgat.run_mlp(ad.constant(emb), params.critic, cfg.encoder.activation)
    return float(v.data[0, 0])


# ---------------------------------------------------------------------------
# Greedy baseline
# ---------------------------------------------------------------------------

def greedy_search(env, scorer, T: int, episode_id: int,
                  rng: np.random.Generator):
    """Pick the best-scoring candidate each step; no learning.

    ``scorer`` maps a list of graphs to a list of rewards (higher better).
    Returns the visited states, the final graph and its score.
    """
    state = env.reset(episode_id, rng)
    visited = [state.graph]
    steps = 0
    while not state.terminal and steps < T:
        scores = scorer(list(state.candidates.graphs))
        best = int(np.argmax(scores))
        state = env.step(state, best)
        visited.append(state.graph)
        steps += 1
    final_score = scorer([state.graph])[0]
    return visited, state.graph, final_score
