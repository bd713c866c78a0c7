"""Pluggable reward functions and summary metrics.

Main scorers return rewards (higher is better).  Drug-likeness and
synthetic-accessibility analogs run on abstract attributed graphs with
bundled toy constant tables; the constrained and multi-objective
compositions wrap any main scorer.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .fragment_env import validity
from .graphs import AttributedGraph, canonical_form, fingerprint, tanimoto
from .graphs import _refine, _hash, _node_key

log = logging.getLogger("fraggen")


def _data_file(name: str) -> dict:
    with resources.files("fraggen.data").joinpath(name).open() as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Ring analysis (fundamental cycle basis)
# ---------------------------------------------------------------------------

def cycle_basis(g: AttributedGraph) -> list[list[int]]:
    """Fundamental cycles from a BFS spanning forest, deterministic order."""
    parent: dict[int, int] = {}
    depth: dict[int, int] = {}
    order: list[int] = []
    tree_edges: set[tuple[int, int]] = set()
    for root in range(g.n):
        if root in parent:
            continue
        parent[root] = -1
        depth[root] = 0
        queue = [root]
        while queue:
            v = queue.pop(0)
            order.append(v)
            for u, _ in g.neighbors[v]:
                if u not in parent:
                    parent[u] = v
                    depth[u] = depth[v] + 1
                    tree_edges.add((min(u, v), max(u, v)))
                    queue.append(u)
    cycles = []
    for i, j in g.edges:
        if (i, j) in tree_edges:
            continue
        a, b = i, j
        pa, pb = [a], [b]
        while depth[a] > depth[b]:
            a = parent[a]
            pa.append(a)
        while depth[b] > depth[a]:
            b = parent[b]
            pb.append(b)
        while a != b:
            a, b = parent[a], parent[b]
            pa.append(a)
            pb.append(b)
        cycles.append(pa + pb[-2::-1])
    return cycles


def ring_stats(g: AttributedGraph) -> dict[str, int]:
    cycles = [set(c) for c in cycle_basis(g)]
    n_macro = sum(1 for c in cycles if len(c) > 8)
    spiro: set[int] = set()
    bridge: set[int] = set()
    for i in range(len(cycles)):
        for j in range(i + 1, len(cycles)):
            shared = cycles[i] & cycles[j]
            if len(shared) == 1:
                spiro |= shared
            elif len(shared) >= 3:
                bridge |= shared
    return {
        "n_rings": len(cycles),
        "max_ring_size": max((len(c) for c in cycles), default=0),
        "n_macrocycles": n_macro,
        "n_spiro_atoms": len(spiro),
        "n_bridge_atoms": len(bridge),
    }


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------

def _mean_degree(g: AttributedGraph) -> float:
    return 2.0 * g.n_edges / g.n


_DESCRIPTORS = {
    "node_count": lambda g: float(g.n),
    "edge_count": lambda g: float(g.n_edges),
    "mean_degree": _mean_degree,
    "leaf_count": lambda g: float(sum(1 for v in range(g.n) if g.degree(v) <= 1)),
    "total_bond_order": lambda g: float(g.edge_attrs[:, 0].sum()) if g.n_edges else 0.0,
    "ring_count": lambda g: float(ring_stats(g)["n_rings"]),
    "max_ring_size": lambda g: float(ring_stats(g)["max_ring_size"]),
}


def descriptor_value(g: AttributedGraph, desc_id: str) -> float:
    if desc_id.startswith("label_count:"):
        lab = int(desc_id.split(":", 1)[1])
        return float(sum(1 for x in g.labels if x == lab))
    try:
        return _DESCRIPTORS[desc_id](g)
    except KeyError:
        raise ValueError(f"unknown descriptor {desc_id!r}") from None


# ---------------------------------------------------------------------------
# QED
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QedParams:
    """Eight (descriptor id, double-sigmoid constants) entries."""

    entries: tuple[tuple[str, tuple[float, float, float, float, float, float]], ...]

    def __post_init__(self):
        if len(self.entries) != 8:
            raise ValueError("QED takes exactly eight descriptors")

    @classmethod
    def from_dict(cls, d: dict) -> "QedParams":
        entries = tuple(
            (e["id"], (e["a"], e["b"], e["c"], e["d"], e["e"], e["f"]))
            for e in d["descriptors"]
        )
        return cls(entries=entries)


def load_qed_params(path=None) -> QedParams:
    if path is None:
        return QedParams.from_dict(_data_file("qed_toy.json"))
    with open(path) as fh:
        return QedParams.from_dict(json.load(fh))


def double_sigmoid(x: float, a: float, b: float, c: float, d: float,
                   e: float, f: float) -> float:
    z = x - c + d / 2.0
    rise = b / (1.0 + math.exp(-z / e))
    fall = 1.0 - 1.0 / (1.0 + math.exp(-z / f))
    return a + rise * fall


def qed_from_components(d_values) -> float:
    """Geometric mean of the component scores d_i."""
    vals = list(d_values)
    if any(v <= 0.0 for v in vals):
        raise ValueError("QED component scores must be positive")
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


def qed(g: AttributedGraph, params: QedParams) -> float:
    comps = [double_sigmoid(descriptor_value(g, did), *consts)
             for did, consts in params.entries]
    return qed_from_components(comps)


# ---------------------------------------------------------------------------
# Synthetic accessibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaTable:
    radius: int
    scores: dict[str, float]
    default: float = 0.0


def load_sa_table(path=None) -> SaTable:
    d = _data_file("sa_toy.json") if path is None else json.load(open(path))
    return SaTable(radius=int(d["radius"]),
                   scores={k: float(v) for k, v in d["scores"].items()},
                   default=float(d.get("default", 0.0)))


def neighborhood_keys(g: AttributedGraph, radius: int) -> list[str]:
    """Per-node iterated-neighborhood hash at the given radius (the same
    encoding family the fingerprint uses)."""
    colors = [_hash(_node_key(g, v)) for v in range(g.n)]
    for _ in range(radius):
        colors = _refine(g, colors)
    return colors


def sa(g: AttributedGraph, table: SaTable) -> float:
    """fragmentScore minus complexity penalty.

    Stereo centers are undefined on abstract graphs and count as zero.
    """
    frag_score = sum(table.scores.get(k, table.default)
                     for k in neighborhood_keys(g, table.radius))
    rs = ring_stats(g)
    ring_complexity = (math.log(rs["n_bridge_atoms"] + 1)
                       + math.log(rs["n_spiro_atoms"] + 1))
    stereo_complexity = 0.0
    macro_penalty = math.log(rs["n_macrocycles"] + 1)
    size_penalty = g.n ** 1.005 - g.n
    penalty = ring_complexity + stereo_complexity + macro_penalty + size_penalty
    return frag_score - penalty


def sa_star(sa_value: float) -> float:
    """(10 - SA) / 9 with SA clamped into [1, 10]; higher is easier."""
    return (10.0 - min(max(sa_value, 1.0), 10.0)) / 9.0


# ---------------------------------------------------------------------------
# Surrogate penalized-logP-style objective
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogpTable:
    contrib: dict[int, float]
    ring_threshold: int = 6
    ring_coeff: float = 1.0


def load_logp_table(path=None) -> LogpTable:
    d = _data_file("logp_toy.json") if path is None else json.load(open(path))
    return LogpTable(contrib={int(k): float(v) for k, v in d["contrib"].items()},
                     ring_threshold=int(d.get("ring_threshold", 6)),
                     ring_coeff=float(d.get("ring_coeff", 1.0)))


def surrogate_logp(g: AttributedGraph, table: LogpTable) -> float:
    total = 0.0
    for lab in g.labels:
        if lab not in table.contrib:
            raise KeyError(f"no contribution for label {lab}")
        total += table.contrib[lab]
    largest = ring_stats(g)["max_ring_size"]
    return total - table.ring_coeff * max(0, largest - table.ring_threshold)


# ---------------------------------------------------------------------------
# Compositions
# ---------------------------------------------------------------------------

@dataclass
class RewardSpec:
    """Declarative reward composition."""

    kind: str = "single"            # single | constrained | multi
    scorer: str = "surrogate-logp"
    omega: float = 0.6
    mu: float = 8.0
    lam: float = 100.0
    delta: float = 0.4
    fp_radius: int = 2
    fp_width: int = 2048

    def __post_init__(self):
        if self.kind not in ("single", "constrained", "multi"):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


def similarity(a: AttributedGraph, b: AttributedGraph, radius=2, width=2048) -> float:
    return tanimoto(fingerprint(a, radius, width), fingerprint(b, radius, width))


def constrained_reward(r_m: float, g0: AttributedGraph, gT: AttributedGraph,
                       lam: float, delta: float,
                       radius: int = 2, width: int = 2048) -> float:
    sim = similarity(g0, gT, radius, width)
    return r_m - lam * max(0.0, delta - sim)


def multiobjective_reward(r_m: float, qed_value: float, sa_star_value: float,
                          omega: float, mu: float) -> float:
    return omega * r_m + (1.0 - omega) * mu * (qed_value + sa_star_value)


# ---------------------------------------------------------------------------
# Summary metrics
# ---------------------------------------------------------------------------

def summary_metrics(graphs, scores=None, valence=None,
                    fp_radius: int = 2, fp_width: int = 2048) -> dict:
    graphs = list(graphs)
    if not graphs:
        raise ValueError("summary_metrics needs at least one graph")
    forms = [canonical_form(g) for g in graphs]
    uniq = len(set(forms)) / len(graphs)
    fps = [fingerprint(g, fp_radius, fp_width) for g in graphs]
    n = len(graphs)
    if n > 1:
        total = sum(tanimoto(fps[i], fps[j])
                    for i in range(n) for j in range(i + 1, n))
        diversity = 1.0 - total / (n * (n - 1) / 2)
    else:
        diversity = 0.0
    out = {"uniqueness": uniq, "diversity": diversity}
    if valence is not None:
        ok = 0
        for g in graphs:
            try:
                ok += bool(validity(g, valence))
            except Exception:
                pass
        out["validity_frac"] = ok / n
    if scores is not None:
        scores = list(scores)
        out["mean_score"] = float(np.mean(scores))
        out["best_score"] = float(np.max(scores))
    return out
