"""Fragment-interchange environment.

States are attributed graphs; actions pick one of the valid one-step
fragment mutations.  A fragment library maps context keys (canonical hashes
of the neighborhood left behind around each attachment point) to the
fragments seen in that context, so substitution preserves local structure.
Transitions are deterministic: the chosen candidate becomes the next state.

Edge attribute convention: column 0 of every edge-attribute row is the bond
order used for valence accounting.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import (
    AttributedGraph,
    GraphFormatError,
    canonical_form,
    serialize_graph,
    wl_hash,
    _parse_record,
)


class LibraryError(ValueError):
    pass


class EnvError(RuntimeError):
    pass


DEFAULT_BOND = 1.0

# Helix layout constants: node i sits at angle i * golden angle with a
# slowly growing radius, so pairwise distances stay distinct and nonzero.
_GOLDEN = 2.399963229728653


def helix_coords(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    r = 1.0 + 0.05 * i
    return np.stack([r * np.cos(_GOLDEN * i), r * np.sin(_GOLDEN * i), 0.35 * i],
                    axis=1)


def with_layout(labels, edges, edge_attrs, extras=None) -> AttributedGraph:
    n = len(labels)
    return AttributedGraph(labels=tuple(labels), coords=helix_coords(n),
                           edges=tuple(edges), edge_attrs=edge_attrs,
                           extras=extras)


# ---------------------------------------------------------------------------
# Fragments and libraries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fragment:
    """A connected subgraph with attachment slots.

    ``attachment_points[k]`` is the fragment node that binds into context
    ``context_keys[k]``; a node may appear more than once (one entry per
    attachment bond).
    """

    graph: AttributedGraph
    attachment_points: tuple[int, ...]
    context_keys: tuple[str, ...]

    def __post_init__(self):
        if len(self.attachment_points) != len(self.context_keys):
            raise LibraryError("attachment points and context keys must align")
        if not self.attachment_points:
            raise LibraryError("fragment needs at least one attachment point")
        for p in self.attachment_points:
            if not 0 <= p < self.graph.n:
                raise LibraryError(f"attachment point {p} out of range")

    @property
    def lookup_key(self) -> tuple[str, ...]:
        return tuple(sorted(self.context_keys))


class FragmentLibrary:
    """Context-keyed interchangeable fragments plus a valence table."""

    def __init__(self, radius: int, valence: dict[int, float],
                 fragments: list[Fragment] | None = None):
        if radius < 0:
            raise LibraryError("context radius must be >= 0")
        self.radius = radius
        self.valence = dict(valence)
        self.entries: dict[tuple[str, ...], list[Fragment]] = {}
        self._forms: dict[tuple, set[str]] = {}
        for f in fragments or []:
            self.add(f)

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def add(self, frag: Fragment) -> bool:
        """Insert unless an equivalent fragment already sits under the key."""
        if not validity(frag.graph, self.valence):
            raise LibraryError("fragment violates its own valence table")
        mult: dict[int, int] = {}
        for p in frag.attachment_points:
            mult[p] = mult.get(p, 0) + 1
        for p, m in mult.items():
            internal = sum(bond_order(frag.graph, k)
                           for _, k in frag.graph.neighbors[p])
            if internal + m > self.valence[frag.graph.labels[p]] + 1e-9:
                raise LibraryError(
                    f"attachment node {p} lacks residual valence for {m} bonds")
        key = frag.lookup_key
        form = _fragment_signature(frag)
        seen = self._forms.setdefault(key, set())
        if form in seen:
            return False
        seen.add(form)
        self.entries.setdefault(key, []).append(frag)
        return True

    def lookup(self, slot_keys) -> list[Fragment]:
        return self.entries.get(tuple(sorted(slot_keys)), [])


def _fragment_signature(frag: Fragment) -> str:
    """Canonical signature of (graph, slot placement, context keys).

    Each slot becomes a phantom node whose label encodes its context key, so
    automorphic placements collapse to one signature.
    """
    g = frag.graph
    keymap = {k: i for i, k in enumerate(sorted(set(frag.context_keys)))}
    n, s = g.n, len(frag.attachment_points)
    labels = list(g.labels) + [1_000_000 + keymap[k] for k in frag.context_keys]
    extras = np.zeros((n + s, g.extras.shape[1]))
    extras[:n] = g.extras
    edges = list(g.edges)
    attrs = list(g.edge_attrs)
    marker = np.full(g.edge_attrs.shape[1] or 1, -1.0)
    width = g.edge_attrs.shape[1]
    for i, p in enumerate(frag.attachment_points):
        edges.append((p, n + i))
        attrs.append(marker[:width] if width else np.zeros(0))
    order = sorted(range(len(edges)), key=lambda k: edges[k])
    aug = AttributedGraph(
        labels=tuple(labels),
        coords=np.zeros((n + s, 3)),
        extras=extras,
        edges=tuple(edges[k] for k in order),
        edge_attrs=(np.stack([attrs[k] for k in order])
                    if attrs else np.zeros((0, width))),
    )
    return canonical_form(aug) + "||" + ",".join(sorted(frag.context_keys))


# ---------------------------------------------------------------------------
# Validity and context keys
# ---------------------------------------------------------------------------

def bond_order(g: AttributedGraph, k: int) -> float:
    if g.edge_attrs.shape[1] < 1:
        raise LibraryError("edge attributes must carry a bond order column")
    return float(g.edge_attrs[k, 0])


def validity(g: AttributedGraph, valence: dict[int, float]) -> bool:
    """True iff connected and every node's total bond order fits its cap."""
    for v in range(g.n):
        if g.labels[v] not in valence:
            raise LibraryError(f"unknown label {g.labels[v]}")
        total = sum(bond_order(g, k) for _, k in g.neighbors[v])
        if total > valence[g.labels[v]] + 1e-9:
            return False
    return g.is_connected()


def _induced(g: AttributedGraph, nodes: list[int]) -> AttributedGraph:
    idx = {v: i for i, v in enumerate(nodes)}
    edges, rows = [], []
    for k, (i, j) in enumerate(g.edges):
        if i in idx and j in idx:
            a, b = idx[i], idx[j]
            edges.append(((a, b) if a < b else (b, a), k))
    edges.sort()
    ea = (g.edge_attrs[[k for _, k in edges]] if edges
          else np.zeros((0, g.edge_attrs.shape[1])))
    return AttributedGraph(
        labels=tuple(g.labels[v] for v in nodes),
        coords=g.coords[nodes],
        extras=g.extras[nodes],
        edges=tuple(e for e, _ in edges),
        edge_attrs=ea,
    )


def context_key(g: AttributedGraph, root: int, radius: int,
                excluded: frozenset[int] = frozenset()) -> str:
    """Canonical hash of the radius-r neighborhood of ``root`` with the
    root node individualized; ``excluded`` nodes are treated as absent."""
    from hashlib import blake2b
    dist = {root: 0}
    frontier = [root]
    for d in range(1, radius + 1):
        nxt = []
        for v in frontier:
            for u, _ in g.neighbors[v]:
                if u not in dist and u not in excluded:
                    dist[u] = d
                    nxt.append(u)
        frontier = nxt
    nodes = sorted(dist)
    sub = _induced(g, nodes)
    rooted = AttributedGraph(
        labels=sub.labels,
        coords=sub.coords,
        # distance-from-root appended as an extra column marks the root and
        # shells, making the hash a rooted-neighborhood invariant
        extras=np.concatenate(
            [sub.extras, np.array([[float(dist[v])] for v in nodes])], axis=1),
        edges=sub.edges,
        edge_attrs=sub.edge_attrs,
    )
    return blake2b(canonical_form(rooted).encode(), digest_size=8).hexdigest()


def single_node_graph(label: int, edge_dim: int = 1, extra_dim: int = 0) -> AttributedGraph:
    return AttributedGraph(labels=(label,), coords=np.zeros((1, 3)),
                           extras=np.zeros((1, extra_dim)),
                           edges=(), edge_attrs=np.zeros((0, edge_dim)))


# ---------------------------------------------------------------------------
# Candidate construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateSet:
    graphs: tuple[AttributedGraph, ...]
    provenance: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.graphs)


def _connected_subsets(g: AttributedGraph, max_size: int):
    """All connected node subsets of size 1..max_size, each exactly once.

    ESU-style enumeration: subsets rooted at their minimum node; the
    ``visited`` set keeps extension candidates disjoint across branches.
    """
    out = []
    n = g.n
    nbrs = [[u for u, _ in g.neighbors[v]] for v in range(n)]

    def extend(sub: tuple[int, ...], ext: list[int], visited: frozenset, floor: int):
        out.append(sub)
        if len(sub) == max_size:
            return
        for i, u in enumerate(ext):
            fresh = [w for w in nbrs[u] if w > floor and w not in visited]
            extend(sub + (u,), ext[i + 1:] + fresh,
                   visited | frozenset(fresh), floor)

    for v in range(n):
        ext0 = [u for u in nbrs[v] if u > v]
        extend((v,), ext0, frozenset(ext0) | {v}, v)
    return out


def _assemble(core: AttributedGraph, frag: AttributedGraph,
              bonds: list[tuple[int, int, np.ndarray]]) -> AttributedGraph:
    """Join core and fragment with the given (core_node, frag_node, attr) bonds."""
    n_core = core.n
    labels = core.labels + frag.labels
    extras = np.concatenate([core.extras, frag.extras], axis=0)
    edges = list(core.edges)
    attrs = [core.edge_attrs[k] for k in range(core.n_edges)]
    for k, (i, j) in enumerate(frag.edges):
        edges.append((i + n_core, j + n_core))
        attrs.append(frag.edge_attrs[k])
    for c, f, a in bonds:
        i, j = c, f + n_core
        edges.append((i, j) if i < j else (j, i))
        attrs.append(np.asarray(a, dtype=np.float64))
    order = sorted(range(len(edges)), key=lambda k: edges[k])
    ea = (np.stack([attrs[k] for k in order]) if attrs
          else np.zeros((0, core.edge_attrs.shape[1])))
    return AttributedGraph(
        labels=labels,
        coords=helix_coords(len(labels)),
        extras=extras,
        edges=tuple(edges[k] for k in order),
        edge_attrs=ea,
    )


def _slot_assignments(slot_keys: list[str], frag: Fragment):
    """Maps slot index -> attachment NODE with matching keys.

    Assignments that bind the same nodes to the same slots are emitted once
    (attachment points repeating a node make full bijections redundant).
    """
    from itertools import permutations as perms
    by_key: dict[str, list[int]] = {}
    for a, k in enumerate(frag.context_keys):
        by_key.setdefault(k, []).append(frag.attachment_points[a])
    groups: dict[str, list[int]] = {}
    for s, k in enumerate(slot_keys):
        groups.setdefault(k, []).append(s)
    if {k: len(v) for k, v in groups.items()} != {k: len(v) for k, v in by_key.items()}:
        return
    keys = sorted(groups)
    pools = [sorted(set(perms(by_key[k]))) for k in keys]

    def rec(ki: int, acc: dict[int, int]):
        if ki == len(keys):
            yield dict(acc)
            return
        slots = groups[keys[ki]]
        for perm in pools[ki]:
            for s, node in zip(slots, perm):
                acc[s] = node
            yield from rec(ki + 1, acc)

    yield from rec(0, {})


def grow(seed_label: int, lib: FragmentLibrary,
         edge_dim: int = 1, extra_dim: int = 0) -> CandidateSet:
    """All valid attachments of single-slot fragments to a lone seed node."""
    if len(lib) == 0:
        raise EnvError("fragment library is empty")
    seed = single_node_graph(seed_label, edge_dim, extra_dim)
    key = context_key(seed, 0, lib.radius)
    default_attr = np.zeros(edge_dim)
    default_attr[0] = DEFAULT_BOND
    graphs, prov, seen = [], [], set()
    for frag in lib.lookup((key,)):
        cand = _assemble(seed, frag.graph,
                         [(0, frag.attachment_points[0], default_attr)])
        try:
            ok = validity(cand, lib.valence)
        except LibraryError:
            ok = False
        if not ok:
            continue
        form = canonical_form(cand)
        if form in seen:
            continue
        seen.add(form)
        graphs.append(cand)
        prov.append(f"grow:{key}")
    if not graphs:
        raise EnvError(f"no fragment attaches to seed label {seed_label}")
    return CandidateSet(graphs=tuple(graphs), provenance=tuple(prov))


def enumerate_mutations(g: AttributedGraph, lib: FragmentLibrary,
                        max_fragment_size: int = 4) -> CandidateSet:
    """Full mutation enumeration: all library-compatible fragment swaps of
    ``g``, validity-filtered and deduplicated by canonical form (the
    original graph itself is never a candidate)."""
    self_form = canonical_form(g)
    graphs, prov = [], []
    seen: set[str] = {self_form}

    def push(cand: AttributedGraph, tag: str):
        try:
            if not validity(cand, lib.valence):
                return
        except LibraryError:
            return
        form = canonical_form(cand)
        if form in seen:
            return
        seen.add(form)
        graphs.append(cand)
        prov.append(tag)

    for sub in _connected_subsets(g, max_fragment_size):
        if len(sub) >= g.n:
            continue
        sset = frozenset(sub)
        core_nodes = [v for v in range(g.n) if v not in sset]
        core = _induced(g, core_nodes)
        core_pos = {v: i for i, v in enumerate(core_nodes)}
        slots = []
        for k, (i, j) in enumerate(g.edges):
            if (i in sset) != (j in sset):
                c = j if i in sset else i
                slots.append((core_pos[c], g.edge_attrs[k]))
        if not slots:
            continue
        slot_keys = [context_key(g, core_nodes[c], lib.radius, excluded=sset)
                     for c, _ in slots]
        frags = lib.lookup(slot_keys)
        if not frags:
            continue
        for fi, frag in enumerate(frags):
            for assign in _slot_assignments(slot_keys, frag):
                bonds = [(slots[s][0], assign[s], slots[s][1])
                         for s in range(len(slots))]
                cand = _assemble(core, frag.graph, bonds)
                push(cand, f"swap:site={sub};frag={fi}")

    return CandidateSet(graphs=tuple(graphs), provenance=tuple(prov))


def mutate(g: AttributedGraph, lib: FragmentLibrary, max_candidates: int,
           rng: np.random.Generator, max_fragment_size: int = 4,
           _cache: "MutationCache | None" = None) -> CandidateSet:
    """Enumerate, filter, dedupe, then uniformly subsample candidates."""
    full = (_cache.get(g, lib, max_fragment_size) if _cache is not None
            else enumerate_mutations(g, lib, max_fragment_size))
    if len(full) <= max_candidates:
        return full
    pick = np.sort(rng.choice(len(full), size=max_candidates, replace=False))
    return CandidateSet(graphs=tuple(full.graphs[i] for i in pick),
                        provenance=tuple(full.provenance[i] for i in pick))


class MutationCache:
    """LRU over full enumerations keyed by the state's canonical form.

    enumerate_mutations is pure, so caching cannot change results.
    """

    def __init__(self, maxsize: int = 256):
        self.maxsize = maxsize
        self._store: OrderedDict[str, CandidateSet] = OrderedDict()

    def get(self, g: AttributedGraph, lib: FragmentLibrary,
            max_fragment_size: int) -> CandidateSet:
        key = canonical_form(g)
        got = self._store.get(key)
        if got is not None:
            self._store.move_to_end(key)
            return got
        out = enumerate_mutations(g, lib, max_fragment_size)
        self._store[key] = out
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return out


# ---------------------------------------------------------------------------
# The decision process
# ---------------------------------------------------------------------------

@dataclass
class EnvConfig:
    horizon: int = 12
    candidates_lo: int = 15
    candidates_hi: int = 20
    max_fragment_size: int = 4
    seed_label: int = 0
    edge_dim: int = 1
    extra_dim: int = 0
    starts: tuple[AttributedGraph, ...] = ()
    resample_candidates: bool = True   # draw the cap per step (training mode)

    def draw_cap(self, rng: np.random.Generator) -> int:
        if not self.resample_candidates or self.candidates_lo == self.candidates_hi:
            return self.candidates_hi
        return int(rng.integers(self.candidates_lo, self.candidates_hi + 1))


@dataclass
class EnvState:
    graph: AttributedGraph
    t: int
    episode_id: int
    rng: np.random.Generator
    candidates: CandidateSet | None
    terminal: bool


class FragmentEnv:
    """Deterministic fragment-swap MDP over a shared read-only library."""

    def __init__(self, lib: FragmentLibrary, cfg: EnvConfig,
                 cache_size: int = 256):
        self.lib = lib
        self.cfg = cfg
        self._cache = MutationCache(cache_size) if cache_size else None

    def _candidates(self, g: AttributedGraph, rng) -> CandidateSet:
        cap = self.cfg.draw_cap(rng)
        return mutate(g, self.lib, cap, rng,
                      self.cfg.max_fragment_size, _cache=self._cache)

    def reset(self, episode_id: int, rng: np.random.Generator) -> EnvState:
        if self.cfg.starts:
            start = self.cfg.starts[episode_id % len(self.cfg.starts)]
        else:
            grown = grow(self.cfg.seed_label, self.lib,
                         self.cfg.edge_dim, self.cfg.extra_dim)
            start = grown.graphs[int(rng.integers(len(grown)))]
        if self.cfg.horizon == 0:
            return EnvState(graph=start, t=0, episode_id=episode_id, rng=rng,
                            candidates=None, terminal=True)
        cands = self._candidates(start, rng)
        terminal = len(cands) == 0
        return EnvState(graph=start, t=0, episode_id=episode_id, rng=rng,
                        candidates=None if terminal else cands,
                        terminal=terminal)

    def step(self, state: EnvState, chosen_index: int) -> EnvState:
        if state.terminal or state.candidates is None:
            raise EnvError("step() on a terminal state")
        if not 0 <= chosen_index < len(state.candidates):
            raise IndexError(
                f"chosen index {chosen_index} out of range "
                f"(candidate set has {len(state.candidates)})")
        g = state.candidates.graphs[chosen_index]
        t = state.t + 1
        if t >= self.cfg.horizon:
            return EnvState(graph=g, t=t, episode_id=state.episode_id,
                            rng=state.rng, candidates=None, terminal=True)
        cands = self._candidates(g, state.rng)
        if len(cands) == 0:
            return EnvState(graph=g, t=t, episode_id=state.episode_id,
                            rng=state.rng, candidates=None, terminal=True)
        return EnvState(graph=g, t=t, episode_id=state.episode_id,
                        rng=state.rng, candidates=cands, terminal=False)


# ---------------------------------------------------------------------------
# Library file format
# ---------------------------------------------------------------------------

def save_library(lib: FragmentLibrary, path) -> None:
    lines = [f"frl {lib.radius} {len(lib)}"]
    for label in sorted(lib.valence):
        cap = lib.valence[label]
        cap_s = str(int(cap)) if float(cap).is_integer() else repr(cap)
        lines.append(f"val {label} {cap_s}")
    body = "\n".join(lines) + "\n"
    for key in sorted(lib.entries):
        for frag in lib.entries[key]:
            body += serialize_graph(frag.graph)
            body += "ap " + " ".join(str(p) for p in frag.attachment_points) + "\n"
            body += "ctx " + " ".join(frag.context_keys) + "\n"
    with open(path, "w") as fh:
        fh.write(body)


def load_library(path) -> FragmentLibrary:
    with open(path) as fh:
        lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    if not lines or not lines[0].startswith("frl "):
        raise LibraryError(f"{path}: missing frl header")
    _, radius_s, count_s = lines[0].split()
    radius, count = int(radius_s), int(count_s)
    pos = 1
    valence: dict[int, float] = {}
    while pos < len(lines) and lines[pos].startswith("val "):
        _, lab, cap = lines[pos].split()
        valence[int(lab)] = float(cap)
        pos += 1
    frags = []
    while pos < len(lines):
        try:
            g, pos = _parse_record(lines, pos)
        except GraphFormatError as exc:
            raise LibraryError(f"{path}: bad fragment graph: {exc}") from exc
        if pos + 1 >= len(lines) or not lines[pos].startswith("ap ") \
                or not lines[pos + 1].startswith("ctx "):
            raise LibraryError(f"{path}: fragment missing ap/ctx lines")
        points = tuple(int(x) for x in lines[pos].split()[1:])
        keys = tuple(lines[pos + 1].split()[1:])
        pos += 2
        frags.append(Fragment(graph=g, attachment_points=points,
                              context_keys=keys))
    if len(frags) != count:
        raise LibraryError(f"{path}: header says {count} fragments, found {len(frags)}")
    return FragmentLibrary(radius=radius, valence=valence, fragments=frags)


# ---------------------------------------------------------------------------
# Corpus-derived libraries
# ---------------------------------------------------------------------------

def library_from_corpus(graphs, radius: int, valence: dict[int, float],
                        max_fragment_size: int = 4) -> FragmentLibrary:
    """Cut every removable fragment out of every corpus graph and file it
    under the context keys of the holes it leaves."""
    lib = FragmentLibrary(radius=radius, valence=valence)
    for g in graphs:
        for sub in _connected_subsets(g, max_fragment_size):
            if len(sub) >= g.n:
                continue
            sset = frozenset(sub)
            sub_list = list(sub)
            frag_pos = {v: i for i, v in enumerate(sub_list)}
            points, keys = [], []
            for k, (i, j) in enumerate(g.edges):
                if (i in sset) != (j in sset):
                    s_node = i if i in sset else j
                    c_node = j if i in sset else i
                    points.append(frag_pos[s_node])
                    keys.append(context_key(g, c_node, radius, excluded=sset))
            if not points:
                continue
            frag_graph = _induced(g, sub_list)
            if not frag_graph.is_connected():
                continue
            try:
                lib.add(Fragment(graph=frag_graph,
                                 attachment_points=tuple(points),
                                 context_keys=tuple(keys)))
            except LibraryError:
                continue
    return lib
