"""Attributed spatial graphs: ATG v1 serialization, canonical forms,
fingerprints, similarity and inverse-distance matrices.

A graph is the triple (adjacency, node attributes, edge attributes) plus a
3-D coordinate per node.  Node attributes are an integer label and a vector
of extra scalars; edge attributes are a float vector per undirected edge.
All functions here are pure; graphs are immutable once constructed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from hashlib import blake2b
from itertools import permutations

import numpy as np

_FLOAT_FMT = ".9g"


class GraphFormatError(ValueError):
    """Raised for malformed ATG v1 text."""


def _fmt(x: float) -> str:
    s = format(float(x), _FLOAT_FMT)
    return "-0" if s == "-0" else s


def _hash(s: str) -> str:
    return blake2b(s.encode(), digest_size=16).hexdigest()


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Immutable attributed graph with spatial coordinates.

    ``edges`` are unordered pairs stored with the lower index first and
    sorted lexicographically; ``edge_attrs`` rows are parallel to ``edges``.
    Connectivity is *not* enforced here (candidate construction needs to
    build first and filter later); the environment's validity check owns it.
    """

    labels: tuple[int, ...]
    coords: np.ndarray
    edges: tuple[tuple[int, int], ...]
    edge_attrs: np.ndarray
    extras: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.labels)
        if n < 1:
            raise ValueError("graph needs at least one node")
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.float64))
        if coords.shape != (n, 3):
            raise ValueError(f"coords shape {coords.shape} != ({n}, 3)")
        extras = self.extras
        if extras is None:
            extras = np.zeros((n, 0))
        extras = np.ascontiguousarray(np.asarray(extras, dtype=np.float64))
        if extras.ndim != 2 or extras.shape[0] != n:
            raise ValueError("extras must be (n, k)")
        e = len(self.edges)
        attrs = np.ascontiguousarray(np.asarray(self.edge_attrs, dtype=np.float64))
        if attrs.ndim != 2 or attrs.shape[0] != e:
            raise ValueError("edge_attrs must be (e, d_e)")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) out of range")
            if i >= j:
                raise ValueError(f"edge ({i},{j}) must have i < j")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
        order = sorted(range(e), key=lambda k: self.edges[k])
        if order != list(range(e)):
            object.__setattr__(self, "edges", tuple(self.edges[k] for k in order))
            attrs = attrs[order]
        for a in (coords, extras, attrs):
            a.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "extras", extras)
        object.__setattr__(self, "edge_attrs", attrs)
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbors(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node, tuple of (neighbor, edge index) sorted by neighbor."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for k, (i, j) in enumerate(self.edges):
            adj[i].append((j, k))
            adj[j].append((i, k))
        return tuple(tuple(sorted(a)) for a in adj)

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for u, _ in self.neighbors[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == self.n

    def edge_attr(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        k = self._edge_index.get((i, j))
        if k is None:
            raise KeyError(f"no edge ({i},{j})")
        return self.edge_attrs[k]

    @cached_property
    def _edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    @cached_property
    def _node_keys(self) -> tuple[str, ...]:
        return tuple(
            f"{self.labels[v]}:" + ",".join(_fmt(x) for x in self.extras[v])
            for v in range(self.n)
        )

    @cached_property
    def _edge_keys(self) -> tuple[str, ...]:
        return tuple(
            ",".join(_fmt(x) for x in self.edge_attrs[k])
            for k in range(self.n_edges)
        )


def apply_permutation(g: AttributedGraph, perm) -> AttributedGraph:
    """Relabel nodes; ``perm[old] = new``. Attributes follow their nodes."""
    perm = list(perm)
    inv = [0] * g.n
    for old, new in enumerate(perm):
        inv[new] = old
    edges = []
    for k, (i, j) in enumerate(g.edges):
        a, b = perm[i], perm[j]
        edges.append(((a, b) if a < b else (b, a), k))
    edges.sort()
    return AttributedGraph(
        labels=tuple(g.labels[inv[v]] for v in range(g.n)),
        coords=g.coords[inv],
        extras=g.extras[inv],
        edges=tuple(e for e, _ in edges),
        edge_attrs=g.edge_attrs[[k for _, k in edges]],
    )


# ---------------------------------------------------------------------------
# ATG v1 text format
# ---------------------------------------------------------------------------

def serialize_graph(g: AttributedGraph) -> str:
    """ATG v1: `t n e`, then `v idx label x y z extras...`, then `e i j attrs...`.

    Floats use 9 significant digits; lines end with LF.
    """
    lines = [f"t {g.n} {g.n_edges}"]
    for v in range(g.n):
        floats = list(g.coords[v]) + list(g.extras[v])
        lines.append(f"v {v} {g.labels[v]} " + " ".join(_fmt(x) for x in floats))
    for k, (i, j) in enumerate(g.edges):
        attrs = " ".join(_fmt(x) for x in g.edge_attrs[k])
        lines.append(f"e {i} {j} {attrs}".rstrip())
    return "\n".join(lines) + "\n"


def serialize_graphs(graphs) -> str:
    return "".join(serialize_graph(g) for g in graphs)


def _parse_record(lines: list[str], pos: int) -> tuple[AttributedGraph, int]:
    head = lines[pos].split()
    if len(head) != 3 or head[0] != "t":
        raise GraphFormatError(f"line {pos + 1}: malformed header {lines[pos]!r}")
    try:
        n, e = int(head[1]), int(head[2])
    except ValueError:
        raise GraphFormatError(f"line {pos + 1}: malformed header counts") from None
    if n < 1 or e < 0:
        raise GraphFormatError(f"line {pos + 1}: bad counts n={n} e={e}")
    if pos + 1 + n + e > len(lines):
        raise GraphFormatError("truncated record")
    labels, coords, extras = [], [], []
    width = None
    for r in range(n):
        f = lines[pos + 1 + r].split()
        if len(f) < 5 or f[0] != "v":
            raise GraphFormatError(f"line {pos + 2 + r}: malformed node line")
        if int(f[1]) != r:
            raise GraphFormatError(f"line {pos + 2 + r}: node index {f[1]} != {r}")
        vals = [float(x) for x in f[3:]]
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise GraphFormatError(f"line {pos + 2 + r}: ragged node attributes")
        labels.append(int(f[2]))
        coords.append(vals[:3])
        extras.append(vals[3:])
    edges, attrs = [], []
    d_e = None
    for r in range(e):
        f = lines[pos + 1 + n + r].split()
        if len(f) < 3 or f[0] != "e":
            raise GraphFormatError(f"line {pos + 2 + n + r}: malformed edge line")
        i, j = int(f[1]), int(f[2])
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise GraphFormatError(f"line {pos + 2 + n + r}: edge ({i},{j}) out of range")
        if i > j:
            raise GraphFormatError(
                f"line {pos + 2 + n + r}: edge ({i},{j}) not lower-index-first"
            )
        a = [float(x) for x in f[3:]]
        if d_e is None:
            d_e = len(a)
        elif len(a) != d_e:
            raise GraphFormatError(f"line {pos + 2 + n + r}: ragged edge attributes")
        edges.append((i, j))
        attrs.append(a)
    g = AttributedGraph(
        labels=tuple(labels),
        coords=np.array(coords),
        extras=np.array(extras).reshape(n, -1),
        edges=tuple(edges),
        edge_attrs=np.array(attrs).reshape(e, -1) if e else np.zeros((0, d_e or 0)),
    )
    return g, pos + 1 + n + e


def parse_graph(text: str) -> AttributedGraph:
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise GraphFormatError("empty input")
    g, pos = _parse_record(lines, 0)
    if pos != len(lines):
        raise GraphFormatError("trailing content after record")
    return g


def parse_graphs(text: str) -> list[AttributedGraph]:
    lines = [ln for ln in text.split("\n") if ln.strip()]
    out, pos = [], 0
    while pos < len(lines):
        g, pos = _parse_record(lines, pos)
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------

def _node_key(g: AttributedGraph, v: int) -> str:
    return g._node_keys[v]


def _edge_key(g: AttributedGraph, k: int) -> str:
    return g._edge_keys[k]


def _refine(g: AttributedGraph, colors: list[str]) -> list[str]:
    """One Weisfeiler-Leman round over node colors with edge-attr context."""
    out = []
    for v in range(g.n):
        nbr = sorted(f"{_edge_key(g, k)}>{colors[u]}" for u, k in g.neighbors[v])
        out.append(_hash(colors[v] + "|" + ";".join(nbr)))
    return out


def _stable_colors(g: AttributedGraph, colors: list[str]) -> list[str]:
    n_cells = len(set(colors))
    while True:
        nxt = _refine(g, colors)
        m = len(set(nxt))
        if m == n_cells:
            return nxt
        colors, n_cells = nxt, m
        if n_cells == g.n:
            return colors


def wl_hash(g: AttributedGraph) -> str:
    """Isomorphism-invariant hash (collision-safe only via canonical_form)."""
    colors = _stable_colors(g, [_node_key(g, v) for v in range(g.n)])
    return _hash(f"{g.n}/{g.n_edges}/" + "|".join(sorted(colors)))


def _emit(g: AttributedGraph, order: list[int]) -> str:
    """Canonical record for nodes placed in `order` (coords excluded)."""
    pos = {v: p for p, v in enumerate(order)}
    lines = [f"cg {g.n} {g.n_edges}"]
    for p, v in enumerate(order):
        ex = " ".join(_fmt(x) for x in g.extras[v])
        lines.append(f"v {p} {g.labels[v]} {ex}".rstrip())
    erows = []
    for k, (i, j) in enumerate(g.edges):
        a, b = pos[i], pos[j]
        if a > b:
            a, b = b, a
        erows.append((a, b, _edge_key(g, k)))
    for a, b, key in sorted(erows):
        lines.append(f"e {a} {b} {key}".rstrip())
    return "\n".join(lines) + "\n"


def _is_tree(g: AttributedGraph) -> bool:
    return g.n_edges == g.n - 1 and g.is_connected()


def _tree_centers(g: AttributedGraph) -> list[int]:
    if g.n <= 2:
        return list(range(g.n))
    deg = [g.degree(v) for v in range(g.n)]
    leaves = [v for v in range(g.n) if deg[v] == 1]
    remaining = g.n
    while remaining > 2:
        remaining -= len(leaves)
        nxt = []
        for v in leaves:
            deg[v] = 0
            for u, _ in g.neighbors[v]:
                if deg[u] > 0:
                    deg[u] -= 1
                    if deg[u] == 1:
                        nxt.append(u)
        leaves = nxt
    return sorted(leaves)


def _ahu_order(g: AttributedGraph, root: int) -> tuple[str, list[int]]:
    enc: dict[int, str] = {}
    parent = {root: -1}
    stack = [(root, False)]
    topo = []
    while stack:
        v, done = stack.pop()
        if done:
            kids = sorted(
                (enc[u], u) for u, _ in g.neighbors[v] if parent.get(u, None) == v
            )
            via = ""
            if parent[v] >= 0:
                for u, k in g.neighbors[v]:
                    if u == parent[v]:
                        via = _edge_key(g, k)
                        break
            enc[v] = "(" + _node_key(g, v) + "/" + via + ":" + ",".join(
                s for s, _ in kids) + ")"
            continue
        stack.append((v, True))
        topo.append(v)
        for u, _ in g.neighbors[v]:
            if u not in parent:
                parent[u] = v
                stack.append((u, False))
    order = []
    walk = [root]
    while walk:
        v = walk.pop()
        order.append(v)
        kids = sorted(
            ((enc[u], u) for u, _ in g.neighbors[v] if parent.get(u) == v),
            reverse=True,
        )
        walk.extend(u for _, u in kids)
    return enc[root], order


def canonical_order(g: AttributedGraph) -> tuple[int, ...]:
    """A node order invariant under relabeling of isomorphic inputs."""
    if _is_tree(g):
        best = None
        for c in _tree_centers(g):
            key, order = _ahu_order(g, c)
            if best is None or key < best[0]:
                best = (key, order)
        return tuple(best[1])
    return _canonical_search(g)[1]


def canonical_form(g: AttributedGraph) -> str:
    """Canonical record string: equal iff graphs are isomorphic as
    attributed structures (coordinates excluded)."""
    if _is_tree(g):
        return _emit(g, list(canonical_order(g)))
    return _canonical_search(g)[0]


def _cells(colors: list[str]) -> list[list[int]]:
    by: dict[str, list[int]] = {}
    for v, c in enumerate(colors):
        by.setdefault(c, []).append(v)
    return [by[c] for c in sorted(by)]


def _canonical_search(g: AttributedGraph) -> tuple[str, tuple[int, ...]]:
    """Individualization-refinement search minimizing the emitted record."""
    init = _stable_colors(g, [_node_key(g, v) for v in range(g.n)])
    best: list = [None, None]

    def rec(colors: list[str]) -> None:
        cells = _cells(colors)
        target = next((c for c in cells if len(c) > 1), None)
        if target is None:
            order = [v for c in cells for v in c]
            s = _emit(g, order)
            if best[0] is None or s < best[0]:
                best[0], best[1] = s, tuple(order)
            return
        for v in target:
            branched = list(colors)
            branched[v] = _hash("!" + colors[v])
            rec(_stable_colors(g, branched))

    rec(init)
    return best[0], best[1]


def brute_force_isomorphic(a: AttributedGraph, b: AttributedGraph) -> bool:
    """Exhaustive permutation check; test oracle for small graphs.

    ``perm[i]`` maps node i of ``a`` onto a node of ``b``.
    """
    if a.n != b.n or a.n_edges != b.n_edges:
        return False
    for perm in permutations(range(a.n)):
        ok = all(
            a.labels[i] == b.labels[perm[i]]
            and np.array_equal(a.extras[i], b.extras[perm[i]])
            for i in range(a.n)
        )
        if not ok:
            continue
        for k, (i, j) in enumerate(a.edges):
            try:
                if not np.array_equal(b.edge_attr(perm[i], perm[j]), a.edge_attrs[k]):
                    ok = False
                    break
            except KeyError:
                ok = False
                break
        if ok:
            return True
    return False


# ---------------------------------------------------------------------------
# Fingerprints and similarity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fingerprint:
    """Fixed-width bit set from iterated-neighborhood hashes."""

    bits: int
    width: int = 2048
    radius: int = 2

    def __post_init__(self):
        if self.width <= 0 or self.width & (self.width - 1):
            raise ValueError("width must be a power of two")

    def count(self) -> int:
        return self.bits.bit_count()


def fingerprint(g: AttributedGraph, radius: int = 2, width: int = 2048) -> Fingerprint:
    """Hash each node's neighborhood encoding at radii 0..radius into bits."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    colors = [_hash(_node_key(g, v)) for v in range(g.n)]
    bits = 0
    for r in range(radius + 1):
        if r > 0:
            colors = _refine(g, colors)
        for c in colors:
            bits |= 1 << (int(c, 16) % width)
    return Fingerprint(bits=bits, width=width, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a & b| / |a | b|, with 0/0 defined as 1."""
    if a.width != b.width:
        raise ValueError(f"fingerprint width mismatch: {a.width} != {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


# ---------------------------------------------------------------------------
# Spatial matrices
# ---------------------------------------------------------------------------

def inverse_distance(g: AttributedGraph) -> np.ndarray:
    """G with G_ij = 1/||x_i - x_j||, zero diagonal.

    Coincident distinct nodes are an input error, not an epsilon case.
    """
    d = np.linalg.norm(g.coords[:, None, :] - g.coords[None, :, :], axis=2)
    off = ~np.eye(g.n, dtype=bool)
    if np.any(d[off] == 0.0):
        i, j = np.argwhere((d == 0.0) & off)[0]
        raise ValueError(f"coincident nodes {i} and {j}")
    out = np.zeros_like(d)
    out[off] = 1.0 / d[off]
    return out


def sparsify(G: np.ndarray, k: int) -> np.ndarray:
    """Keep each node's k largest off-diagonal entries, symmetrized.

    A pair survives if either direction selected it; ties prefer the
    smaller (i, j) pair, i.e. the smaller column within a row.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    n = G.shape[0]
    keep = np.zeros_like(G, dtype=bool)
    for i in range(n):
        cand = [(-G[i, j], j) for j in range(n) if j != i and G[i, j] > 0.0]
        cand.sort()
        for _, j in cand[:k]:
            keep[i, j] = True
    keep |= keep.T
    out = np.where(keep, G, 0.0)
    return out
