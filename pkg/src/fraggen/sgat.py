"""Spatial graph attention encoder.

Each layer runs two branches over packed graph batches and averages them:
an edge-featured, node-centric attention update, and a spatial convolution
over the normalized sparsified inverse-distance matrix.  A mean readout and
an MLP head turn node representations into one feature vector per graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graphs import AttributedGraph, inverse_distance, sparsify


@dataclass
class EncoderConfig:
    n_labels: int
    extra_dim: int = 0
    edge_dim: int = 1
    n_layers: int = 3
    hidden: int = 256
    heads: int = 2
    spatial_k: int = 4
    use_spatial: bool = True
    n_shared: int | None = None  # GNN layers shared between query/key; None = all
    mlp_depth: int = 3
    out_dim: int | None = None
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.n_shared is None:
            self.n_shared = self.n_layers
        if self.n_shared > self.n_layers:
            raise ValueError("n_shared cannot exceed n_layers")
        if self.heads < 1:
            raise ValueError("need at least one attention head")

    @property
    def in_dim(self) -> int:
        return self.n_labels + self.extra_dim

    @property
    def readout_dim(self) -> int:
        return self.hidden

    def head_dims(self, layer: int) -> tuple[int, int]:
        """(node input dim, edge input dim) for a layer index."""
        if layer == 0:
            return self.in_dim, self.edge_dim
        return self.hidden, self.hidden


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class HeadParams:
    wn: ad.Tensor
    we: ad.Tensor
    att: ad.Tensor
    wh: ad.Tensor

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        return {f"{prefix}.wn": self.wn, f"{prefix}.we": self.we,
                f"{prefix}.att": self.att, f"{prefix}.wh": self.wh}


@dataclass
class LayerParams:
    heads: list[HeadParams]
    spatial_wn: ad.Tensor

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        for m, h in enumerate(self.heads):
            out.update(h.named(f"{prefix}.head{m}"))
        out[f"{prefix}.spatial.wn"] = self.spatial_wn
        return out


@dataclass
class MlpParams:
    layers: list[tuple[ad.Tensor, ad.Tensor]]

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.{i}.w"] = w
            out[f"{prefix}.{i}.b"] = b
        return out


@dataclass
class EncoderParams:
    layers: list[LayerParams]
    mlp: MlpParams

    def named(self, gnn_prefix: str = "sgat", mlp_prefix: str = "mlp") -> dict:
        out: dict[str, ad.Tensor] = {}
        for L, lp in enumerate(self.layers):
            out.update(lp.named(f"{gnn_prefix}.layer{L}"))
        out.update(self.mlp.named(mlp_prefix))
        return out


def init_layer(rng, d_hn: int, d_he: int, d_wn: int, d_we: int,
               heads: int) -> LayerParams:
    hs = []
    for _ in range(heads):
        hs.append(HeadParams(
            wn=ad.parameter(_xavier(rng, d_hn, d_wn, (d_hn, d_wn))),
            we=ad.parameter(_xavier(rng, d_he, d_we, (d_he, d_we))),
            att=ad.parameter(_xavier(rng, 2 * d_wn + d_we, 1, (2 * d_wn + d_we, 1))),
            wh=ad.parameter(_xavier(rng, 2 * d_wn + d_we, d_we,
                                    (2 * d_wn + d_we, d_we))),
        ))
    return LayerParams(heads=hs,
                       spatial_wn=ad.parameter(_xavier(rng, d_hn, d_wn, (d_hn, d_wn))))


def init_mlp(rng, dims: list[int]) -> MlpParams:
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers.append((ad.parameter(_xavier(rng, a, b, (a, b))),
                       ad.parameter(np.zeros(b))))
    return MlpParams(layers=layers)


def mlp_dims(cfg: EncoderConfig, out_dim: int) -> list[int]:
    return [cfg.readout_dim] + [cfg.hidden] * (cfg.mlp_depth - 1) + [out_dim]


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    layers = []
    for L in range(cfg.n_layers):
        d_hn, d_he = cfg.head_dims(L)
        layers.append(init_layer(rng, d_hn, d_he, cfg.hidden, cfg.hidden, cfg.heads))
    out = cfg.out_dim if cfg.out_dim is not None else 1
    return EncoderParams(layers=layers, mlp=init_mlp(rng, mlp_dims(cfg, out)))


def run_mlp(x: ad.Tensor, mlp: MlpParams, activation: str) -> ad.Tensor:
    """Affine stack with activations between layers, linear output."""
    for i, (w, b) in enumerate(mlp.layers):
        x = ad.add_bias(ad.matmul(x, w), b)
        if i < len(mlp.layers) - 1:
            x = ad.elementwise_activation(x, activation)
    return x


# ---------------------------------------------------------------------------
# Graph batch packing
# ---------------------------------------------------------------------------

@dataclass
class GraphBatch:
    """Several graphs packed into flat arrays with segment indices.

    Directed-edge arrays are sorted by destination so attention reductions
    hit the reduceat fast path; ``em_pos0/1`` locate each undirected edge's
    two orientations inside that sorted layout.
    """

    node_x: np.ndarray          # (N, in_dim)
    edge_x: np.ndarray          # (E, edge_dim), one row per undirected edge
    dst: np.ndarray             # (2E,) directed: message destination, sorted
    src: np.ndarray             # (2E,)
    eidx: np.ndarray            # (2E,) row of edge_x per directed edge
    dst_spec: ad.SegSpec
    em_pos0: np.ndarray         # (E,)
    em_pos1: np.ndarray         # (E,)
    node_graph: np.ndarray      # (N,) owning graph per node, sorted
    node_spec: ad.SegSpec
    n_graphs: int
    spatial: ad.SparseMatrix    # normalized inverse-distance matrix + identity
    n_nodes: int = field(init=False)

    def __post_init__(self):
        self.n_nodes = self.node_x.shape[0]


def node_features(g: AttributedGraph, n_labels: int) -> np.ndarray:
    """One-hot label plus extra scalars; coordinates enter only spatially."""
    x = np.zeros((g.n, n_labels + g.extras.shape[1]))
    for v, lab in enumerate(g.labels):
        if not 0 <= lab < n_labels:
            raise ValueError(f"label {lab} outside [0, {n_labels})")
        x[v, lab] = 1.0
    x[:, n_labels:] = g.extras
    return x


def spatial_coo(g: AttributedGraph, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO of D^{-1/2} G~ D^{-1/2} + I with 0^{-1/2} treated as 0."""
    gt = sparsify(inverse_distance(g), k) if g.n > 1 else np.zeros((1, 1))
    if np.any(gt < 0.0):
        raise ValueError("spatial matrix entries must be nonnegative")
    deg = gt.sum(axis=1)
    inv_sqrt = np.where(deg > 0.0, 1.0 / np.sqrt(np.where(deg > 0.0, deg, 1.0)), 0.0)
    norm = gt * inv_sqrt[:, None] * inv_sqrt[None, :]
    rows, cols = np.nonzero(norm)
    vals = norm[rows, cols]
    eye = np.arange(g.n)
    return (np.concatenate([rows, eye]), np.concatenate([cols, eye]),
            np.concatenate([vals, np.ones(g.n)]))


class PackCache:
    """Per-graph packed pieces, keyed by graph identity."""

    def __init__(self, cfg: EncoderConfig, maxsize: int = 20000):
        self.cfg = cfg
        self.maxsize = maxsize
        self._store: dict[int, tuple] = {}

    def pieces(self, g: AttributedGraph):
        got = self._store.get(id(g))
        if got is not None and got[0] is g:
            return got[1]
        if len(self._store) >= self.maxsize:
            self._store.clear()
        nx = node_features(g, self.cfg.n_labels)
        e = g.n_edges
        lo = np.fromiter((i for i, _ in g.edges), dtype=np.intp, count=e)
        hi = np.fromiter((j for _, j in g.edges), dtype=np.intp, count=e)
        ex = g.edge_attrs if e else np.zeros((0, self.cfg.edge_dim))
        # directed edges sorted by destination, plus the positions of each
        # undirected edge's two orientations inside that layout
        dst = np.concatenate([lo, hi])
        src = np.concatenate([hi, lo])
        eidx = np.concatenate([np.arange(e, dtype=np.intp)] * 2)
        order = np.lexsort((src, dst))
        inv = np.empty_like(order)
        inv[order] = np.arange(2 * e)
        sr, sc, sv = spatial_coo(g, self.cfg.spatial_k) if self.cfg.use_spatial \
            else (np.arange(g.n), np.arange(g.n), np.ones(g.n))
        sp_order = np.lexsort((sc, sr))
        sr, sc, sv = sr[sp_order].astype(np.intp), sc[sp_order].astype(np.intp), sv[sp_order]
        sp_cperm = np.lexsort((sr, sc)).astype(np.intp)
        out = (nx, ex, dst[order], src[order], eidx[order],
               inv[:e], inv[e:], (sr, sc, sv, sp_cperm))
        self._store[id(g)] = (g, out)
        return out


def pack_graphs(graphs, cfg: EncoderConfig, cache: PackCache | None = None) -> GraphBatch:
    """Concatenate per-graph cached pieces; block-wise sorted arrays stay
    globally sorted because node/edge ids only grow across blocks."""
    graphs = list(graphs)
    if cache is None:
        cache = PackCache(cfg)
    pieces = cache.pieces
    nxs, exs, dsts, srcs, eidxs, p0s, p1s = [], [], [], [], [], [], []
    rr, cc, vv, cp = [], [], [], []
    counts = np.empty(len(graphs), dtype=np.intp)
    n_off = e_off = d_off = s_off = 0
    for gi, g in enumerate(graphs):
        nx, ex, dst, src, eidx, p0, p1, (sr, sc, sv, scp) = pieces(g)
        nxs.append(nx)
        exs.append(ex)
        dsts.append(dst + n_off)
        srcs.append(src + n_off)
        eidxs.append(eidx + e_off)
        p0s.append(p0 + d_off)
        p1s.append(p1 + d_off)
        rr.append(sr + n_off)
        cc.append(sc + n_off)
        vv.append(sv)
        cp.append(scp + s_off)
        counts[gi] = g.n
        n_off += g.n
        e_off += g.n_edges
        d_off += 2 * g.n_edges
        s_off += len(sv)
    cat = np.concatenate
    z = np.zeros(0, dtype=np.intp)
    dst = cat(dsts) if dsts else z
    node_graph = np.repeat(np.arange(len(graphs), dtype=np.intp), counts) \
        if len(graphs) else z
    return GraphBatch(
        node_x=cat(nxs) if nxs else np.zeros((0, cfg.in_dim)),
        edge_x=cat(exs) if exs else np.zeros((0, cfg.edge_dim)),
        dst=dst,
        src=cat(srcs) if srcs else z,
        eidx=cat(eidxs) if eidxs else z,
        dst_spec=ad.SegSpec(dst, n_off),
        em_pos0=cat(p0s) if p0s else z,
        em_pos1=cat(p1s) if p1s else z,
        node_graph=node_graph,
        node_spec=ad.SegSpec(node_graph, len(graphs)),
        n_graphs=len(graphs),
        spatial=ad.SparseMatrix(
            cat(rr) if rr else z, cat(cc) if cc else z,
            cat(vv) if vv else np.zeros(0), n_off, n_off,
            presorted_col_perm=cat(cp) if cp else z),
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def head_attention(h_nodes: ad.Tensor, h_edges: ad.Tensor, batch: GraphBatch,
                   head: HeadParams, activation: str) -> tuple[ad.Tensor, ad.Tensor]:
    """Per-directed-edge attention weights and the shared concat features.

    Returns (alpha (2E, 1), concat (2E, 2d_wn + d_we)); alpha sums to one
    over each destination node's incoming edges.
    """
    hn = ad.matmul(h_nodes, head.wn)
    he = ad.matmul(h_edges, head.we) if batch.edge_x.shape[0] else None
    if he is None:
        empty = ad.constant(np.zeros((0, head.att.shape[0])))
        return ad.constant(np.zeros((0, 1))), empty
    cat = ad.col_concat([
        ad.gather_rows(hn, batch.dst),
        ad.gather_rows(he, batch.eidx),
        ad.gather_rows(hn, batch.src),
    ])
    logits = ad.elementwise_activation(ad.matmul(cat, head.att), activation)
    alpha = ad.segment_softmax(logits, batch.dst, batch.n_nodes, batch.dst_spec)
    return alpha, cat


def layer_forward(h_nodes: ad.Tensor, h_edges: ad.Tensor, batch: GraphBatch,
                  layer: LayerParams, cfg: EncoderConfig) -> tuple[ad.Tensor, ad.Tensor]:
    """One encoder layer: attention branch, spatial branch, mean merge."""
    act = cfg.activation
    node_parts, edge_parts = [], []
    has_edges = batch.edge_x.shape[0] > 0
    for head in layer.heads:
        if has_edges:
            hn = ad.matmul(h_nodes, head.wn)
            he = ad.matmul(h_edges, head.we)
            cat_dir = ad.col_concat([
                ad.gather_rows(hn, batch.dst),
                ad.gather_rows(he, batch.eidx),
                ad.gather_rows(hn, batch.src),
            ])
            logits = ad.elementwise_activation(ad.matmul(cat_dir, head.att), act)
            alpha = ad.segment_softmax(logits, batch.dst, batch.n_nodes,
                                       batch.dst_spec)
            msg = ad.row_scale(ad.gather_rows(h_nodes, batch.src), alpha)
            agg = ad.add(ad.segment_sum(msg, batch.dst, batch.n_nodes,
                                        batch.dst_spec), h_nodes)
            # Edge update is order-sensitive in its concat; averaging the two
            # orientations keeps the encoder permutation-invariant.
            upd = ad.elementwise_activation(ad.matmul(cat_dir, head.wh), act)
            edge_parts.append(ad.scalar_mul(0.5, ad.add(
                ad.gather_rows(upd, batch.em_pos0),
                ad.gather_rows(upd, batch.em_pos1))))
        else:
            agg = h_nodes
        node_parts.append(ad.elementwise_activation(ad.matmul(agg, head.wn), act))
    h_attr = _mean_parts(node_parts)
    h_edges_next = _mean_parts(edge_parts) if edge_parts else h_edges
    if cfg.use_spatial:
        h_sp = ad.elementwise_activation(
            ad.sparse_matmul(batch.spatial, ad.matmul(h_nodes, layer.spatial_wn)),
            act)
        h_next = layer_merge(h_attr, h_sp)
    else:
        h_next = h_attr
    return h_next, h_edges_next


def layer_merge(h_attr: ad.Tensor, h_spatial: ad.Tensor) -> ad.Tensor:
    """Elementwise mean of the two per-layer hidden representations."""
    return ad.scalar_mul(0.5, ad.add(h_attr, h_spatial))


def _mean_parts(parts: list[ad.Tensor]) -> ad.Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return ad.scalar_mul(1.0 / len(parts), total)


def run_layers(batch: GraphBatch, layers: list[LayerParams], cfg: EncoderConfig,
               h_nodes: ad.Tensor | None = None,
               h_edges: ad.Tensor | None = None) -> tuple[ad.Tensor, ad.Tensor]:
    if h_nodes is None:
        h_nodes = ad.constant(batch.node_x)
    if h_edges is None:
        h_edges = ad.constant(batch.edge_x)
    for layer in layers:
        h_nodes, h_edges = layer_forward(h_nodes, h_edges, batch, layer, cfg)
    return h_nodes, h_edges


def readout(h_nodes: ad.Tensor, batch: GraphBatch) -> ad.Tensor:
    return ad.segment_mean(h_nodes, batch.node_graph, batch.n_graphs,
                           batch.node_spec)


def encode_batch(batch: GraphBatch, params: EncoderParams,
                 cfg: EncoderConfig) -> ad.Tensor:
    h_nodes, _ = run_layers(batch, params.layers, cfg)
    return run_mlp(readout(h_nodes, batch), params.mlp, cfg.activation)


def encode_graph(g: AttributedGraph, cfg: EncoderConfig,
                 params: EncoderParams) -> np.ndarray:
    """Feature vector for a single graph (inference, no tape)."""
    with ad.no_grad():
        out = encode_batch(pack_graphs([g], cfg), params, cfg)
    return out.data[0]


def attention_weights(g: AttributedGraph, cfg: EncoderConfig, head: HeadParams,
                      h_nodes: np.ndarray | None = None,
                      h_edges: np.ndarray | None = None):
    """Attention of the given head on one graph's input representations.

    Returns a list of ((dst, src), weight) over directed edges.
    """
    batch = pack_graphs([g], cfg)
    hn = ad.constant(batch.node_x if h_nodes is None else h_nodes)
    he = ad.constant(batch.edge_x if h_edges is None else h_edges)
    with ad.no_grad():
        alpha, _ = head_attention(hn, he, batch, head, cfg.activation)
    return [((int(d), int(s)), float(a))
            for d, s, a in zip(batch.dst, batch.src, alpha.data[:, 0])]
