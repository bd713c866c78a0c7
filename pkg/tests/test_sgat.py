import numpy as np
import pytest

from fraggen import autodiff as ad, sgat
from fraggen.graphs import AttributedGraph, apply_permutation
from conftest import random_graph, random_tree
from oracles import dense_attention, dense_layer, dense_spatial


def small_cfg(**kw):
    base = dict(n_labels=3, extra_dim=0, edge_dim=2, n_layers=2, hidden=6,
                heads=2, spatial_k=2, mlp_depth=2, out_dim=4)
    base.update(kw)
    return sgat.EncoderConfig(**base)


def rotate(g, theta=0.7, shift=(1.0, 2.0, 3.0)):
    R = np.array([[np.cos(theta), -np.sin(theta), 0],
                  [np.sin(theta), np.cos(theta), 0],
                  [0, 0, 1.0]])
    return AttributedGraph(labels=g.labels, coords=g.coords @ R.T + np.array(shift),
                           extras=g.extras, edges=g.edges, edge_attrs=g.edge_attrs)


class TestAttentionWeights:
    def test_single_neighbor_weight_one(self):
        g = AttributedGraph(labels=(0, 1), coords=np.array([[0., 0, 0], [1, 0, 0]]),
                            edges=((0, 1),), edge_attrs=np.ones((1, 2)))
        cfg = small_cfg()
        params = sgat.init_encoder(cfg, np.random.default_rng(0))
        weights = dict(sgat.attention_weights(g, cfg, params.layers[0].heads[0]))
        assert weights[(0, 1)] == pytest.approx(1.0)
        assert weights[(1, 0)] == pytest.approx(1.0)

    def test_identical_neighbors_split_evenly(self):
        g = AttributedGraph(labels=(0, 1, 1),
                            coords=np.array([[0., 0, 0], [1, 0, 0], [0, 1, 0]]),
                            edges=((0, 1), (0, 2)),
                            edge_attrs=np.ones((2, 2)))
        cfg = small_cfg()
        params = sgat.init_encoder(cfg, np.random.default_rng(1))
        weights = dict(sgat.attention_weights(g, cfg, params.layers[0].heads[0]))
        assert weights[(0, 1)] == pytest.approx(0.5)
        assert weights[(0, 2)] == pytest.approx(0.5)

    def test_matches_dense_masked_softmax_oracle(self):
        rng = np.random.default_rng(2)
        cfg = small_cfg(n_layers=1)
        params = sgat.init_encoder(cfg, rng)
        for trial in range(8):
            g = random_graph(rng, 5)
            head = params.layers[0].heads[trial % 2]
            batch = sgat.pack_graphs([g], cfg)
            got = dict(sgat.attention_weights(g, cfg, head))
            want = dense_attention(g, batch.node_x, batch.edge_x, head)
            for (d, s), a in got.items():
                assert a == pytest.approx(want[d, s], abs=1e-12)

    def test_weights_sum_to_one_per_node(self):
        rng = np.random.default_rng(3)
        cfg = small_cfg()
        params = sgat.init_encoder(cfg, rng)
        g = random_graph(rng, 7)
        weights = sgat.attention_weights(g, cfg, params.layers[0].heads[0])
        sums = {}
        for (d, _), a in weights:
            sums[d] = sums.get(d, 0.0) + a
        for total in sums.values():
            assert abs(total - 1.0) <= 1e-12


class TestLayerForward:
    def test_isolated_node_self_term_only(self):
        cfg = small_cfg(n_layers=1, heads=1, use_spatial=False)
        params = sgat.init_encoder(cfg, np.random.default_rng(4))
        g = AttributedGraph(labels=(1,), coords=np.zeros((1, 3)), edges=(),
                            edge_attrs=np.zeros((0, 2)))
        batch = sgat.pack_graphs([g], cfg)
        with ad.no_grad():
            h, _ = sgat.run_layers(batch, params.layers, cfg)
        head = params.layers[0].heads[0]
        expected = np.where(batch.node_x @ head.wn.data > 0,
                            batch.node_x @ head.wn.data,
                            0.01 * (batch.node_x @ head.wn.data))
        assert np.allclose(h.data, expected, atol=1e-12)

    def test_matches_dense_oracle_two_heads(self):
        rng = np.random.default_rng(5)
        cfg = small_cfg(n_layers=1, use_spatial=False)
        params = sgat.init_encoder(cfg, rng)
        for _ in range(5):
            g = random_graph(rng, 6)
            batch = sgat.pack_graphs([g], cfg)
            with ad.no_grad():
                h, e = sgat.run_layers(batch, params.layers, cfg)
            want_h, want_e = dense_layer(g, batch.node_x, batch.edge_x,
                                         params.layers[0])
            assert np.allclose(h.data, want_h, atol=1e-12)
            assert np.allclose(e.data, want_e, atol=1e-12)

    def test_layer_merge_mean(self):
        a = ad.constant(np.array([[1.0, 3.0]]))
        b = ad.constant(np.array([[3.0, 5.0]]))
        assert np.allclose(sgat.layer_merge(a, b).data, [[2.0, 4.0]])
        assert np.allclose(sgat.layer_merge(a, a).data, a.data)


class TestSpatial:
    def test_zero_matrix_identity_path(self):
        # fully sparsified spatial matrix leaves only the identity term
        rng = np.random.default_rng(6)
        cfg = small_cfg(n_layers=1, heads=1, spatial_k=0)
        params = sgat.init_encoder(cfg, rng)
        g = random_tree(rng, 4)
        batch = sgat.pack_graphs([g], cfg)
        W = params.layers[0].spatial_wn.data
        with ad.no_grad():
            got = ad.sparse_matmul(batch.spatial,
                                   ad.constant(batch.node_x @ W)).data
        assert np.allclose(got, batch.node_x @ W, atol=1e-12)

    def test_two_node_hand_computation(self):
        # distance 1 => normalized matrix equals G; rows mix both nodes
        g = AttributedGraph(labels=(0, 1), coords=np.array([[0., 0, 0], [1, 0, 0]]),
                            edges=((0, 1),), edge_attrs=np.ones((1, 2)))
        cfg = small_cfg(n_layers=1, heads=1)
        params = sgat.init_encoder(cfg, np.random.default_rng(7))
        batch = sgat.pack_graphs([g], cfg)
        W = params.layers[0].spatial_wn.data
        H = batch.node_x
        want = np.stack([H[0] + H[1], H[0] + H[1]]) @ W
        with ad.no_grad():
            got = ad.sparse_matmul(batch.spatial, ad.constant(H @ W)).data
        assert np.allclose(got, want, atol=1e-12)

    def test_matches_dense_normalization_oracle(self):
        rng = np.random.default_rng(8)
        cfg = small_cfg(n_layers=1, heads=1, spatial_k=2)
        params = sgat.init_encoder(cfg, rng)
        g = random_tree(rng, 6)
        batch = sgat.pack_graphs([g], cfg)
        W = params.layers[0].spatial_wn
        with ad.no_grad():
            got = ad.elementwise_activation(
                ad.sparse_matmul(batch.spatial,
                                 ad.matmul(ad.constant(batch.node_x), W)),
                "leaky_relu").data
        want = dense_spatial(g, batch.node_x, W.data, 2)
        assert np.allclose(got, want, atol=1e-12)


class TestEncodeGraph:
    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        cfg = small_cfg()
        params = sgat.init_encoder(cfg, rng)
        for _ in range(10):
            g = random_graph(rng, int(rng.integers(2, 8)))
            h = sgat.encode_graph(g, cfg, params)
            perm = list(rng.permutation(g.n))
            hp = sgat.encode_graph(apply_permutation(g, perm), cfg, params)
            assert np.max(np.abs(hp - h)) <= 1e-9

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(10)
        cfg = small_cfg()
        params = sgat.init_encoder(cfg, rng)
        g = random_graph(rng, 7)
        h = sgat.encode_graph(g, cfg, params)
        hr = sgat.encode_graph(rotate(g), cfg, params)
        assert np.max(np.abs(hr - h)) <= 1e-9

    def test_single_node_defined(self):
        cfg = small_cfg()
        params = sgat.init_encoder(cfg, np.random.default_rng(11))
        g = AttributedGraph(labels=(2,), coords=np.zeros((1, 3)), edges=(),
                            edge_attrs=np.zeros((0, 2)))
        h = sgat.encode_graph(g, cfg, params)
        assert h.shape == (4,)
        assert np.all(np.isfinite(h))

    def test_full_encoder_gradients(self):
        rng = np.random.default_rng(12)
        cfg = small_cfg(hidden=5, out_dim=3)
        params = sgat.init_encoder(cfg, rng)
        g = random_graph(rng, 6)
        batch = sgat.pack_graphs([g], cfg)
        probe = ad.constant(rng.normal(size=(1, 3)))

        checked = 0
        for name, tensor in list(params.named().items())[::3]:
            rep = ad.grad_check(_make_f(batch, params, cfg, name, probe),
                                tensor, tol=1e-4)
            assert rep.passed, f"{name}: {rep.max_rel_err}"
            checked += 1
        assert checked >= 4


def _make_f(batch, params, cfg, name, probe):
    def f(t):
        _set_named(params, name, t)
        out = sgat.encode_batch(batch, params, cfg)
        return ad.reduce_mean(ad.mul(out, probe))
    return f


def _set_named(params, name, tensor):
    # walk the param structure and swap the tensor with the given name
    for L, lp in enumerate(params.layers):
        for m, h in enumerate(lp.heads):
            for attr in ("wn", "we", "att", "wh"):
                if f"sgat.layer{L}.head{m}.{attr}" == name:
                    setattr(h, attr, tensor)
                    return
        if f"sgat.layer{L}.spatial.wn" == name:
            lp.spatial_wn = tensor
            return
    for i, (w, b) in enumerate(params.mlp.layers):
        if f"mlp.{i}.w" == name:
            params.mlp.layers[i] = (tensor, b)
            return
        if f"mlp.{i}.b" == name:
            params.mlp.layers[i] = (w, tensor)
            return
    raise KeyError(name)


class TestCheckpointNames:
    def test_encoder_parameter_names(self):
        cfg = small_cfg(n_layers=2, heads=2, mlp_depth=2)
        params = sgat.init_encoder(cfg, np.random.default_rng(13))
        names = set(params.named())
        assert "sgat.layer0.head0.wn" in names
        assert "sgat.layer0.head1.att" in names
        assert "sgat.layer1.head0.wh" in names
        assert "sgat.layer1.head1.we" in names
        assert "sgat.layer0.spatial.wn" in names
        assert "mlp.0.w" in names and "mlp.1.b" in names
        assert len(names) == 2 * (2 * 4) + 2 + 2 * 2
