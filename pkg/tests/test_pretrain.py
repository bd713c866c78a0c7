import numpy as np
import pytest

from fraggen import pretrain as pt, sgat
from fraggen.graphs import GraphFormatError, serialize_graph


def small_enc(**kw):
    base = dict(n_labels=3, extra_dim=0, edge_dim=1, n_layers=2, hidden=8,
                heads=1, spatial_k=3, mlp_depth=2, n_shared=2)
    base.update(kw)
    return sgat.EncoderConfig(**base)


class TestDatasetIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pairs = pt.make_geometry_dataset(12, rng)
        path = tmp_path / "geo.atgy"
        pt.save_dataset(path, pairs)
        loaded = pt.load_dataset(path)
        assert len(loaded) == 12
        for (g, y), (h, z) in zip(pairs, loaded):
            assert serialize_graph(g) == serialize_graph(h)
            assert y == pytest.approx(z, abs=1e-8)

    def test_missing_target_line(self, tmp_path):
        rng = np.random.default_rng(1)
        pairs = pt.make_geometry_dataset(2, rng)
        path = tmp_path / "bad.atgy"
        text = pt.save_dataset(path, pairs) or path.read_text()
        path.write_text(text.rsplit("y ", 1)[0])
        with pytest.raises(GraphFormatError):
            pt.load_dataset(path)

    def test_target_is_mean_pairwise_inverse_distance(self):
        rng = np.random.default_rng(2)
        pairs = pt.make_geometry_dataset(5, rng)
        from fraggen.graphs import inverse_distance
        for g, y in pairs:
            G = inverse_distance(g)
            want = G.sum() / (g.n * (g.n - 1))
            assert y == pytest.approx(want, abs=1e-12)


class TestPretrain:
    def test_lr_zero_flat_loss(self):
        rng = np.random.default_rng(3)
        pairs = pt.make_geometry_dataset(40, rng)
        res = pt.pretrain(pairs, small_enc(),
                          pt.PretrainConfig(epochs=3, lr=0.0, seed=0))
        losses = [r[1] for r in res.history]
        assert max(losses) - min(losses) <= 1e-12

    def test_loss_decreases(self):
        rng = np.random.default_rng(4)
        pairs = pt.make_geometry_dataset(80, rng)
        res = pt.pretrain(pairs, small_enc(),
                          pt.PretrainConfig(epochs=12, lr=3e-3, seed=0))
        assert res.history[-1][1] < res.history[0][1]

    def test_csv_written(self, tmp_path):
        rng = np.random.default_rng(5)
        pairs = pt.make_geometry_dataset(30, rng)
        csv = tmp_path / "loss.csv"
        pt.pretrain(pairs, small_enc(),
                    pt.PretrainConfig(epochs=2, lr=1e-3, seed=0),
                    csv_path=csv)
        lines = csv.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 3

    def test_spatial_branch_beats_no_spatial(self):
        """The regression target is pure geometry: without the spatial
        branch the encoder cannot see it at all."""
        rng = np.random.default_rng(6)
        pairs = pt.make_geometry_dataset(300, rng)
        cfg = pt.PretrainConfig(epochs=15, lr=3e-3, seed=1)
        with_sp = pt.pretrain(pairs, small_enc(use_spatial=True), cfg)
        without = pt.pretrain(pairs, small_enc(use_spatial=False), cfg)
        v_with = with_sp.history[-1][2]
        v_without = without.history[-1][2]
        assert v_with < 0.8 * v_without
