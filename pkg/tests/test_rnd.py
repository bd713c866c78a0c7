import numpy as np
import pytest

from fraggen.rnd import (
    ErrorBuffer,
    RndConfig,
    RndExplorer,
    init_rnd,
    innovation_reward,
    prediction_error,
    prediction_errors,
)


def make_params(seed=0, in_dim=6, out_dim=8):
    return init_rnd(RndConfig(in_dim=in_dim, out_dim=out_dim),
                    np.random.default_rng(seed))


class TestPredictionError:
    def test_exact_copy_zero(self):
        p = make_params()
        p.pred_w.data = p.target_w.data.copy()
        p.pred_b.data = p.target_b.data.copy()
        emb = np.random.default_rng(1).normal(size=6)
        assert prediction_error(emb, p) == 0.0

    def test_pythagorean(self):
        p = make_params(in_dim=2, out_dim=2)
        # engineer outputs (3, 0) vs (0, 4) with input [1, 0]
        p.pred_w.data = np.array([[3.0, 0.0], [0.0, 0.0]])
        p.pred_b.data = np.zeros(2)
        p.target_w.data = np.array([[0.0, 4.0], [0.0, 0.0]])
        p.target_b.data = np.zeros(2)
        assert prediction_error(np.array([1.0, 0.0]), p) == pytest.approx(5.0)

    def test_matches_direct_norm(self):
        rng = np.random.default_rng(2)
        p = make_params(3)
        embs = rng.normal(size=(5, 6))
        want = np.linalg.norm(
            (embs @ p.pred_w.data + p.pred_b.data)
            - (embs @ p.target_w.data + p.target_b.data), axis=1)
        assert np.allclose(prediction_errors(embs, p), want, atol=1e-12)

    def test_target_frozen_flag(self):
        p = make_params()
        assert not p.target_w.requires_grad
        assert p.pred_w.requires_grad


class TestInnovationReward:
    def filled(self, values):
        buf = ErrorBuffer(100)
        for v in values:
            buf.push(v)
        return buf

    def test_under_two_entries_zero(self):
        assert innovation_reward(3.0, self.filled([]), 5.0) == 0.0
        assert innovation_reward(3.0, self.filled([1.0]), 5.0) == 0.0

    def test_at_mean_zero(self):
        buf = self.filled([1.0, 3.0])  # mean 2
        assert innovation_reward(2.0, buf, 5.0) == 0.0

    def test_clipped_at_eta(self):
        buf = self.filled([0.0, 2.0])  # mean 1, var 1
        assert innovation_reward(1.0 + 10.0, buf, 5.0) == 5.0
        assert innovation_reward(1.0 - 10.0, buf, 5.0) == -5.0

    def test_unclipped_value(self):
        buf = self.filled([0.0, 2.0])  # mean 1, sqrt(var) 1
        assert innovation_reward(1.0 + 1.3, buf, 5.0) == pytest.approx(1.3)

    def test_zero_variance(self):
        buf = self.filled([2.0, 2.0])
        assert innovation_reward(2.0, buf, 5.0) == 0.0
        assert innovation_reward(3.0, buf, 5.0) == 5.0

    def test_always_within_eta(self):
        rng = np.random.default_rng(3)
        buf = ErrorBuffer(50)
        for _ in range(200):
            e = float(abs(rng.normal()) * 10)
            r = innovation_reward(e, buf, 5.0)
            assert -5.0 <= r <= 5.0
            buf.push(e)

    def test_ring_capacity(self):
        buf = ErrorBuffer(3)
        for v in (1.0, 2.0, 3.0, 4.0):
            buf.push(v)
        assert len(buf) == 3
        assert buf.moments()[0] == pytest.approx(3.0)


class TestUpdatePredictor:
    def test_convergence_on_fixed_state(self):
        rng = np.random.default_rng(4)
        ex = RndExplorer(RndConfig(in_dim=6, out_dim=8, lr=5e-3), rng)
        emb = rng.normal(size=(1, 6))
        initial = prediction_errors(emb, ex.params)[0]
        for _ in range(200):
            ex.update(emb)
        final = prediction_errors(emb, ex.params)[0]
        assert final < 0.1 * initial

    def test_lr_zero_no_change(self):
        rng = np.random.default_rng(5)
        ex = RndExplorer(RndConfig(in_dim=6, out_dim=8, lr=0.0), rng)
        before = ex.params.pred_w.data.copy()
        ex.update(rng.normal(size=(4, 6)))
        assert np.array_equal(ex.params.pred_w.data, before)

    def test_target_bitwise_stable_through_training(self):
        rng = np.random.default_rng(6)
        ex = RndExplorer(RndConfig(in_dim=6, out_dim=8, lr=5e-3), rng)
        tw = ex.params.target_w.data.copy()
        tb = ex.params.target_b.data.copy()
        for _ in range(50):
            ex.update(rng.normal(size=(8, 6)))
        assert np.array_equal(ex.params.target_w.data, tw)
        assert np.array_equal(ex.params.target_b.data, tb)

    def test_seen_cheaper_than_unseen_across_seeds(self):
        """Statistical check: after training on X, mean error on X drops
        below mean error on fresh states, over 10 seeds."""
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng((7, seed))
            ex = RndExplorer(RndConfig(in_dim=6, out_dim=8, lr=5e-3), rng)
            seen = rng.normal(size=(16, 6))
            unseen = rng.normal(size=(16, 6))
            for _ in range(150):
                ex.update(seen)
            if prediction_errors(seen, ex.params).mean() < \
                    prediction_errors(unseen, ex.params).mean():
                wins += 1
        assert wins >= 9

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(8)
        ex = RndExplorer(RndConfig(in_dim=6, out_dim=8), rng)
        with pytest.raises(ValueError):
            ex.update(np.zeros((0, 6)))


class TestExplorerRewards:
    def test_chronological_normalization(self):
        rng = np.random.default_rng(9)
        ex = RndExplorer(RndConfig(in_dim=4, out_dim=4), rng)
        embs = rng.normal(size=(5, 4))
        rewards = ex.rewards(embs)
        # first two rewards are zero: buffer had < 2 entries at their turn
        assert rewards[0] == 0.0
        assert rewards[1] == 0.0
        assert len(ex.buffer) == 5
        assert np.all(np.abs(rewards) <= ex.cfg.eta)
