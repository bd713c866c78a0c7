import numpy as np
import pytest

from fraggen import autodiff as ad, policy as pol, ppo, sampler as smp, sgat
from fraggen.fragment_env import EnvConfig, FragmentEnv
from fraggen.rewards import RewardSpec
from fraggen.rnd import RndConfig, RndExplorer
from fraggen.scorer import make_scorer
from fraggen.toylibs import leafy_start
from oracles import ppo_loss_scalar, reward_to_go


def fake_transition(t, reward=0.0, value=0.0, terminal=False, logp=-0.5):
    return smp.Transition(episode=0, t=t, state=None, candidates=(),
                          chosen=0, log_prob=logp, value=value,
                          next_state=None, terminal=terminal, reward=reward)


class TestReturnsAndAdvantages:
    def test_single_step(self):
        trs = [fake_transition(0, reward=5.0, value=2.0, terminal=True)]
        q, a = ppo.returns_and_advantages(trs, gamma=0.37)
        assert q.tolist() == [5.0]
        assert a.tolist() == [3.0]

    def test_geometric_sum(self):
        trs = [fake_transition(0, 0.0), fake_transition(1, 0.0),
               fake_transition(2, 1.0, terminal=True)]
        q, _ = ppo.returns_and_advantages(trs, gamma=0.5)
        assert q.tolist() == [0.25, 0.5, 1.0]

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            T = int(rng.integers(1, 21))
            rewards = rng.normal(size=T)
            values = rng.normal(size=T)
            trs = [fake_transition(t, float(rewards[t]), float(values[t]),
                                   terminal=(t == T - 1)) for t in range(T)]
            gamma = float(rng.uniform(0.1, 1.0))
            q, a = ppo.returns_and_advantages(trs, gamma)
            want = reward_to_go(rewards, gamma)
            assert np.max(np.abs(q - want)) <= 1e-12
            assert np.max(np.abs(a - (want - values))) <= 1e-12

    def test_empty_episode_rejected(self):
        with pytest.raises(ValueError):
            ppo.returns_and_advantages([], 0.9)


class TestPpoLoss:
    def build(self, rng, n):
        logp_new = ad.parameter(rng.normal(size=(n, 1)) * 0.3)
        values = ad.parameter(rng.normal(size=(n, 1)))
        entropy = ad.constant(np.abs(rng.normal(size=(n, 1))))
        logp_old = rng.normal(size=n) * 0.3
        adv = rng.normal(size=n)
        ret = rng.normal(size=n)
        return logp_new, values, entropy, logp_old, adv, ret

    def test_ratio_one_reduces_to_mean_advantage(self):
        n = 6
        rng = np.random.default_rng(1)
        logp = rng.normal(size=n)
        adv = rng.normal(size=n)
        t_logp = ad.constant(logp.reshape(-1, 1))
        values = ad.constant(np.zeros((n, 1)))
        entropy = ad.constant(np.zeros((n, 1)))
        actor, critic, _ = ppo.ppo_loss(t_logp, values, entropy, logp, adv,
                                        np.zeros(n), 0.1, 0.0)
        assert actor.item() == pytest.approx(-adv.mean(), abs=1e-12)

    def test_clip_bounds_positive_advantage(self):
        # ratio 1.5 with positive advantage contributes 1.1 * A
        A = 2.0
        logp_old = np.array([0.0])
        logp_new = ad.constant(np.array([[np.log(1.5)]]))
        values = ad.constant(np.zeros((1, 1)))
        entropy = ad.constant(np.zeros((1, 1)))
        actor, _, _ = ppo.ppo_loss(logp_new, values, entropy, logp_old,
                                   np.array([A]), np.zeros(1), 0.1, 0.0)
        assert actor.item() == pytest.approx(-1.1 * A, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            n = int(rng.integers(2, 12))
            logp_new, values, entropy, logp_old, adv, ret = self.build(rng, n)
            actor, critic, _ = ppo.ppo_loss(logp_new, values, entropy,
                                            logp_old, adv, ret, 0.1, 0.01)
            want_actor, want_critic = ppo_loss_scalar(
                logp_new.data[:, 0], logp_old, adv, ret, values.data[:, 0],
                0.1, 0.01, entropy.data[:, 0])
            assert actor.item() == pytest.approx(want_actor, abs=1e-12)
            assert critic.item() == pytest.approx(want_critic, abs=1e-12)

    def test_nonfinite_ratio_aborts(self):
        logp_new = ad.constant(np.array([[800.0]]))
        values = ad.constant(np.zeros((1, 1)))
        entropy = ad.constant(np.zeros((1, 1)))
        with pytest.raises(RuntimeError):
            ppo.ppo_loss(logp_new, values, entropy, np.array([-800.0]),
                         np.ones(1), np.zeros(1), 0.1, 0.0)

    def test_clip_stays_in_band(self):
        rng = np.random.default_rng(3)
        x = ad.constant(rng.normal(size=(50, 1)) * 4)
        clipped = ad.clamp(x, 0.9, 1.1).data
        assert clipped.min() >= 0.9 and clipped.max() <= 1.1


class TestComposeReward:
    def episode(self, r_innovs, main):
        trs = [fake_transition(t) for t in range(len(r_innovs))]
        for t, tr in enumerate(trs):
            tr.r_innovation = r_innovs[t]
        trs[-1].terminal = True
        trs[-1].r_main = main
        return smp.EpisodeResult(episode=0, transitions=trs,
                                 final_graph=None, main_score=main)

    def test_total_reward_in_window(self):
        ep = self.episode([0.2, -0.1, 0.4], 5.0)
        ppo.compose_reward(ep, 5.0, iota=0.1, in_window=True)
        total = sum(tr.reward for tr in ep.transitions)
        assert total == pytest.approx(5.05, abs=1e-12)

    def test_outside_window_strips_innovation(self):
        ep = self.episode([0.2, -0.1, 0.4], 5.0)
        ppo.compose_reward(ep, 5.0, iota=0.1, in_window=False)
        total = sum(tr.reward for tr in ep.transitions)
        assert total == pytest.approx(5.0, abs=1e-12)

    def test_iota_zero_pure_main(self):
        ep = self.episode([0.2, -0.1, 0.4], 5.0)
        ppo.compose_reward(ep, 5.0, iota=0.0, in_window=True)
        assert sum(tr.reward for tr in ep.transitions) == pytest.approx(5.0)


def toy_training_setup(leafy, seed, episodes=40, horizon=3, use_rnd=True,
                       **tcfg_kw):
    start = leafy_start()
    env = FragmentEnv(leafy, EnvConfig(
        horizon=horizon, candidates_lo=15, candidates_hi=20,
        max_fragment_size=3, starts=(start,), edge_dim=1), cache_size=256)
    enc = sgat.EncoderConfig(n_labels=3, extra_dim=0, edge_dim=1, n_layers=2,
                             hidden=10, heads=1, spatial_k=4, mlp_depth=2,
                             n_shared=2)
    pcfg = pol.PolicyConfig(encoder=enc, d_k=6, final_hidden=8, critic_depth=2)
    rng = np.random.default_rng(seed)
    params = pol.init_policy(pcfg, rng)
    explorer = RndExplorer(RndConfig(in_dim=enc.readout_dim, out_dim=8,
                                     lr=2e-3), rng) if use_rnd else None
    base = dict(episodes=episodes, epochs=2, batch_size=30, minibatch=30,
                seed=seed, innovation_delay=0, innovation_cutoff=10**6)
    base.update(tcfg_kw)
    tcfg = ppo.TrainerConfig(**base)
    scfg = smp.SamplerConfig(n_workers=5, master_seed=seed)
    return env, params, pcfg, explorer, tcfg, scfg


class TestTrain:
    def test_lr_zero_parameters_unchanged(self, leafy):
        env, params, pcfg, explorer, tcfg, scfg = toy_training_setup(
            leafy, 3, episodes=20, lr_actor=0.0, lr_critic=0.0)
        before = {k: v.data.copy() for k, v in params.named().items()}
        res = ppo.train(tcfg, env, make_scorer("label-count:2"), params, pcfg,
                        explorer, scfg)
        for k, v in params.named().items():
            assert np.array_equal(before[k], v.data), k
        rewards = [row.mean_reward for row in res.history]
        assert len(set(np.round(rewards, 6))) >= 1  # metrics exist

    def test_metrics_csv_written(self, leafy, tmp_path):
        env, params, pcfg, explorer, tcfg, scfg = toy_training_setup(
            leafy, 4, episodes=20)
        res = ppo.train(tcfg, env, make_scorer("label-count:2"), params, pcfg,
                        explorer, scfg, out_dir=tmp_path)
        text = (tmp_path / "metrics.csv").read_text().strip().split("\n")
        assert text[0] == ("iter,episode,mean_reward,best_reward,actor_loss,"
                           "critic_loss,rnd_loss,entropy,unique_frac,diversity")
        assert len(text) == 1 + len(res.history)
        assert (tmp_path / "final.dgpn").exists()

    def test_training_deterministic(self, leafy):
        def run():
            env, params, pcfg, explorer, tcfg, scfg = toy_training_setup(
                leafy, 5, episodes=30)
            res = ppo.train(tcfg, env, make_scorer("label-count:2"), params,
                            pcfg, explorer, scfg)
            return [row.as_csv() for row in res.history]
        assert run() == run()

    def test_scorer_failure_scores_zero(self, leafy):
        calls = {"n": 0}

        def flaky(g):
            calls["n"] += 1
            raise RuntimeError("boom")

        from fraggen.scorer import FunctionScorer
        env, params, pcfg, explorer, tcfg, scfg = toy_training_setup(
            leafy, 6, episodes=10)
        res = ppo.train(tcfg, env, FunctionScorer(flaky, "flaky"), params,
                        pcfg, explorer, scfg)
        assert calls["n"] > 0
        assert all(r == 0.0 for r in res.episode_rewards)

    def test_improves_over_initial_policy(self, leafy):
        """Final mean reward strictly exceeds the starting policy's, paired
        over 5 seeds."""
        wins = 0
        for seed in range(5):
            env, params, pcfg, explorer, tcfg, scfg = toy_training_setup(
                leafy, (7, seed)[1] * 100 + 13, episodes=220, horizon=3,
                epochs=3, batch_size=60, minibatch=60)
            res = ppo.train(tcfg, env, make_scorer("label-count:2"), params,
                            pcfg, explorer, scfg)
            first = np.mean(res.episode_rewards[:60])
            last = np.mean(res.episode_rewards[-60:])
            wins += last > first
        assert wins == 5
