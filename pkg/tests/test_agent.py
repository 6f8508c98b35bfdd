"""Actor/Critic ensemble machinery: replay, targets, update dynamics, and
the episode/rollout plumbing (at smoke scale — policy quality is covered by
the acceptance suite against the trained checkpoint)."""

import dataclasses

import numpy as np
import pytest

from ircontrol import agent, belief as bel, env, nets


def mid_params():
    return env.TaskParams(2.0, 2.0, 0.2, 0.2, 0.2, 0.2, 0.5)


def fresh_ac(seed=0, **overrides):
    cfg = dataclasses.replace(agent.TrainingConfig(), **overrides)
    return agent.ActorCritic.build(cfg, np.random.default_rng(seed)), cfg


def some_belief(seed=0):
    rng = np.random.default_rng(seed)
    b = bel.init_belief([2.0, 1.0, -0.5], mid_params())
    b.mean[:] = rng.standard_normal(5)
    return b


class TestConfig:
    def test_appendix_defaults(self):
        cfg = agent.TrainingConfig()
        assert cfg.batch_size == 64
        assert cfg.gamma == 0.99
        assert cfg.replay_capacity == 1_000_000
        assert cfg.actor_lr == 1e-4
        assert cfg.critic_lr == 1e-3
        assert cfg.hidden_width == 128

    def test_validation(self):
        with pytest.raises(ValueError):
            agent.TrainingConfig(gamma=0.0).validate()
        with pytest.raises(ValueError):
            agent.TrainingConfig(episodes=0).validate()


class TestArchitecture:
    def test_shapes_and_activations(self):
        ac, _ = fresh_ac()
        assert ac.actor.in_dim == agent.ACTOR_IN
        assert ac.actor.out_dim == 2
        assert ac.actor.layers[-1].activation == "tanh"
        assert ac.critic.in_dim == agent.CRITIC_IN
        assert ac.critic.out_dim == 1
        assert ac.critic.layers[-1].activation == "linear"
        for layer in ac.actor.layers[:-1] + ac.critic.layers[:-1]:
            assert layer.activation == "relu"
            assert layer.W.shape[0] == 128

    def test_targets_start_identical(self):
        ac, _ = fresh_ac()
        for a, b in zip(ac.actor.layers, ac.target_actor.layers):
            assert np.array_equal(a.W, b.W)
        for a, b in zip(ac.critic.layers, ac.target_critic.layers):
            assert np.array_equal(a.W, b.W)


class TestReplay:
    def test_fifo_eviction(self):
        buf = agent.ReplayBuffer(capacity=3)
        for r in range(5):
            buf.push(np.zeros(bel.ENC_DIM), np.zeros(7), np.zeros(2),
                     float(r), np.zeros(bel.ENC_DIM), 0.0)
        assert buf.size == 3
        assert sorted(buf.reward.tolist()) == [2.0, 3.0, 4.0]

    def test_sample_shapes(self):
        buf = agent.ReplayBuffer(capacity=10)
        for r in range(6):
            buf.push(np.zeros(bel.ENC_DIM), np.zeros(7), np.zeros(2),
                     0.0, np.zeros(bel.ENC_DIM), 0.0)
        enc, th, a, r, nxt, d = buf.sample(np.random.default_rng(0), 4)
        assert enc.shape == (4, bel.ENC_DIM) and a.shape == (4, 2)


class TestAct:
    def test_noise_free_deterministic(self):
        ac, _ = fresh_ac()
        b = some_belief()
        rng = np.random.default_rng(1)
        a1 = agent.act(ac, b, mid_params(), 0.0, rng)
        a2 = agent.act(ac, b, mid_params(), 0.0, rng)
        assert a1 == a2

    def test_always_in_box(self):
        ac, _ = fresh_ac()
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = agent.act(ac, some_belief(rng.integers(1000)), mid_params(), 2.0, rng)
            assert abs(a.a_v) <= 1.0 and abs(a.a_w) <= 1.0

    def test_noise_magnitude(self):
        ac, _ = fresh_ac()
        b = some_belief()
        rng = np.random.default_rng(3)
        base = agent.act(ac, b, mid_params(), 0.0, rng).as_array()
        # small enough noise that the clip never bites for this input
        devs = np.array([agent.act(ac, b, mid_params(), 0.05, rng).as_array() - base
                         for _ in range(10_000)])
        assert np.std(devs) == pytest.approx(0.05, rel=0.05)

    def test_negative_noise_rejected(self):
        ac, _ = fresh_ac()
        with pytest.raises(ValueError):
            agent.act(ac, some_belief(), mid_params(), -0.1, np.random.default_rng(0))


class TestCriticTarget:
    def test_terminal_ignores_networks(self):
        ac, cfg = fresh_ac()
        enc = np.zeros((1, bel.ENC_DIM))
        th = np.zeros((1, 7))
        y = agent.critic_target(ac, cfg.gamma, th, np.array([1.0]), enc, np.array([1.0]))
        assert y[0] == pytest.approx(1.0)

    def test_constant_critic_bootstrap(self):
        ac, cfg = fresh_ac()
        # rig the target critic to output exactly c
        c = 0.7
        for layer in ac.target_critic.layers:
            layer.W[:] = 0.0
            layer.b[:] = 0.0
        ac.target_critic.layers[-1].b[:] = c
        y = agent.critic_target(ac, cfg.gamma, np.zeros((1, 7)), np.array([0.0]),
                                np.zeros((1, bel.ENC_DIM)), np.array([0.0]))
        assert y[0] == pytest.approx(0.99 * c)

    def test_gamma_zero(self):
        ac, _ = fresh_ac()
        y = agent.critic_target(ac, 0.0, np.zeros((1, 7)), np.array([0.3]),
                                np.zeros((1, bel.ENC_DIM)), np.array([0.0]))
        assert y[0] == pytest.approx(0.3)


class TestUpdateStep:
    def batch_of_one(self, reward=1.0, done=1.0, seed=4):
        rng = np.random.default_rng(seed)
        enc = rng.standard_normal((1, bel.ENC_DIM))
        th = rng.standard_normal((1, 7))
        a = np.clip(rng.standard_normal((1, 2)), -1, 1)
        return (enc, th, a, np.array([reward]), enc.copy(), np.array([done]))

    def test_critic_regresses_terminal_value(self):
        ac, cfg = fresh_ac()
        batch = self.batch_of_one()
        x = np.concatenate([batch[0], batch[1], batch[2]], axis=1)
        for _ in range(2000):
            agent.update_step(ac, batch, cfg.gamma, cfg.tau)
        q = nets.forward(ac.critic, x)
        assert abs(q[0, 0] - 1.0) < 0.01

    def test_actor_climbs_rigged_critic(self):
        ac, cfg = fresh_ac()
        # critic computes exactly Q = a_v: zero all but a direct passthrough
        for layer in ac.critic.layers:
            layer.W[:] = 0.0
            layer.b[:] = 0.0
        W0 = ac.critic.layers[0].W
        W0[0, agent.ACTOR_IN] = 1.0          # relu passes positive a_v
        W0[1, agent.ACTOR_IN] = -1.0         # and the mirrored path for a_v < 0
        ac.critic.layers[-1].W[0, 0] = 1.0
        ac.critic.layers[-1].W[0, 1] = -1.0
        batch = self.batch_of_one()
        x_actor = np.concatenate([batch[0], batch[1]], axis=1)
        before = nets.forward(ac.actor, x_actor)[0, 0]
        for _ in range(50):
            # freeze the critic by restoring it after each step
            Wc = [(l.W.copy(), l.b.copy()) for l in ac.critic.layers]
            agent.update_step(ac, batch, cfg.gamma, cfg.tau)
            for l, (W, b) in zip(ac.critic.layers, Wc):
                l.W[:], l.b[:] = W, b
        after = nets.forward(ac.actor, x_actor)[0, 0]
        assert after > before

    def test_returns_finite_diagnostics(self):
        ac, cfg = fresh_ac()
        cl, ao = agent.update_step(ac, self.batch_of_one(), cfg.gamma, cfg.tau)
        assert np.isfinite(cl) and np.isfinite(ao)


class TestExploration:
    def test_noise_schedule_endpoints(self):
        cfg = agent.TrainingConfig(episodes=1000)
        assert agent.exploration_std(cfg, 0) == pytest.approx(cfg.noise_start)
        assert agent.exploration_std(cfg, 500) == pytest.approx(cfg.noise_end)
        assert agent.exploration_std(cfg, 999) == pytest.approx(cfg.noise_end)

    def test_ou_noise_is_correlated(self):
        ou = agent.OUNoise()
        rng = np.random.default_rng(5)
        xs = np.array([ou.sample(0.3, rng) for _ in range(5000)])
        lag1 = np.corrcoef(xs[:-1, 0], xs[1:, 0])[0, 1]
        assert lag1 > 0.7  # theta = 0.15 gives strong step-to-step memory

    def test_heuristic_controller_succeeds(self):
        rng = np.random.default_rng(6)
        succ = []
        for _ in range(100):
            params = env.sample_params(rng)
            out, _ = agent.run_episode(
                None, params, rng,
                policy=lambda b, th, r: agent.heuristic_policy(b, th))
            succ.append(out.reward)
        assert np.mean(succ) >= 0.85

    def test_heuristic_stops_inside_believed_goal(self):
        p = mid_params()
        b = bel.init_belief([0.1, 0.1, 0.0], p)
        a = agent.heuristic_policy(b, p)
        assert a.a_v == 0.0 and a.a_w == 0.0


class TestTrainSmoke:
    def test_smoke_run_learns_signal(self):
        cfg = agent.TrainingConfig(episodes=500, seed=11, checkpoint_every=500)
        ac, curve = agent.train(cfg, log_every=100)
        assert len(curve) == 5
        assert all(np.isfinite(row[2]) for row in curve if not np.isnan(row[2]))
        # demonstrations guarantee reward flows from the very start
        assert max(row[1] for row in curve) > 0.0

    def test_seed_determinism(self):
        cfg = agent.TrainingConfig(episodes=60, seed=7)
        ac1, _ = agent.train(cfg, log_every=60)
        ac2, _ = agent.train(cfg, log_every=60)
        assert agent.save_actor_critic(ac1) == agent.save_actor_critic(ac2)


class TestRollouts:
    def test_run_episode_record_schema(self):
        ac, _ = fresh_ac()
        rec = {}
        out, steps = agent.run_episode(ac, mid_params(), np.random.default_rng(8),
                                       record=rec)
        assert set(rec) == {"o0", "states", "actions"}
        assert rec["states"].shape == (steps + 1, 5)
        assert rec["actions"].shape == (steps + 1, 2)
        assert np.allclose(rec["states"][0, :3], rec["o0"])
        assert np.max(np.abs(rec["actions"])) <= 1.0

    def test_evaluate_rejects_zero_episodes(self):
        ac, _ = fresh_ac()
        with pytest.raises(ValueError):
            agent.evaluate(ac, mid_params(), 0, np.random.default_rng(0))

    def test_random_policy_chance_rate(self):
        rng = np.random.default_rng(9)
        p = mid_params()
        sr, _ = agent.evaluate(None, p, 300, rng, policy=agent.random_policy)
        assert sr < 0.15  # sparse task: random stops rarely land in the goal

    def test_generate_dataset_reproducible(self):
        ac, _ = fresh_ac()
        p = mid_params()
        d1 = agent.generate_dataset(ac, p, 3, seed=5)
        d2 = agent.generate_dataset(ac, p, 3, seed=5)
        for a, b in zip(d1, d2):
            assert np.array_equal(a["states"], b["states"])
            assert np.array_equal(a["actions"], b["actions"])

    def test_generate_dataset_hides_private_variables(self):
        ac, _ = fresh_ac()
        recs = agent.generate_dataset(ac, mid_params(), 2, seed=1)
        for rec in recs:
            assert set(rec) == {"o0", "states", "actions", "seed"}

    def test_checkpoint_round_trip(self):
        ac, _ = fresh_ac(seed=10)
        text = agent.save_actor_critic(ac)
        clone = agent.load_actor_critic(text)
        assert agent.save_actor_critic(clone) == text

    def test_checkpoint_rejects_garbage(self):
        with pytest.raises(ValueError):
            agent.load_actor_critic("nope")
