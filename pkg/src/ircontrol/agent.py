"""Train a task-parameter-conditioned Actor/Critic pair on the firefly task.

A single Actor and Critic receive the encoded belief together with the
(normalized) task parameter vector, so one trained pair acts as an ensemble
of agents: one near-optimal policy for every parameter setting in the prior
box. Training samples fresh parameters every episode and runs DDPG with
experience replay and soft target updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import belief as bel
from . import env
from . import nets

THETA_DIM = len(env.PARAM_NAMES)
ACTOR_IN = bel.ENC_DIM + THETA_DIM          # 27
CRITIC_IN = bel.ENC_DIM + THETA_DIM + 2     # 29

CHECKPOINT_HEADER = "ircontrol-checkpoint 1"
_NET_NAMES = ("actor", "critic", "target_actor", "target_critic")


@dataclass
class TrainingConfig:
    batch_size: int = 64
    gamma: float = 0.99
    replay_capacity: int = 1_000_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden_width: int = 128
    hidden_depth: int = 1
    tau: float = 0.005
    noise_start: float = 0.4
    noise_end: float = 0.05
    demo_prob: float = 0.3
    episodes: int = 200_000
    seed: int = 0
    checkpoint_every: int = 5000

    def validate(self) -> None:
        if self.batch_size < 1 or self.episodes < 1 or self.hidden_depth < 1:
            raise ValueError("batch_size, episodes and hidden_depth must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


class ReplayBuffer:
    """Bounded FIFO of transitions in preallocated arrays."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self.enc = np.zeros((capacity, bel.ENC_DIM))
        self.theta_n = np.zeros((capacity, THETA_DIM))
        self.action = np.zeros((capacity, 2))
        self.reward = np.zeros(capacity)
        self.next_enc = np.zeros((capacity, bel.ENC_DIM))
        self.done = np.zeros(capacity)

    def push(self, enc, theta_n, action, reward, next_enc, done):
        i = self._next
        self.enc[i] = enc
        self.theta_n[i] = theta_n
        self.action[i] = action
        self.reward[i] = reward
        self.next_enc[i] = next_enc
        self.done[i] = done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, size=n)
        return (self.enc[idx], self.theta_n[idx], self.action[idx],
                self.reward[idx], self.next_enc[idx], self.done[idx])


@dataclass
class ActorCritic:
    actor: nets.DenseNet
    critic: nets.DenseNet
    target_actor: nets.DenseNet
    target_critic: nets.DenseNet
    actor_opt: nets.AdamState = None
    critic_opt: nets.AdamState = None

    @classmethod
    def build(cls, config: TrainingConfig, rng: np.random.Generator) -> "ActorCritic":
        hidden = [config.hidden_width] * config.hidden_depth
        acts = ["relu"] * config.hidden_depth
        actor = nets.init_dense([ACTOR_IN] + hidden + [2], acts + ["tanh"], rng)
        critic = nets.init_dense([CRITIC_IN] + hidden + [1], acts + ["linear"], rng)
        ac = cls(actor, critic, actor.copy(), critic.copy())
        ac.actor_opt = nets.adam_init(actor, config.actor_lr)
        ac.critic_opt = nets.adam_init(critic, config.critic_lr)
        return ac


def actor_input(b: bel.BeliefState, params: env.TaskParams) -> np.ndarray:
    return np.concatenate([bel.encode(b), env.normalize_params(params.as_array())])


def act(ac: ActorCritic, b: bel.BeliefState, params: env.TaskParams,
        noise_std: float, rng: np.random.Generator) -> env.Action:
    """Deterministic policy output plus clipped Gaussian exploration noise."""
    if noise_std < 0.0:
        raise ValueError("noise_std must be >= 0")
    a = nets.forward(ac.actor, actor_input(b, params))
    if noise_std > 0.0:
        a = a + noise_std * rng.standard_normal(2)
    a = np.clip(a, -1.0, 1.0)
    return env.Action(float(a[0]), float(a[1]))


def critic_target(ac: ActorCritic, gamma: float, theta_n, reward, next_enc, done):
    """Bellman target y = r + gamma * (1 - done) * Q_t(b', Actor_t(b'))."""
    x_next = np.concatenate([next_enc, theta_n], axis=-1)
    a_next = nets.forward(ac.target_actor, x_next)
    q_next = nets.forward(ac.target_critic, np.concatenate([x_next, a_next], axis=-1))
    return reward + gamma * (1.0 - done) * q_next[..., 0]


def update_step(ac: ActorCritic, batch, gamma: float, tau: float):
    """One DDPG update on a minibatch: critic regression to the Bellman
    target, actor ascent on Q through the critic's input gradient, then
    soft target updates. Returns (critic mse, mean actor Q)."""
    enc, theta_n, action, reward, next_enc, done = batch
    n = enc.shape[0]

    y = critic_target(ac, gamma, theta_n, reward, next_enc, done)
    x_c = np.concatenate([enc, theta_n, action], axis=-1)
    q, cache_c = nets.forward_cache(ac.critic, x_c)
    err = q[:, 0] - y
    critic_loss = float(np.mean(err * err))
    if not math.isfinite(critic_loss):
        raise FloatingPointError(
            f"non-finite critic loss (|y| max {np.max(np.abs(y)):.3g}, batch size {n})")
    grads_c, _ = nets.backward(ac.critic, cache_c, (2.0 * err / n)[:, None])
    nets.adam_step(ac.critic, grads_c, ac.critic_opt)

    x_a = np.concatenate([enc, theta_n], axis=-1)
    a_pi, cache_a = nets.forward_cache(ac.actor, x_a)
    q_pi, cache_q = nets.forward_cache(ac.critic, np.concatenate([x_a, a_pi], axis=-1))
    actor_obj = float(np.mean(q_pi))
    _, dq_dx = nets.backward(ac.critic, cache_q, np.full((n, 1), 1.0 / n))
    grads_a, _ = nets.backward(ac.actor, cache_a, -dq_dx[:, ACTOR_IN:])
    nets.adam_step(ac.actor, grads_a, ac.actor_opt)

    nets.soft_update(ac.target_actor, ac.actor, tau)
    nets.soft_update(ac.target_critic, ac.critic, tau)
    return critic_loss, actor_obj


def exploration_std(config: TrainingConfig, episode: int) -> float:
    """Linear anneal from noise_start to noise_end over the first half of training."""
    half = max(1, config.episodes // 2)
    frac = min(1.0, episode / half)
    return config.noise_start + frac * (config.noise_end - config.noise_start)


class OUNoise:
    """Ornstein-Uhlenbeck action noise: temporally correlated excursions that
    actually carry the agent somewhere, unlike white noise on this task."""

    def __init__(self, theta: float = 0.15):
        self.theta = theta
        self.x = np.zeros(2)

    def reset(self):
        self.x = np.zeros(2)

    def sample(self, sigma: float, rng: np.random.Generator) -> np.ndarray:
        self.x = self.x - self.theta * self.x + sigma * rng.standard_normal(2)
        return self.x


def _explore_anneal(value: float, config: TrainingConfig, episode: int) -> float:
    """Linear decay to zero over the first half of training."""
    half = max(1, config.episodes // 2)
    return value * max(0.0, 1.0 - episode / half)


def heuristic_policy(b: bel.BeliefState, params: env.TaskParams) -> env.Action:
    """Scripted belief-space controller used to seed the replay buffer.

    Steers toward the believed target with a proportional turn, approaches
    at a speed that closes the believed distance in a few steps, and stops
    once the belief mean is comfortably inside the goal radius. Succeeds on
    the large majority of episodes, which is what gives the sparse terminal
    reward enough coverage in replay for the critic to learn from; it reads
    only agent-visible state (belief and parameters), never the world state.
    """
    bx, by, bh = b.mean[0], b.mean[1], b.mean[2]
    d = math.hypot(bx, by)
    if d <= 0.8 * params.goal_radius:
        return env.Action(0.0, 0.0)
    bearing = env.wrap_angle(math.atan2(-by, -bx) - bh)
    a_w = min(1.0, max(-1.0, 2.0 * bearing / params.gain_w))
    a_v = min(1.0, max(0.12, d / (3.0 * env.DT * params.gain_v)))
    if abs(bearing) > 1.0:
        a_v = 0.12  # turn in place before driving off-axis
    return env.Action(a_v, a_w)


def run_episode(ac: ActorCritic, params: env.TaskParams, rng: np.random.Generator,
                noise_std: float = 0.0, theta_input: env.TaskParams | None = None,
                policy=None, record=None):
    """Roll out one trial through the full belief loop under world `params`.

    `theta_input` feeds a different parameter vector to the networks and the
    belief filter than the one governing the world (the agent's internal
    model); it defaults to the world parameters. Returns (outcome, steps).
    `record`, if given, is a dict filled with o0/states/actions arrays.
    """
    theta = theta_input if theta_input is not None else params
    s = env.reset(rng, params)
    b = bel.init_belief(np.array([s.px, s.py, s.heading]), theta)
    states, actions = [s.as_array()], []
    t = 0
    while True:
        if policy is not None:
            a = policy(b, theta, rng)
        else:
            a = act(ac, b, theta, noise_std, rng)
        actions.append(a.as_array())
        outcome = env.is_terminal(s, a, t, params)
        if outcome is not None:
            break
        s = env.step(s, a, params, rng)
        o = env.observe(s, theta, rng)
        b = bel.belief_step(b, a, o, theta)
        states.append(s.as_array())
        t += 1
    if record is not None:
        record["o0"] = states[0][:3].copy()
        record["states"] = np.array(states)
        record["actions"] = np.array(actions)
    return outcome, t


def random_policy(b, theta, rng):
    a = rng.uniform(-1.0, 1.0, size=2)
    return env.Action(float(a[0]), float(a[1]))


def train(config: TrainingConfig, checkpoint_fn=None, log_every: int = 500):
    """Full training loop; returns (ActorCritic, curve rows).

    Curve rows are (episode, mean reward over trailing window, mean critic
    loss, mean actor objective, exploration std). checkpoint_fn(episode, ac)
    is called every config.checkpoint_every episodes and at the end; on
    training divergence it is called once more before the error propagates.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    ac = ActorCritic.build(config, rng)
    replay = ReplayBuffer(config.replay_capacity)
    warmup = 10 * config.batch_size

    curve = []
    rewards, closses, aobjs = [], [], []
    ou = OUNoise()
    try:
        for episode in range(config.episodes):
            params = env.sample_params(rng)
            theta_n = env.normalize_params(params.as_array())
            noise_std = exploration_std(config, episode)
            demo_prob = _explore_anneal(config.demo_prob, config, episode)
            demo = bool(rng.uniform() < demo_prob)
            ou.reset()
            s = env.reset(rng, params)
            b = bel.init_belief(np.array([s.px, s.py, s.heading]), params)
            enc = bel.encode(b)
            t = 0
            while True:
                if demo:
                    base = heuristic_policy(b, params).as_array()
                    raw = base + 0.2 * noise_std * rng.standard_normal(2)
                else:
                    base = nets.forward(ac.actor, actor_input(b, params))
                    raw = base + ou.sample(noise_std, rng)
                raw = np.clip(raw, -1.0, 1.0)
                a = env.Action(float(raw[0]), float(raw[1]))
                outcome = env.is_terminal(s, a, t, params)
                if outcome is not None:
                    replay.push(enc, theta_n, a.as_array(), outcome.reward, enc, 1.0)
                    if replay.size >= warmup:
                        cl, ao = update_step(ac, replay.sample(rng, config.batch_size),
                                             config.gamma, config.tau)
                        closses.append(cl)
                        aobjs.append(ao)
                    rewards.append(outcome.reward)
                    break
                s = env.step(s, a, params, rng)
                o = env.observe(s, params, rng)
                b = bel.belief_step(b, a, o, params)
                next_enc = bel.encode(b)
                replay.push(enc, theta_n, a.as_array(), 0.0, next_enc, 0.0)
                if replay.size >= warmup:
                    cl, ao = update_step(ac, replay.sample(rng, config.batch_size),
                                         config.gamma, config.tau)
                    closses.append(cl)
                    aobjs.append(ao)
                enc = next_enc
                t += 1
            if (episode + 1) % log_every == 0:
                window = rewards[-log_every:]
                curve.append((episode + 1, float(np.mean(window)),
                              float(np.mean(closses)) if closses else float("nan"),
                              float(np.mean(aobjs)) if aobjs else float("nan"),
                              noise_std))
                closses, aobjs = [], []
            if checkpoint_fn is not None and (episode + 1) % config.checkpoint_every == 0:
                checkpoint_fn(episode + 1, ac)
    except FloatingPointError:
        if checkpoint_fn is not None:
            checkpoint_fn(-1, ac)
        raise
    if checkpoint_fn is not None:
        checkpoint_fn(config.episodes, ac)
    return ac, curve


def evaluate(ac: ActorCritic, params: env.TaskParams, n_episodes: int,
             rng: np.random.Generator, theta_input: env.TaskParams | None = None,
             policy=None):
    """Noise-free policy rollouts; returns (success rate, mean steps)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    successes = 0
    steps = 0
    for _ in range(n_episodes):
        outcome, t = run_episode(ac, params, rng, noise_std=0.0,
                                 theta_input=theta_input, policy=policy)
        successes += int(outcome.reward > 0.0)
        steps += t
    return successes / n_episodes, steps / n_episodes


def generate_dataset(ac: ActorCritic, theta_star: env.TaskParams, n_episodes: int,
                     seed: int, phi: env.TaskParams | None = None):
    """Roll out the noise-free ensemble policy conditioned on theta_star in a
    world governed by phi (defaults to theta_star), recording only what the
    experimentalist can see: the initial sighting and (state, action) pairs.

    Returns a list of dicts with keys o0/states/actions/seed; episode i uses
    the rng stream seeded by (seed, i) so episodes are independent and
    reproducible."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    world = phi if phi is not None else theta_star
    out = []
    for i in range(n_episodes):
        rng = np.random.default_rng([seed, i])
        rec = {}
        run_episode(ac, world, rng, noise_std=0.0, theta_input=theta_star, record=rec)
        rec["seed"] = i
        out.append(rec)
    return out


def save_actor_critic(ac: ActorCritic) -> str:
    parts = [CHECKPOINT_HEADER]
    for name in _NET_NAMES:
        parts.append(f"## net {name}")
        parts.append(nets.save_net(getattr(ac, name)))
    return "\n".join(parts)


def load_actor_critic(text: str) -> ActorCritic:
    lines = text.splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError("not an ircontrol checkpoint")
    sections = {}
    name = None
    buf = []
    for line in lines[1:]:
        if line.startswith("## net "):
            if name is not None:
                sections[name] = "\n".join(buf)
            name = line[len("## net "):]
            buf = []
        else:
            buf.append(line)
    if name is not None:
        sections[name] = "\n".join(buf)
    missing = [n for n in _NET_NAMES if n not in sections]
    if missing:
        raise ValueError(f"checkpoint missing nets: {missing}")
    return ActorCritic(*[nets.load_net(sections[n]) for n in _NET_NAMES])
