"""Recover an agent's internal task parameters from observed trajectories.

The experimentalist sees world states and actions but never the agent's
observations or beliefs. For a candidate parameter vector theta we impute
the latent observation channel with Monte-Carlo samples, replay the
deterministic belief filter over them, and score theta by the average
log-likelihood of the observation draws and of the recorded actions under
a smoothed version of the ensemble policy. A frozen bank of standard-normal
draws (common random numbers) makes the Monte-Carlo objective a smooth,
deterministic function of theta, so gradient ascent by central finite
differences in an unconstrained reparameterization is well posed.

`impute_episode` is the readable single-episode reference; `log_likelihood`
and `fit` run the identical arithmetic vectorized over samples, episodes,
and finite-difference probe points at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import belief as bel
from . import env
from . import fastpath
from . import nets
from .env import BOX_HI, BOX_LO, PARAM_NAMES, TaskParams, wrap_angle

# Slope of the componentwise sigmoid mapping unconstrained coordinates onto
# the prior box. Steeper slopes shorten the ascent path in u-space at fixed
# learning rate; 8 keeps typical fits a few hundred iterations without
# crushing resolution near the box edges.
SIGMOID_SCALE = 8.0

THETA_DIM = len(PARAM_NAMES)


@dataclass
class EpisodeRecord:
    """One recorded trial: the initial target sighting plus the
    experimentalist-visible (state, action) sequence."""

    o0: np.ndarray       # (3,) initial relative pose sighting
    states: np.ndarray   # (T+1, 5)
    actions: np.ndarray  # (T+1, 2); actions[T] is the final (stop) command
    phi_id: str = ""
    seed: int = 0

    def __post_init__(self):
        self.o0 = np.asarray(self.o0, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.o0.shape != (3,):
            raise ValueError("o0 must be a 3-vector")
        if self.states.ndim != 2 or self.states.shape[1] != 5 or self.states.shape[0] < 1:
            raise ValueError("states must be a non-empty (T+1, 5) array")
        if self.actions.shape != (self.states.shape[0], 2):
            raise ValueError("actions must pair one (a_v, a_w) with every state")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.o0))):
            raise ValueError("states must be finite")
        if np.any(np.abs(self.actions) > 1.0):
            raise ValueError("actions must lie in [-1, 1]")

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1


@dataclass
class IRCConfig:
    n_samples: int = 50
    learning_rate: float = 1e-3
    sigma_a: float = 0.05
    fd_step: float = 1e-3
    max_iter: int = 2000
    tol: float = 1e-4        # |delta L| per data point
    patience: int = 10
    seed: int = 0

    def validate(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.sigma_a <= 0 or self.fd_step <= 0:
            raise ValueError("sigma_a and fd_step must be positive")


@dataclass
class ThetaEstimate:
    u: np.ndarray
    theta: np.ndarray
    trace_u: list = field(default_factory=list)
    trace_ll: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0


def box_map(u):
    """Componentwise scaled sigmoid from unconstrained u onto the prior box."""
    u = np.asarray(u, dtype=float)
    # exp(-logaddexp(0, -x)) is the sigmoid without overflow at large |x|
    return BOX_LO + (BOX_HI - BOX_LO) * np.exp(-np.logaddexp(0.0, -SIGMOID_SCALE * u))


def box_unmap(theta):
    theta = np.asarray(theta, dtype=float)
    frac = (theta - BOX_LO) / (BOX_HI - BOX_LO)
    if np.any(frac <= 0.0) or np.any(frac >= 1.0):
        raise ValueError("theta must lie strictly inside the prior box")
    return np.log(frac / (1.0 - frac)) / SIGMOID_SCALE


class NoiseBank:
    """Frozen standard-normal draws indexed by (sample, episode, step, channel).

    Regenerated bit-identically from (seed, n_samples, n_episodes, max_steps),
    so likelihood evaluations at different theta share the exact same latent
    noise: differences in the objective reflect parameters, not resampling.
    """

    def __init__(self, seed: int, n_samples: int, n_episodes: int, max_steps: int):
        self.seed = seed
        self.shape = (n_samples, n_episodes, max_steps, 2)
        self.eps = np.random.default_rng(seed).standard_normal(self.shape)


class PackedDataset:
    """Episode list flattened into padded arrays, episodes sorted by length
    descending so the per-step active set is a contiguous prefix."""

    def __init__(self, episodes: list[EpisodeRecord]):
        if not episodes:
            raise ValueError("dataset is empty")
        # canonical order: length descending with a content tiebreak, so the
        # packing (and thus the noise-bank column of each episode) does not
        # depend on the order the caller supplied the episodes in
        order = sorted(range(len(episodes)),
                       key=lambda i: (-episodes[i].n_steps,
                                      episodes[i].states.tobytes(),
                                      episodes[i].actions.tobytes()))
        self.episodes = [episodes[i] for i in order]
        self.lengths = np.array([ep.n_steps for ep in self.episodes])
        self.n_episodes = len(self.episodes)
        self.max_steps = int(self.lengths.max())
        tmax = self.max_steps
        self.o0 = np.stack([ep.o0 for ep in self.episodes])
        self.states = np.zeros((self.n_episodes, tmax + 1, 5))
        self.actions = np.zeros((self.n_episodes, tmax + 1, 2))
        for i, ep in enumerate(self.episodes):
            self.states[i, : ep.n_steps + 1] = ep.states
            self.actions[i, : ep.n_steps + 1] = ep.actions

    @property
    def n_points(self) -> int:
        """Number of (episode, step) likelihood terms."""
        return int(self.lengths.sum())


def action_loglik(a, a_star, sigma_a: float) -> float:
    """Isotropic 2D Gaussian log density of recorded action a around the
    policy output a_star (the smoothed deterministic policy)."""
    if sigma_a <= 0:
        raise ValueError("sigma_a must be positive")
    a = np.asarray(a, dtype=float)
    a_star = np.asarray(a_star, dtype=float)
    d = a - a_star
    return float(-math.log(2.0 * math.pi * sigma_a * sigma_a)
                 - float(d @ d) / (2.0 * sigma_a * sigma_a))


def impute_episode(ep: EpisodeRecord, theta: TaskParams, bank_slice: np.ndarray,
                   actor: nets.DenseNet, sigma_a: float) -> float:
    """Single-sample likelihood contribution of one episode, step by step.

    bank_slice holds the episode's standard-normal draws, shape (T, 2).
    For each t >= 1: impute the observation from the recorded velocity and
    the bank, advance the belief filter, and score the imputed observation
    and the recorded action.
    """
    if bank_slice.shape[0] < ep.n_steps:
        raise ValueError("noise bank slice does not cover the episode")
    theta_arr = theta.as_array()
    theta_n = env.normalize_params(theta_arr)
    b = bel.init_belief(ep.o0, theta)
    total = 0.0
    for t in range(1, ep.n_steps + 1):
        s_t = env.WorldState.from_array(ep.states[t])
        a_prev = env.Action(*ep.actions[t - 1])
        o = env.Observation(s_t.v_real + theta.sigma_obs_v * bank_slice[t - 1, 0],
                            s_t.w_real + theta.sigma_obs_w * bank_slice[t - 1, 1])
        try:
            b = bel.belief_step(b, a_prev, o, theta)
        except (ValueError, np.linalg.LinAlgError) as e:
            raise RuntimeError(f"belief update failed at episode {ep.phi_id!r} "
                               f"step {t}: {e}") from e
        a_star = nets.forward(actor, np.concatenate([bel.encode(b), theta_n]))
        total += env.log_obs_density(o, s_t, theta)
        total += action_loglik(ep.actions[t], a_star, sigma_a)
    return total


def _loglik_multi(thetas: np.ndarray, data: PackedDataset, bank: NoiseBank,
                  actor: nets.DenseNet, sigma_a: float) -> np.ndarray:
    """Log-likelihood at K parameter vectors at once, vectorized over
    (probe point, Monte-Carlo sample, episode) via the compiled filter
    kernel; arithmetic identical to impute_episode."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    K = thetas.shape[0]
    L = bank.shape[0]
    E = data.n_episodes
    if bank.shape[1] != E or bank.shape[2] < data.max_steps:
        raise ValueError("noise bank is not sized for this dataset")
    N = K * L * E

    theta_n = env.normalize_params(thetas)                   # (K,7)
    mean = np.empty((N, 5))
    cov = np.empty((N, 15))
    fastpath.init_beliefs(mean, cov, data.o0, K, L, E)

    x = np.empty((N, bel.ENC_DIM + THETA_DIM))
    policy = fastpath.ActorEval(actor, N)

    totals = np.zeros(K)
    prev_active = -1
    for t in range(1, data.max_steps + 1):
        active = int(np.searchsorted(-data.lengths, -t, side="right"))
        if active == 0:
            break
        rows = K * L * active
        # belief rows are packed (k, l, e<active): theta columns depend on k
        # only, so they need rewriting only when the packing shrinks
        if active != prev_active:
            x[:rows, bel.ENC_DIM:] = np.repeat(theta_n, L * active, axis=0)
            prev_active = active
        fastpath.step_and_encode(mean, cov, thetas,
                                 data.actions[:, t - 1], data.states[:, t, 3:5],
                                 bank.eps[:, :, t - 1], x,
                                 totals, K, L, E, active)
        a_star = policy(x[:rows])
        fastpath.action_terms(a_star, data.actions[:, t], sigma_a, totals, K, L, active)

    return totals / L


def log_likelihood(theta, data: PackedDataset, bank: NoiseBank,
                   actor: nets.DenseNet, sigma_a: float = 0.05) -> float:
    """Monte-Carlo marginal log-likelihood of the dataset at one theta:
    (1/L) * sum over samples, episodes and steps of the imputed-observation
    and action terms. Deterministic given (theta, data, bank, actor)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (THETA_DIM,):
        raise ValueError(f"theta must have {THETA_DIM} components")
    return float(_loglik_multi(theta[None], data, bank, actor, sigma_a)[0])


def grad_theta(u: np.ndarray, data: PackedDataset, bank: NoiseBank,
               actor: nets.DenseNet, config: IRCConfig,
               objective=None):
    """Central finite differences of the objective in u-space, all probe
    points evaluated against the same noise bank. Returns (grad, center value).

    `objective` replaces the Monte-Carlo likelihood with an arbitrary
    callable over theta batches (testing hook)."""
    h = config.fd_step
    us = np.tile(u, (1 + 2 * THETA_DIM, 1))
    for i in range(THETA_DIM):
        us[1 + 2 * i, i] += h
        us[2 + 2 * i, i] -= h
    thetas = box_map(us)
    if objective is None:
        lls = _loglik_multi(thetas, data, bank, actor, config.sigma_a)
    else:
        lls = np.asarray([objective(th) for th in thetas])
    grad = (lls[1::2] - lls[2::2]) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        bad = [PARAM_NAMES[i] for i in range(THETA_DIM) if not np.isfinite(grad[i])]
        raise FloatingPointError(f"non-finite likelihood gradient for {bad}")
    return grad, float(lls[0])


def fit(episodes: list[EpisodeRecord], actor: nets.DenseNet,
        config: IRCConfig) -> ThetaEstimate:
    """Maximum-likelihood recovery of the internal parameters by Adam ascent
    on the common-random-numbers Monte-Carlo objective.

    Initializes from a random prior draw, stops once |delta L| stays under
    tol per data point for `patience` consecutive iterations, and returns
    the full (u, L) trace. Deterministic given config.seed.
    """
    config.validate()
    data = PackedDataset(episodes)
    rng = np.random.default_rng(config.seed)
    theta0 = rng.uniform(BOX_LO, BOX_HI)
    u = box_unmap(theta0)
    bank = NoiseBank(config.seed + 1, config.n_samples, data.n_episodes, data.max_steps)

    m = np.zeros(THETA_DIM)
    v = np.zeros(THETA_DIM)
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    est = ThetaEstimate(u=u.copy(), theta=box_map(u))
    tol_abs = config.tol * data.n_points
    quiet = 0
    last_ll = None
    for it in range(1, config.max_iter + 1):
        grad, ll = grad_theta(u, data, bank, actor, config)
        est.trace_u.append(u.copy())
        est.trace_ll.append(ll)
        est.n_iter = it
        if last_ll is not None:
            quiet = quiet + 1 if abs(ll - last_ll) < tol_abs else 0
            if quiet >= config.patience:
                est.converged = True
                break
        last_ll = ll
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1 ** it)
        vhat = v / (1.0 - beta2 ** it)
        u = u + config.learning_rate * mhat / (np.sqrt(vhat) + eps_adam)
    best = int(np.argmax(est.trace_ll))
    est.u = est.trace_u[best].copy()
    est.theta = box_map(est.u)
    return est


class IRCEstimator:
    """Estimator-style front end: configure, `fit` a list of EpisodeRecord,
    read the recovered parameters off `theta_`.

    Follows the get_params/set_params convention so it composes with
    grid-search style tooling.
    """

    def __init__(self, actor=None, n_samples: int = 50, learning_rate: float = 1e-3,
                 sigma_a: float = 0.05, fd_step: float = 1e-3, max_iter: int = 2000,
                 tol: float = 1e-4, patience: int = 10, seed: int = 0):
        self.actor = actor
        self.n_samples = n_samples
        self.learning_rate = learning_rate
        self.sigma_a = sigma_a
        self.fd_step = fd_step
        self.max_iter = max_iter
        self.tol = tol
        self.patience = patience
        self.seed = seed

    _param_names = ("actor", "n_samples", "learning_rate", "sigma_a", "fd_step",
                    "max_iter", "tol", "patience", "seed")

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "IRCEstimator":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _config(self) -> IRCConfig:
        return IRCConfig(n_samples=self.n_samples, learning_rate=self.learning_rate,
                         sigma_a=self.sigma_a, fd_step=self.fd_step,
                         max_iter=self.max_iter, tol=self.tol,
                         patience=self.patience, seed=self.seed)

    def fit(self, episodes: list[EpisodeRecord]) -> "IRCEstimator":
        if self.actor is None:
            raise ValueError("an actor network is required before fitting")
        est = fit(episodes, self.actor, self._config())
        self.result_ = est
        self.theta_ = est.theta
        self.u_ = est.u
        self.converged_ = est.converged
        self.log_likelihood_ = est.trace_ll[-1] if est.trace_ll else None
        return self
