"""Bootstrap particle filter used as a test oracle for the Gaussian filter.

The agent itself never runs a particle filter; this module exists so the
EKF belief can be checked against a flexible posterior approximation on
the same observation streams. Everything is vectorized over the particle
axis and driven by an explicit rng.
"""

from __future__ import annotations

import numpy as np

from .env import DT, Action, Observation, TaskParams, wrap_angle


def init_particles(o0, n_particles: int, init_std: float = 1e-3) -> np.ndarray:
    """Particles around the initial sighting, at rest: (n, 5) array."""
    o0 = np.asarray(o0, dtype=float)
    if o0.shape != (3,):
        raise ValueError("initial sighting must be a (px, py, heading) 3-vector")
    if n_particles < 1:
        raise ValueError("need at least one particle")
    p = np.zeros((n_particles, 5))
    p[:, 0] = o0[0]
    p[:, 1] = o0[1]
    p[:, 2] = wrap_angle(o0[2])
    if init_std > 0.0:
        rng = np.random.default_rng(0)
        p[:, :3] += init_std * rng.standard_normal((n_particles, 3))
    return p


def propagate(particles: np.ndarray, a: Action, params: TaskParams,
              rng: np.random.Generator) -> np.ndarray:
    """Sample each particle through the stochastic step map."""
    n = particles.shape[0]
    v = params.gain_v * a.a_v + params.sigma_pro_v * rng.standard_normal(n)
    w = params.gain_w * a.a_w + params.sigma_pro_w * rng.standard_normal(n)
    out = np.empty_like(particles)
    c = np.cos(particles[:, 2])
    s = np.sin(particles[:, 2])
    out[:, 0] = particles[:, 0] + DT * v * c
    out[:, 1] = particles[:, 1] + DT * v * s
    out[:, 2] = wrap_angle(particles[:, 2] + DT * w)
    out[:, 3] = v
    out[:, 4] = w
    return out


def log_weights(particles: np.ndarray, o: Observation, params: TaskParams) -> np.ndarray:
    """Unnormalized observation log-weights under the velocity channel."""
    dv = (o.o_v - particles[:, 3]) / params.sigma_obs_v
    dw = (o.o_w - particles[:, 4]) / params.sigma_obs_w
    return -0.5 * (dv * dv + dw * dw)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: indices drawn with one uniform offset.

    Low-variance standard scheme: positions (u + i)/n against the weight
    cdf; returns an index array of the same length as weights.
    """
    n = weights.shape[0]
    total = weights.sum()
    if not total > 0.0:
        raise ValueError("weights sum to zero; filter has collapsed")
    positions = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(weights / total)
    cdf[-1] = 1.0  # guard against rounding just below 1
    return np.searchsorted(cdf, positions)


def pf_step(particles: np.ndarray, a: Action, o: Observation, params: TaskParams,
            rng: np.random.Generator) -> np.ndarray:
    """One bootstrap iteration: propagate, weight by o, resample."""
    prop = propagate(particles, a, params, rng)
    lw = log_weights(prop, o, params)
    w = np.exp(lw - lw.max())
    idx = systematic_resample(w, rng)
    return prop[idx]


def pf_mean_std(particles: np.ndarray):
    """Posterior mean and componentwise std (heading via circular mean)."""
    mean = particles.mean(axis=0)
    mean[2] = np.arctan2(np.sin(particles[:, 2]).mean(), np.cos(particles[:, 2]).mean())
    return mean, particles.std(axis=0)
