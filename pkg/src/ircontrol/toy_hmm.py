"""A two-state, two-symbol hidden Markov model with exact EM.

This is the smallest latent-variable problem on which Monte-Carlo EM can
be checked against an exact answer: the posterior over latent paths is
computable by brute force, exact EM (Baum-Welch) has a closed form, and
the sampled E-step can be compared against it directly. The inverse-
control fit uses exactly the sampled-E-step structure, so this model is
where that machinery gets validated.

Parameterization: fixed uniform initial distribution; free parameters are
the two self-transition probabilities and the two "correct symbol"
emission probabilities, packed as (a0, a1, b0, b1) with
A = [[a0, 1-a0], [1-a1, a1]] and B = [[b0, 1-b0], [1-b1, b1]].
"""

from __future__ import annotations

import itertools

import numpy as np

PARAM_NAMES_HMM = ("a0", "a1", "b0", "b1")


def unpack(params: np.ndarray):
    """(4,) vector -> (A, B, pi) stochastic matrices."""
    a0, a1, b0, b1 = params
    A = np.array([[a0, 1.0 - a0], [1.0 - a1, a1]])
    B = np.array([[b0, 1.0 - b0], [1.0 - b1, b1]])
    pi = np.array([0.5, 0.5])
    return A, B, pi


def validate_hmm_params(params: np.ndarray) -> None:
    params = np.asarray(params, dtype=float)
    if params.shape != (4,):
        raise ValueError("HMM parameters must be a 4-vector")
    if np.any(params <= 0.0) or np.any(params >= 1.0):
        raise ValueError("HMM probabilities must lie strictly inside (0, 1)")


def sample_sequences(params: np.ndarray, n_seq: int, length: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw (n_seq, length) observation sequences from the model."""
    validate_hmm_params(params)
    A, B, pi = unpack(params)
    obs = np.empty((n_seq, length), dtype=np.int64)
    for i in range(n_seq):
        z = rng.choice(2, p=pi)
        for t in range(length):
            obs[i, t] = rng.choice(2, p=B[z])
            z = rng.choice(2, p=A[z])
    return obs


def log_likelihood_hmm(params: np.ndarray, obs: np.ndarray) -> float:
    """Observed-data log-likelihood via the forward algorithm."""
    validate_hmm_params(params)
    A, B, pi = unpack(params)
    total = 0.0
    for seq in np.atleast_2d(obs):
        alpha = pi * B[:, seq[0]]
        total += _normalize_and_log(alpha)
        for o in seq[1:]:
            alpha = (alpha @ A) * B[:, o]
            total += _normalize_and_log(alpha)
    return total


def _normalize_and_log(alpha: np.ndarray) -> float:
    c = alpha.sum()
    alpha /= c
    return float(np.log(c))


def brute_force_posterior(params: np.ndarray, seq: np.ndarray):
    """All 2^T latent paths with their exact posterior probabilities."""
    A, B, pi = unpack(params)
    T = len(seq)
    paths = np.array(list(itertools.product((0, 1), repeat=T)), dtype=np.int64)
    joint = np.empty(len(paths))
    for i, z in enumerate(paths):
        p = pi[z[0]] * B[z[0], seq[0]]
        for t in range(1, T):
            p *= A[z[t - 1], z[t]] * B[z[t], seq[t]]
        joint[i] = p
    return paths, joint / joint.sum()


def _counts_to_params(trans: np.ndarray, emit: np.ndarray) -> np.ndarray:
    """M-step closed form: normalize (expected) transition/emission counts."""
    return np.array([
        trans[0, 0] / trans[0].sum(),
        trans[1, 1] / trans[1].sum(),
        emit[0, 0] / emit[0].sum(),
        emit[1, 1] / emit[1].sum(),
    ])


def exact_em_step(params: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """One Baum-Welch iteration with the E-step done by brute-force
    enumeration of latent paths (the independent oracle form)."""
    trans = np.zeros((2, 2))
    emit = np.zeros((2, 2))
    for seq in np.atleast_2d(obs):
        paths, post = brute_force_posterior(params, seq)
        for z, w in zip(paths, post):
            for t in range(len(seq) - 1):
                trans[z[t], z[t + 1]] += w
            for t in range(len(seq)):
                emit[z[t], seq[t]] += w
    return _counts_to_params(trans, emit)


def ffbs_sample(params: np.ndarray, seq: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One exact posterior path via forward filtering, backward sampling."""
    A, B, pi = unpack(params)
    T = len(seq)
    alphas = np.empty((T, 2))
    alpha = pi * B[:, seq[0]]
    alphas[0] = alpha / alpha.sum()
    for t in range(1, T):
        alpha = (alphas[t - 1] @ A) * B[:, seq[t]]
        alphas[t] = alpha / alpha.sum()
    u = rng.uniform(size=T)
    z = np.empty(T, dtype=np.int64)
    z[T - 1] = int(u[T - 1] < alphas[T - 1, 1])
    for t in range(T - 2, -1, -1):
        w = alphas[t] * A[:, z[t + 1]]
        z[t] = int(u[t] * (w[0] + w[1]) < w[1])
    return z


def _ffbs_sample_many(params: np.ndarray, seq: np.ndarray, n_samples: int,
                      rng: np.random.Generator) -> np.ndarray:
    """(n_samples, T) posterior paths; the filtering pass is shared and the
    backward sampling pass is vectorized over samples. Sample 0 follows the
    same conditional draws as ffbs_sample given identical uniforms."""
    A, B, pi = unpack(params)
    T = len(seq)
    alphas = np.empty((T, 2))
    alpha = pi * B[:, seq[0]]
    alphas[0] = alpha / alpha.sum()
    for t in range(1, T):
        alpha = (alphas[t - 1] @ A) * B[:, seq[t]]
        alphas[t] = alpha / alpha.sum()
    u = rng.uniform(size=(n_samples, T))
    z = np.empty((n_samples, T), dtype=np.int64)
    z[:, T - 1] = u[:, T - 1] < alphas[T - 1, 1]
    for t in range(T - 2, -1, -1):
        w0 = alphas[t, 0] * A[0, z[:, t + 1]]
        w1 = alphas[t, 1] * A[1, z[:, t + 1]]
        z[:, t] = u[:, t] * (w0 + w1) < w1
    return z


def mcem_step(params: np.ndarray, obs: np.ndarray, n_samples: int,
              rng: np.random.Generator) -> np.ndarray:
    """One Monte-Carlo EM iteration: the E-step expectation is replaced by
    an average over sampled posterior paths; the M-step closed form is the
    same count normalization as exact EM."""
    trans = np.zeros((2, 2))
    emit = np.zeros((2, 2))
    for seq in np.atleast_2d(obs):
        z = _ffbs_sample_many(params, seq, n_samples, rng)
        pair = 2 * z[:, :-1] + z[:, 1:]
        trans += np.bincount(pair.ravel(), minlength=4).reshape(2, 2)
        eo = 2 * z + seq[None, :]
        emit += np.bincount(eo.ravel(), minlength=4).reshape(2, 2)
    return _counts_to_params(trans / n_samples, emit / n_samples)


def run_em(params0: np.ndarray, obs: np.ndarray, n_iter: int,
           step_fn=exact_em_step) -> tuple[np.ndarray, list[float]]:
    """Iterate an EM step function; returns final params and the
    observed-data log-likelihood trace (evaluated before each step)."""
    params = np.asarray(params0, dtype=float).copy()
    trace = []
    for _ in range(n_iter):
        trace.append(log_likelihood_hmm(params, obs))
        params = step_fn(params, obs)
    trace.append(log_likelihood_hmm(params, obs))
    return params, trace


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) for discrete distributions on a common support."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ValueError("distributions must share a support")
    mask = q > 0.0
    if np.any(p[mask] <= 0.0):
        return float("inf")
    return float(np.sum(q[mask] * np.log(q[mask] / p[mask])))


def mcem_toy_check(n_seq: int = 20, length: int = 10, n_iter: int = 40,
                   sample_sizes=(10, 100, 1000), seed: int = 0) -> dict:
    """Exercise exact EM and MC-EM on the toy model and report both the
    monotonicity of the exact likelihood trace and the distance of each
    MC-EM endpoint (averaged over trailing iterates to integrate out MC
    jitter) from the exact EM fixed point."""
    rng = np.random.default_rng(seed)
    true_params = np.array([0.85, 0.75, 0.9, 0.8])
    obs = sample_sequences(true_params, n_seq, length, rng)
    params0 = np.array([0.6, 0.6, 0.6, 0.6])

    exact_fixed, exact_trace = run_em(params0, obs, n_iter)
    diffs = np.diff(exact_trace)
    report = {
        "exact_fixed_point": exact_fixed,
        "exact_trace": exact_trace,
        "exact_monotone": bool(np.all(diffs >= -1e-12)),
        "mcem": {},
    }
    tail = max(5, n_iter // 4)
    for L in sample_sizes:
        mc_rng = np.random.default_rng(seed + 1)
        params = params0.copy()
        iterates = []
        for _ in range(n_iter):
            params = mcem_step(params, obs, L, mc_rng)
            iterates.append(params)
        endpoint = np.mean(iterates[-tail:], axis=0)
        report["mcem"][L] = {
            "endpoint": endpoint,
            "max_abs_error": float(np.max(np.abs(endpoint - exact_fixed))),
        }
    return report
