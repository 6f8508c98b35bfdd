"""Gaussian belief over the world state and its extended-Kalman-filter update.

The belief covers the full 5D state (px, py, heading, v_real, w_real) even
though only velocities are ever observed: velocity evidence constrains
position through the process model, which is exactly the structure of
navigating by optic flow.

Scalar functions (predict/update/belief_step) are the readable reference
path. The *_batch functions apply the identical arithmetic to stacked
arrays of beliefs and are what training and likelihood evaluation use; a
test pins them against the scalar path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import DT, Action, Observation, TaskParams, wrap_angle

STATE_DIM = 5
ENC_DIM = 5 + 15  # mean + upper-triangular covariance entries

_TRIU_R, _TRIU_C = np.triu_indices(STATE_DIM)

INIT_COV = 1e-6


@dataclass
class BeliefState:
    mean: np.ndarray  # (5,)
    cov: np.ndarray   # (5, 5)

    def copy(self) -> "BeliefState":
        return BeliefState(self.mean.copy(), self.cov.copy())


def validate_belief(b: BeliefState) -> None:
    if b.mean.shape != (STATE_DIM,) or b.cov.shape != (STATE_DIM, STATE_DIM):
        raise ValueError("belief has wrong shape")
    if not np.all(np.isfinite(b.mean)) or not np.all(np.isfinite(b.cov)):
        raise ValueError("belief contains non-finite values")
    if np.max(np.abs(b.cov - b.cov.T)) > 1e-10:
        raise ValueError("belief covariance is not symmetric")
    if np.linalg.eigvalsh(b.cov)[0] < -1e-10:
        raise ValueError("belief covariance is not positive semi-definite")


def init_belief(o0, params: TaskParams) -> BeliefState:
    """Belief after directly sighting the target: pose known to 1e-6, at rest."""
    o0 = np.asarray(o0, dtype=float)
    if o0.shape != (3,):
        raise ValueError("initial sighting must be a (px, py, heading) 3-vector")
    mean = np.array([o0[0], o0[1], wrap_angle(o0[2]), 0.0, 0.0])
    return BeliefState(mean, INIT_COV * np.eye(STATE_DIM))


def predict(b: BeliefState, a: Action, params: TaskParams) -> BeliefState:
    """Propagate through the noiseless step map; push covariance through its
    Jacobian and inject process noise.

    With c = cos(heading), s = sin(heading), v' = gain_v*a_v:
      J rows: px' = [1, 0, -DT*v'*s, 0, 0]; py' = [0, 1, DT*v'*c, 0, 0];
              h' = [0, 0, 1, 0, 0]; v', w' = 0 (velocities are set fresh).
    Process noise (eta_v, eta_w) enters as G @ diag(sigma_pro^2) @ G.T with
      G = [[DT*c, 0], [DT*s, 0], [0, DT], [1, 0], [0, 1]],
    i.e. the exact linear push-forward of the same-step Euler integration.
    """
    validate_belief(b)
    mean, cov = _predict_arrays(b.mean[None], b.cov[None], np.asarray(a.as_array())[None],
                                params.as_array()[None])
    return BeliefState(mean[0], cov[0])


def update(b_pred: BeliefState, o: Observation, params: TaskParams):
    """Kalman update against the velocity observation; Joseph-form covariance.

    Returns the posterior belief and the innovation log marginal likelihood
    (exposed for diagnostics only).
    """
    validate_belief(b_pred)
    mean, cov, loglik = _update_arrays(b_pred.mean[None], b_pred.cov[None],
                                       np.asarray(o.as_array())[None],
                                       params.as_array()[None])
    return BeliefState(mean[0], cov[0]), float(loglik[0])


def belief_step(b: BeliefState, a: Action, o: Observation, params: TaskParams) -> BeliefState:
    """The deterministic belief transition: predict with a, update with o."""
    post, _ = update(predict(b, a, params), o, params)
    return post


def encode(b: BeliefState) -> np.ndarray:
    """Mean (5) followed by row-major upper-triangular covariance (15)."""
    return np.concatenate([b.mean, b.cov[_TRIU_R, _TRIU_C]])


def decode(vec: np.ndarray) -> BeliefState:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (ENC_DIM,):
        raise ValueError(f"encoded belief must have {ENC_DIM} entries")
    cov = np.zeros((STATE_DIM, STATE_DIM))
    cov[_TRIU_R, _TRIU_C] = vec[5:]
    cov = cov + np.triu(cov, 1).T
    return BeliefState(vec[:5].copy(), cov)


# ---------------------------------------------------------------------------
# batched arithmetic over stacked beliefs; leading axes are arbitrary


def _predict_arrays(means, covs, actions, thetas):
    """means (..., 5), covs (..., 5, 5), actions (..., 2), thetas (..., 7)."""
    gv, gw = thetas[..., 0], thetas[..., 1]
    spv, spw = thetas[..., 2], thetas[..., 3]
    h = means[..., 2]
    c, s = np.cos(h), np.sin(h)
    v = gv * actions[..., 0]
    w = gw * actions[..., 1]

    new_means = np.empty_like(means)
    new_means[..., 0] = means[..., 0] + DT * v * c
    new_means[..., 1] = means[..., 1] + DT * v * s
    new_means[..., 2] = wrap_angle(h + DT * w)
    new_means[..., 3] = v
    new_means[..., 4] = w

    J = np.zeros(means.shape[:-1] + (STATE_DIM, STATE_DIM))
    J[..., 0, 0] = 1.0
    J[..., 1, 1] = 1.0
    J[..., 2, 2] = 1.0
    J[..., 0, 2] = -DT * v * s
    J[..., 1, 2] = DT * v * c

    G = np.zeros(means.shape[:-1] + (STATE_DIM, 2))
    G[..., 0, 0] = DT * c
    G[..., 1, 0] = DT * s
    G[..., 2, 1] = DT
    G[..., 3, 0] = 1.0
    G[..., 4, 1] = 1.0

    JP = J @ covs
    new_covs = JP @ np.swapaxes(J, -1, -2)
    Gs = G * np.stack([spv, spw], axis=-1)[..., None, :]
    new_covs += Gs @ np.swapaxes(Gs, -1, -2)
    new_covs = 0.5 * (new_covs + np.swapaxes(new_covs, -1, -2))
    return new_means, new_covs


def _update_arrays(means, covs, obs, thetas):
    """Kalman update with H selecting the velocity block; 2x2 innovation
    solved in closed form. Returns (means, covs, innovation loglik)."""
    sov, sow = thetas[..., 4], thetas[..., 5]
    r0, r1 = sov * sov, sow * sow

    # innovation covariance S = P[3:,3:] + R
    s00 = covs[..., 3, 3] + r0
    s01 = covs[..., 3, 4]
    s11 = covs[..., 4, 4] + r1
    det = s00 * s11 - s01 * s01
    if np.any(det <= 0.0):
        raise np.linalg.LinAlgError("innovation covariance is not invertible")
    i00 = s11 / det
    i01 = -s01 / det
    i11 = s00 / det

    y0 = obs[..., 0] - means[..., 3]
    y1 = obs[..., 1] - means[..., 4]

    PHt = covs[..., :, 3:]                      # (..., 5, 2)
    K0 = PHt[..., 0] * i00[..., None] + PHt[..., 1] * i01[..., None]
    K1 = PHt[..., 0] * i01[..., None] + PHt[..., 1] * i11[..., None]

    new_means = means + K0 * y0[..., None] + K1 * y1[..., None]
    new_means[..., 2] = wrap_angle(new_means[..., 2])

    # Joseph form: (I - K H) P (I - K H)^T + K R K^T
    A = np.zeros(covs.shape)
    A[..., 0, 0] = 1.0
    A[..., 1, 1] = 1.0
    A[..., 2, 2] = 1.0
    A[..., 3, 3] = 1.0
    A[..., 4, 4] = 1.0
    A[..., :, 3] -= K0
    A[..., :, 4] -= K1
    new_covs = A @ covs @ np.swapaxes(A, -1, -2)
    new_covs[..., :, :] += (K0[..., :, None] * K0[..., None, :]) * r0[..., None, None]
    new_covs[..., :, :] += (K1[..., :, None] * K1[..., None, :]) * r1[..., None, None]
    new_covs = 0.5 * (new_covs + np.swapaxes(new_covs, -1, -2))

    quad = y0 * y0 * i00 + 2.0 * y0 * y1 * i01 + y1 * y1 * i11
    loglik = -np.log(2.0 * np.pi) - 0.5 * np.log(det) - 0.5 * quad
    return new_means, new_covs, loglik


def step_batch(means, covs, actions, obs, thetas):
    """Batched belief_step on stacked beliefs (no validation, no diagnostics)."""
    pm, pc = _predict_arrays(means, covs, actions, thetas)
    nm, nc, _ = _update_arrays(pm, pc, obs, thetas)
    return nm, nc


def encode_batch(means, covs):
    """Batched encode: (..., 5) means + (..., 5, 5) covs -> (..., 20)."""
    return np.concatenate([means, covs[..., _TRIU_R, _TRIU_C]], axis=-1)
