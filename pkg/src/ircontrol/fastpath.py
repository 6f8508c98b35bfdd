"""Compiled inner loop for likelihood evaluation.

The Monte-Carlo objective replays the belief filter over every (probe
theta, noise sample, episode) tuple; on one core that is millions of small
5x5 filter steps per gradient. This module carries the filter arithmetic in
closed component form inside a numba kernel and hands the policy network a
single flat matrix per time step. The arithmetic is pinned against the
reference implementations in `belief` and `inverse.impute_episode` by tests;
this file must never be the only place a formula lives.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .env import DT

# covariance component order = row-major upper triangle of the 5x5 matrix:
# 00 01 02 03 04 11 12 13 14 22 23 24 33 34 44
C00, C01, C02, C03, C04, C11, C12, C13, C14, C22, C23, C24, C33, C34, C44 = range(15)

LOG2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _wrap(a):
    w = math.atan2(math.sin(a), math.cos(a))
    if w == -math.pi:
        w = math.pi
    return w


@njit(cache=True)
def init_beliefs(mean, cov, o0, K, L, E):
    """Fill (N,5) means and (N,15) covariances from the initial sightings."""
    init_var = 1e-6
    for k in range(K):
        for l in range(L):
            base = (k * L + l) * E
            for e in range(E):
                n = base + e
                mean[n, 0] = o0[e, 0]
                mean[n, 1] = o0[e, 1]
                mean[n, 2] = _wrap(o0[e, 2])
                mean[n, 3] = 0.0
                mean[n, 4] = 0.0
                for c in range(15):
                    cov[n, c] = 0.0
                cov[n, C00] = init_var
                cov[n, C11] = init_var
                cov[n, C22] = init_var
                cov[n, C33] = init_var
                cov[n, C44] = init_var


@njit(cache=True)
def step_and_encode(mean, cov, thetas, a_prev, vel, eps_t, x_out,
                    obs_terms, K, L, E, Ea):
    """One filter step for every active (k, l, e) tuple.

    Predicts through the linearized step map, imputes the observation from
    the recorded velocity and the noise bank, runs the Joseph-form Kalman
    update, writes [mean, triu(cov)] into x_out rows (packed (k,l,e) order,
    active episodes only), and accumulates the observation log-density per k.
    """
    for k in range(K):
        gv = thetas[k, 0]
        gw = thetas[k, 1]
        qv = thetas[k, 2] * thetas[k, 2]
        qw = thetas[k, 3] * thetas[k, 3]
        sov = thetas[k, 4]
        sow = thetas[k, 5]
        r0 = sov * sov
        r1 = sow * sow
        obs_const = -LOG2PI - math.log(sov * sow)
        acc = 0.0
        for l in range(L):
            base = (k * L + l) * E
            mrow = (k * L + l) * Ea
            for e in range(Ea):
                n = base + e
                # --- predict ---
                h = mean[n, 2]
                c = math.cos(h)
                s = math.sin(h)
                v = gv * a_prev[e, 0]
                w = gw * a_prev[e, 1]
                j0 = -DT * v * s
                j1 = DT * v * c

                p00 = cov[n, C00]
                p01 = cov[n, C01]
                p02 = cov[n, C02]
                p11 = cov[n, C11]
                p12 = cov[n, C12]
                p22 = cov[n, C22]

                n00 = p00 + 2.0 * j0 * p02 + j0 * j0 * p22 + DT * DT * c * c * qv
                n01 = p01 + j1 * p02 + j0 * p12 + j0 * j1 * p22 + DT * DT * c * s * qv
                n02 = p02 + j0 * p22
                n11 = p11 + 2.0 * j1 * p12 + j1 * j1 * p22 + DT * DT * s * s * qv
                n12 = p12 + j1 * p22
                n22 = p22 + DT * DT * qw
                n03 = DT * c * qv
                n13 = DT * s * qv
                n33 = qv
                n24 = DT * qw
                n44 = qw
                n04 = 0.0
                n14 = 0.0
                n23 = 0.0
                n34 = 0.0

                m0 = mean[n, 0] + DT * v * c
                m1 = mean[n, 1] + DT * v * s
                m2 = _wrap(h + DT * w)
                m3 = v
                m4 = w

                # --- impute observation and score it ---
                ov = vel[e, 0] + sov * eps_t[l, e, 0]
                ow = vel[e, 1] + sow * eps_t[l, e, 1]
                dv = (ov - vel[e, 0]) / sov
                dw = (ow - vel[e, 1]) / sow
                acc += obs_const - 0.5 * (dv * dv + dw * dw)

                # --- Kalman update (2x2 innovation in closed form) ---
                s00 = n33 + r0
                s01 = n34
                s11 = n44 + r1
                det = s00 * s11 - s01 * s01
                i00 = s11 / det
                i01 = -s01 / det
                i11 = s00 / det
                y0 = ov - m3
                y1 = ow - m4

                # K gain columns from P H^T: u_a = P[a,3], w_a = P[a,4]
                u0, w0 = n03, n04
                u1, w1 = n13, n14
                u2, w2 = n23, n24
                u3, w3 = n33, n34
                u4, w4 = n34, n44
                K00 = u0 * i00 + w0 * i01
                K01 = u1 * i00 + w1 * i01
                K02 = u2 * i00 + w2 * i01
                K03 = u3 * i00 + w3 * i01
                K04 = u4 * i00 + w4 * i01
                K10 = u0 * i01 + w0 * i11
                K11 = u1 * i01 + w1 * i11
                K12 = u2 * i01 + w2 * i11
                K13 = u3 * i01 + w3 * i11
                K14 = u4 * i01 + w4 * i11

                m0 += K00 * y0 + K10 * y1
                m1 += K01 * y0 + K11 * y1
                m2 = _wrap(m2 + K02 * y0 + K12 * y1)
                m3 += K03 * y0 + K13 * y1
                m4 += K04 * y0 + K14 * y1

                mean[n, 0] = m0
                mean[n, 1] = m1
                mean[n, 2] = m2
                mean[n, 3] = m3
                mean[n, 4] = m4

                # Joseph form componentwise:
                # P'[a,b] = p_ab - K0b*u_a - K1b*w_a - K0a*u_b - K1a*w_b
                #           + K0a*K0b*(p33+r0) + (K0a*K1b+K1a*K0b)*p34
                #           + K1a*K1b*(p44+r1)
                t0 = n33 + r0
                t1 = n34
                t2 = n44 + r1
                cov[n, C00] = (n00 - 2.0 * (K00 * u0 + K10 * w0)
                               + K00 * K00 * t0 + 2.0 * K00 * K10 * t1 + K10 * K10 * t2)
                cov[n, C01] = (n01 - K01 * u0 - K11 * w0 - K00 * u1 - K10 * w1
                               + K00 * K01 * t0 + (K00 * K11 + K10 * K01) * t1
                               + K10 * K11 * t2)
                cov[n, C02] = (n02 - K02 * u0 - K12 * w0 - K00 * u2 - K10 * w2
                               + K00 * K02 * t0 + (K00 * K12 + K10 * K02) * t1
                               + K10 * K12 * t2)
                cov[n, C03] = (n03 - K03 * u0 - K13 * w0 - K00 * u3 - K10 * w3
                               + K00 * K03 * t0 + (K00 * K13 + K10 * K03) * t1
                               + K10 * K13 * t2)
                cov[n, C04] = (n04 - K04 * u0 - K14 * w0 - K00 * u4 - K10 * w4
                               + K00 * K04 * t0 + (K00 * K14 + K10 * K04) * t1
                               + K10 * K14 * t2)
                cov[n, C11] = (n11 - 2.0 * (K01 * u1 + K11 * w1)
                               + K01 * K01 * t0 + 2.0 * K01 * K11 * t1 + K11 * K11 * t2)
                cov[n, C12] = (n12 - K02 * u1 - K12 * w1 - K01 * u2 - K11 * w2
                               + K01 * K02 * t0 + (K01 * K12 + K11 * K02) * t1
                               + K11 * K12 * t2)
                cov[n, C13] = (n13 - K03 * u1 - K13 * w1 - K01 * u3 - K11 * w3
                               + K01 * K03 * t0 + (K01 * K13 + K11 * K03) * t1
                               + K11 * K13 * t2)
                cov[n, C14] = (n14 - K04 * u1 - K14 * w1 - K01 * u4 - K11 * w4
                               + K01 * K04 * t0 + (K01 * K14 + K11 * K04) * t1
                               + K11 * K14 * t2)
                cov[n, C22] = (n22 - 2.0 * (K02 * u2 + K12 * w2)
                               + K02 * K02 * t0 + 2.0 * K02 * K12 * t1 + K12 * K12 * t2)
                cov[n, C23] = (n23 - K03 * u2 - K13 * w2 - K02 * u3 - K12 * w3
                               + K02 * K03 * t0 + (K02 * K13 + K12 * K03) * t1
                               + K12 * K13 * t2)
                cov[n, C24] = (n24 - K04 * u2 - K14 * w2 - K02 * u4 - K12 * w4
                               + K02 * K04 * t0 + (K02 * K14 + K12 * K04) * t1
                               + K12 * K14 * t2)
                cov[n, C33] = (n33 - 2.0 * (K03 * u3 + K13 * w3)
                               + K03 * K03 * t0 + 2.0 * K03 * K13 * t1 + K13 * K13 * t2)
                cov[n, C34] = (n34 - K04 * u3 - K14 * w3 - K03 * u4 - K13 * w4
                               + K03 * K04 * t0 + (K03 * K14 + K13 * K04) * t1
                               + K13 * K14 * t2)
                cov[n, C44] = (n44 - 2.0 * (K04 * u4 + K14 * w4)
                               + K04 * K04 * t0 + 2.0 * K04 * K14 * t1 + K14 * K14 * t2)

                row = mrow + e
                x_out[row, 0] = m0
                x_out[row, 1] = m1
                x_out[row, 2] = m2
                x_out[row, 3] = m3
                x_out[row, 4] = m4
                for ci in range(15):
                    x_out[row, 5 + ci] = cov[n, ci]
        obs_terms[k] += acc


@njit(cache=True)
def action_terms(a_star, a_rec, sigma_a, out, K, L, Ea):
    """Accumulate per-k Gaussian action log-likelihoods of recorded actions."""
    const = -math.log(2.0 * math.pi * sigma_a * sigma_a)
    inv = 1.0 / (2.0 * sigma_a * sigma_a)
    for k in range(K):
        acc = 0.0
        for l in range(L):
            base = (k * L + l) * Ea
            for e in range(Ea):
                m = base + e
                d0 = a_star[m, 0] - a_rec[e, 0]
                d1 = a_star[m, 1] - a_rec[e, 1]
                acc += const - (d0 * d0 + d1 * d1) * inv
        out[k] += acc


class ActorEval:
    """Flat-batch evaluator for a dense net with preallocated buffers and
    pre-transposed weights."""

    def __init__(self, net, max_rows: int, chunk: int = 1024):
        self.Wt = [np.ascontiguousarray(l.W.T) for l in net.layers]
        self.b = [l.b for l in net.layers]
        self.acts = [l.activation for l in net.layers]
        self.chunk = chunk
        self.out = np.empty((max_rows, net.layers[-1].W.shape[0]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        for lo in range(0, n, self.chunk):
            hi = min(lo + self.chunk, n)
            h = x[lo:hi]
            for Wt, b, act in zip(self.Wt, self.b, self.acts):
                h = h @ Wt
                h += b
                if act == "relu":
                    np.maximum(h, 0.0, out=h)
                elif act == "tanh":
                    np.tanh(h, out=h)
            self.out[lo:hi] = h
        return self.out[:n]
