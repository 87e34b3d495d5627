"""Batched LQC trainer: many macro-replications advanced in lockstep.

Per iteration every rep draws ``B`` occupancy samples for the gradient and an
independent ``B`` for the Fisher estimate. On this problem all estimator
inputs depend on a pair only through ``x = s + a ~ N(theta, 1)``, so the
engine samples ``x`` directly and stores it in a ring buffer of the last
``K`` batches together with the parameter that generated it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import ProjectionBox, StepSchedule
from .rng import rep_generator

NOISE_CHUNK = 512


@dataclass
class LQCTrace:
    theta: np.ndarray          # (reps,) final iterates
    alpha_final: float
    iterations: np.ndarray     # recorded iteration numbers
    theta_path: np.ndarray     # (reps, len(iterations))
    grad_path: np.ndarray      # (reps, len(iterations)) gradient estimates
    ratio_max_path: np.ndarray
    reward_path: np.ndarray    # (reps, len(iterations)) batch estimate of the discounted return


class _NoiseFeed:
    """Per-rep standard normals, drawn from each rep's own stream in fixed-size chunks."""

    def __init__(self, rngs, width, chunk=NOISE_CHUNK):
        self.rngs, self.width, self.chunk = rngs, width, chunk
        self.buf = None
        self.pos = chunk

    def next(self):
        if self.pos == self.chunk:
            self.buf = np.stack([r.standard_normal((self.chunk, self.width)) for r in self.rngs], axis=1)
            self.pos = 0
        row = self.buf[self.pos]
        self.pos += 1
        return row


class _FixedNoise:
    def __init__(self, noise):
        self.noise = np.asarray(noise, dtype=float)
        self.pos = 0

    def next(self):
        row = self.noise[:, self.pos, :]
        self.pos += 1
        return row


def simulate_lqc(seeds, B: int, K_grad: int, gamma: float, epsilon: float,
                 schedule: StepSchedule, n_iter: int, theta0: float = 2.0,
                 box: ProjectionBox = ProjectionBox(), omega_max=None,
                 record_every: int = 0, noise=None) -> LQCTrace:
    """Run RNPG (``K_grad = 1`` gives VNPG) on the LQC problem for every seed.

    ``noise`` may supply the standard normals explicitly with shape
    ``(reps, n_iter, 2 * B)``; otherwise each seed's generator is used.
    """
    if noise is not None:
        feed = _FixedNoise(noise)
        reps = feed.noise.shape[0]
    else:
        rngs = [rep_generator(s, 0) for s in seeds]
        feed = _NoiseFeed(rngs, 2 * B)
        reps = len(rngs)
    K = int(K_grad)
    scale = 1.0 / (1.0 - gamma)
    theta = np.full(reps, float(theta0))
    xbuf = np.zeros((reps, K, B))
    tbuf = np.zeros((reps, K))
    rec_it, rec_th, rec_g, rec_r, rec_w = [], [], [], [], []
    for n in range(1, n_iter + 1):
        z = feed.next()
        slot = (n - 1) % K
        xbuf[:, slot, :] = theta[:, None] + z[:, :B]
        tbuf[:, slot] = theta
        k = min(n, K)
        xs = xbuf[:, :k, :]
        d_now = xs - theta[:, None, None]
        d_old = xs - tbuf[:, :k, None]
        omega = np.exp(0.5 * (d_old * d_old - d_now * d_now))
        if omega_max is not None:
            omega = np.minimum(omega, omega_max)
        g_terms = (1.0 + theta * theta)[:, None, None] - xs * xs
        grad = (omega * g_terms * d_now).sum(axis=(1, 2)) / (k * B) * scale
        xf = theta[:, None] + z[:, B:]
        df = xf - theta[:, None]
        fim = epsilon + (df * df).mean(axis=1)
        theta = box.project(theta + schedule(n) * (grad / fim))
        if record_every and (n % record_every == 0 or n == n_iter):
            rec_it.append(n)
            rec_th.append(theta.copy())
            rec_g.append(grad)
            rec_r.append(omega.max(axis=(1, 2)))
            x_new = xbuf[:, slot, :]
            rec_w.append(-(x_new * x_new).mean(axis=1) * scale)
    empty = np.zeros((reps, 0))
    return LQCTrace(
        theta=theta,
        alpha_final=schedule(n_iter),
        iterations=np.array(rec_it, dtype=int),
        theta_path=np.stack(rec_th, axis=1) if rec_th else empty,
        grad_path=np.stack(rec_g, axis=1) if rec_g else empty,
        ratio_max_path=np.stack(rec_r, axis=1) if rec_r else empty,
        reward_path=np.stack(rec_w, axis=1) if rec_w else empty,
    )
