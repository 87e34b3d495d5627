"""Gradient and Fisher-information estimators that reuse a window of past batches.

Every estimator walks the window oldest-to-newest and each batch in stored
sample order, so results are bit-deterministic for a fixed window.
"""
from __future__ import annotations

import io
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .envs import Samples

MAX_LOG_RATIO = 700.0


class RatioOverflowError(ArithmeticError):
    pass


class FactorizationError(ArithmeticError):
    pass


@dataclass
class Batch:
    samples: Samples
    theta_behavior: np.ndarray
    iteration: int
    fim_samples: Optional[Samples] = None

    def __post_init__(self):
        self.theta_behavior = np.array(self.theta_behavior, dtype=float, copy=True)

    @property
    def fisher_samples(self) -> Samples:
        return self.samples if self.fim_samples is None else self.fim_samples


class ReplayWindow:
    """FIFO of the most recent ``capacity`` batches."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = int(capacity)
        self._batches: deque[Batch] = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._batches)

    def __iter__(self):
        return iter(self._batches)

    @property
    def batches(self) -> list[Batch]:
        return list(self._batches)

    def append(self, batch: Batch) -> None:
        if self._batches and batch.iteration <= self._batches[-1].iteration:
            raise ValueError(
                f"iterations must increase: got {batch.iteration} after {self._batches[-1].iteration}")
        self._batches.append(batch)

    def recent(self, k: int) -> list[Batch]:
        if not self._batches:
            raise ValueError("replay window is empty")
        if k < 1:
            raise ValueError("reuse size must be >= 1")
        if k > self.capacity:
            raise ValueError(f"reuse size {k} exceeds window capacity {self.capacity}")
        return list(self._batches)[-k:]

    # checkpoint format: one JSON header line, then packed little-endian float64 arrays
    def dump(self, fp) -> None:
        arrays, meta = [], []
        for b in self._batches:
            entry = {"iteration": b.iteration, "theta": b.theta_behavior.tolist(), "sets": []}
            for s in (b.samples, b.fim_samples):
                if s is None:
                    entry["sets"].append(None)
                    continue
                entry["sets"].append({"n": len(s), "state_dim": int(s.states.reshape(len(s), -1).shape[1]),
                                      "n_units": s.n_units, "mode": s.mode,
                                      "n_episodes": len(s.episode_returns)})
                arrays += [s.states.reshape(len(s), -1), s.actions.astype(float), s.behavior_logp,
                           s.advantages, s.discount_weights, s.rewards, s.episode_returns]
            meta.append(entry)
        header = {"format": "rnpg-window", "version": 1, "capacity": self.capacity, "batches": meta}
        fp.write((json.dumps(header) + "\n").encode())
        for a in arrays:
            fp.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, fp) -> "ReplayWindow":
        header = json.loads(fp.readline().decode())
        if header.get("format") != "rnpg-window":
            raise ValueError("not a replay-window checkpoint")
        buf = io.BytesIO(fp.read())

        def read(count):
            return np.frombuffer(buf.read(8 * count), dtype="<f8").astype(float)

        window = cls(header["capacity"])
        for entry in header["batches"]:
            sets = []
            for m in entry["sets"]:
                if m is None:
                    sets.append(None)
                    continue
                n, sd = m["n"], m["state_dim"]
                states = read(n * sd).reshape(n, sd)
                actions = read(n)
                fields = [read(n) for _ in range(4)]
                ep = read(m["n_episodes"])
                sets.append(Samples(states=states, actions=actions, behavior_logp=fields[0],
                                    advantages=fields[1], discount_weights=fields[2], rewards=fields[3],
                                    n_units=m["n_units"], mode=m["mode"], episode_returns=ep))
            window.append(Batch(samples=sets[0], theta_behavior=np.array(entry["theta"]),
                                iteration=entry["iteration"], fim_samples=sets[1]))
        return window


def advantage_reward_to_go(episode_rewards: Sequence[Sequence[float]], gamma: float):
    """Discounted reward-to-go minus its batch mean.

    Returns ``(advantages, rewards_to_go)`` concatenated over episodes in order.
    """
    if len(episode_rewards) == 0 or sum(len(r) for r in episode_rewards) == 0:
        raise ValueError("cannot estimate advantages of an empty batch")
    rtg = []
    for rewards in episode_rewards:
        acc = 0.0
        out = np.empty(len(rewards))
        for t in range(len(rewards) - 1, -1, -1):
            acc = rewards[t] + gamma * acc
            out[t] = acc
        rtg.append(out)
    rtg = np.concatenate(rtg)
    return rtg - rtg.mean(), rtg


def lqc_advantage(theta, state, action):
    """Exact LQC advantage ``1 + theta^2 - (s + a)^2``."""
    th = float(np.asarray(theta, dtype=float).reshape(-1)[0])
    x = np.asarray(state, dtype=float) + np.asarray(action, dtype=float)
    return 1.0 + th * th - x * x


def _log_ratios(policy, theta_now, samples: Samples) -> np.ndarray:
    return policy.logp_batch(theta_now, samples.states, samples.actions) - samples.behavior_logp


def _ratios(policy, theta_now, samples: Samples, omega_max=None) -> np.ndarray:
    log_r = _log_ratios(policy, theta_now, samples)
    worst = float(np.max(log_r))
    if worst > MAX_LOG_RATIO:
        i = int(np.argmax(log_r))
        raise RatioOverflowError(
            f"log likelihood ratio {worst:.1f} exceeds {MAX_LOG_RATIO} at sample {i} "
            f"(behavior logp {samples.behavior_logp[i]:.3g}); the policy moved too far from the "
            "one that generated this batch")
    omega = np.exp(log_r)
    if omega_max is not None:
        omega = np.minimum(omega, omega_max)
    return omega


def likelihood_ratio_hat(policy, theta_now, sample, omega_max=None) -> float:
    """Per-pair policy ratio ``pi_now(a|s) / pi_behavior(a|s)`` for one :class:`Sample`."""
    log_r = policy.logp(theta_now, sample.state, sample.action) - sample.behavior_logp
    if log_r > MAX_LOG_RATIO:
        raise RatioOverflowError(f"log likelihood ratio {log_r:.1f} exceeds {MAX_LOG_RATIO}")
    omega = float(np.exp(log_r))
    return min(omega, omega_max) if omega_max is not None else omega


def _advantages(samples, theta_now, advantage_fn):
    if advantage_fn is None:
        return samples.advantages
    return np.asarray(advantage_fn(theta_now, samples.states, samples.actions), dtype=float)


def _batch_grad(policy, theta_now, samples, advantage_fn, omega=None):
    scores = policy.score_batch(theta_now, samples.states, samples.actions)
    adv = _advantages(samples, theta_now, advantage_fn)
    w = samples.discount_weights if omega is None else omega * samples.discount_weights
    return ((w * adv) @ scores) / samples.n_units


def _batch_fim(policy, theta_now, samples, omega=None):
    scores = policy.score_batch(theta_now, samples.states, samples.actions)
    w = samples.discount_weights if omega is None else omega * samples.discount_weights
    return ((scores * w[:, None]).T @ scores) / samples.discount_weights.sum()


def _grad_scale(samples: Samples, gamma: float) -> float:
    # single-path weighting by gamma^t already carries the occupancy normalization
    return 1.0 / (1.0 - gamma) if samples.mode == "iid" else 1.0


@dataclass
class RatioStats:
    min: float = 1.0
    max: float = 1.0
    mean: float = 1.0

    @classmethod
    def of(cls, omegas: Sequence[np.ndarray]) -> "RatioStats":
        allw = np.concatenate(omegas)
        return cls(float(allw.min()), float(allw.max()), float(allw.mean()))


def grad_estimate_vanilla(batch: Batch, policy, theta_now, gamma: float,
                          advantage_fn: Optional[Callable] = None) -> np.ndarray:
    """Current-batch policy gradient estimate (no reweighting)."""
    g = _batch_grad(policy, theta_now, batch.samples, advantage_fn)
    return g * _grad_scale(batch.samples, gamma)


def grad_estimate_reuse(window: ReplayWindow, policy, theta_now, K_grad: int, gamma: float,
                        advantage_fn: Optional[Callable] = None, omega_max=None,
                        return_ratios: bool = False):
    """Importance-weighted gradient averaged over the ``K_grad`` newest batches.

    During warm-up (fewer than ``K_grad`` batches stored) all available batches
    are averaged.
    """
    batches = window.recent(min(K_grad, len(window)))
    acc = 0.0
    omegas = []
    for b in batches:
        omega = _ratios(policy, theta_now, b.samples, omega_max)
        omegas.append(omega)
        acc = acc + _batch_grad(policy, theta_now, b.samples, advantage_fn, omega)
    g = (acc / len(batches)) * _grad_scale(batches[-1].samples, gamma)
    if return_ratios:
        return g, RatioStats.of(omegas)
    return g


def fim_estimate_vanilla(batch: Batch, policy, theta_now, epsilon: float) -> np.ndarray:
    f = _batch_fim(policy, theta_now, batch.fisher_samples)
    f = f + epsilon * np.eye(len(f))
    return 0.5 * (f + f.T)


def fim_estimate_reuse(window: ReplayWindow, policy, theta_now, K_fim: int, epsilon: float,
                       omega_max=None) -> np.ndarray:
    """``epsilon * I`` plus the importance-weighted mean score outer product."""
    batches = window.recent(min(K_fim, len(window)))
    acc = 0.0
    for b in batches:
        fs = b.fisher_samples
        omega = _ratios(policy, theta_now, fs, omega_max)
        acc = acc + _batch_fim(policy, theta_now, fs, omega)
    f = acc / len(batches)
    f = f + epsilon * np.eye(len(f))
    return 0.5 * (f + f.T)


def natural_direction(grad_hat, fim_hat):
    """Solve ``fim_hat @ x = grad_hat`` by Cholesky; returns ``(x, residual_norm)``."""
    g = np.asarray(grad_hat, dtype=float)
    f = np.atleast_2d(np.asarray(fim_hat, dtype=float))
    try:
        factor = linalg.cho_factor(f, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise FactorizationError(f"Fisher estimate is not positive definite: {exc}") from exc
    x = linalg.cho_solve(factor, g)
    return x, float(np.linalg.norm(f @ x - g))


def surrogate_objective(window: ReplayWindow, policy, theta_ref, K: int, gamma: float,
                        advantage_fn: Optional[Callable] = None, omega_max=None):
    """Importance-weighted advantage surrogate over the window, as a function of theta.

    Advantages are taken at ``theta_ref`` when a closed form exists, else as stored.
    """
    batches = window.recent(min(K, len(window)))
    advs = [_advantages(b.samples, theta_ref, advantage_fn) for b in batches]

    def evaluate(theta):
        acc = 0.0
        for b, adv in zip(batches, advs):
            s = b.samples
            omega = _ratios(policy, theta, s, omega_max)
            acc += float((omega * s.discount_weights) @ adv) / s.n_units
        return acc / len(batches) * _grad_scale(batches[-1].samples, gamma)

    return evaluate


@dataclass
class NaturalGradReport:
    grad_hat: np.ndarray
    fim_hat: np.ndarray
    nat_dir: np.ndarray
    ratio_stats: RatioStats = field(default_factory=RatioStats)
    solver_residual: float = 0.0


def natural_grad_report(window, policy, theta_now, K_grad, K_fim, epsilon, gamma,
                        advantage_fn=None, omega_max=None) -> NaturalGradReport:
    g, stats = grad_estimate_reuse(window, policy, theta_now, K_grad, gamma, advantage_fn,
                                   omega_max, return_ratios=True)
    f = fim_estimate_reuse(window, policy, theta_now, K_fim, epsilon, omega_max)
    x, res = natural_direction(g, f)
    return NaturalGradReport(grad_hat=g, fim_hat=f, nat_dir=x, ratio_stats=stats, solver_residual=res)
