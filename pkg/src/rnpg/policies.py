"""Stochastic policies with exact log-densities and score functions.

Parameter layout of :class:`SoftmaxMLPPolicy` (layer-major, row-major)::

    W1 (hidden, obs_dim) | b1 (hidden,) | W2 (n_actions, hidden) | b2 (n_actions,)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PolicyParams:
    """Flat parameter vector plus the descriptor needed to rebuild the policy."""

    theta: np.ndarray
    kind: str
    dims: dict

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("policy parameters must be finite")

    def to_bytes(self) -> bytes:
        return self.theta.astype("<f8").tobytes()

    def descriptor(self) -> str:
        return json.dumps({"kind": self.kind, "dims": self.dims, "size": int(self.theta.size),
                           "dtype": "<f8"}, sort_keys=True)

    @classmethod
    def from_bytes(cls, payload: bytes, descriptor: str) -> "PolicyParams":
        meta = json.loads(descriptor)
        theta = np.frombuffer(payload, dtype=meta.get("dtype", "<f8")).astype(float)
        if theta.size != meta["size"]:
            raise ValueError(f"expected {meta['size']} parameters, got {theta.size}")
        return cls(theta=theta, kind=meta["kind"], dims=meta["dims"])

    def build_policy(self) -> "Policy":
        return make_policy(self.kind, **self.dims)


class Policy:
    kind: str
    dim: int

    def descriptor_dims(self) -> dict:
        return {}

    def params(self, theta) -> PolicyParams:
        return PolicyParams(theta=np.array(theta, dtype=float), kind=self.kind,
                            dims=self.descriptor_dims())

    # single-sample entry points route through the batched code (BLAS may still differ in the last ulp)
    def logp(self, theta, state, action) -> float:
        return float(self.logp_batch(theta, np.asarray(state, dtype=float)[None, ...],
                                     np.asarray([action]))[0])

    def score(self, theta, state, action) -> np.ndarray:
        return self.score_batch(theta, np.asarray(state, dtype=float)[None, ...],
                                np.asarray([action]))[0]

    def sample_action(self, theta, state, rng):
        return self.sample_actions(theta, np.asarray(state, dtype=float)[None, ...], rng)[0]

    def logp_batch(self, theta, states, actions) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, theta, states, actions) -> np.ndarray:
        raise NotImplementedError

    def sample_actions(self, theta, states, rng) -> np.ndarray:
        raise NotImplementedError


class GaussianShiftPolicy(Policy):
    """``a | s ~ N(theta - s, 1)``, so ``s + a ~ N(theta, 1)``.

    The score is ``a + s - theta``; this sign makes the score-function
    gradient estimator agree with the derivative of the LQC objective.
    """

    kind = "gaussian_shift"
    dim = 1

    def init_params(self, rng=None, theta0: float = 0.0) -> np.ndarray:
        return np.array([float(theta0)])

    @staticmethod
    def _resid(theta, states, actions):
        s = np.asarray(states, dtype=float).reshape(-1)
        a = np.asarray(actions, dtype=float).reshape(-1)
        return a + s - np.asarray(theta, dtype=float).reshape(-1)[0]

    def logp_batch(self, theta, states, actions):
        r = self._resid(theta, states, actions)
        return -0.5 * r * r - LOG_SQRT_2PI

    def score_batch(self, theta, states, actions):
        return self._resid(theta, states, actions)[:, None]

    def sample_actions(self, theta, states, rng):
        s = np.asarray(states, dtype=float).reshape(-1)
        return (float(np.asarray(theta).reshape(-1)[0]) - s) + rng.standard_normal(len(s))


class SoftmaxMLPPolicy(Policy):
    """One hidden ReLU layer followed by a softmax over discrete actions."""

    kind = "softmax_mlp"

    def __init__(self, obs_dim: int = 4, hidden: int = 32, n_actions: int = 2):
        self.obs_dim = obs_dim
        self.hidden = hidden
        self.n_actions = n_actions
        self._shapes = [(hidden, obs_dim), (hidden,), (n_actions, hidden), (n_actions,)]
        self._sizes = [int(np.prod(s)) for s in self._shapes]
        self.dim = sum(self._sizes)

    def descriptor_dims(self):
        return {"obs_dim": self.obs_dim, "hidden": self.hidden, "n_actions": self.n_actions}

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}, got {theta.shape}")
        out, i = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            out.append(theta[i:i + size].reshape(shape))
            i += size
        return out

    def init_params(self, rng, theta0=None) -> np.ndarray:
        """He-uniform weights, zero biases."""
        lim1 = math.sqrt(6.0 / self.obs_dim)
        lim2 = math.sqrt(6.0 / self.hidden)
        w1 = rng.uniform(-lim1, lim1, size=self._shapes[0])
        w2 = rng.uniform(-lim2, lim2, size=self._shapes[2])
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), w2.ravel(), np.zeros(self.n_actions)])

    def _forward(self, theta, states):
        w1, b1, w2, b2 = self.unpack(theta)
        x = np.asarray(states, dtype=float).reshape(-1, self.obs_dim)
        pre = x @ w1.T + b1
        h = np.maximum(pre, 0.0)
        logits = h @ w2.T + b2
        z = logits - logits.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return x, pre, h, log_probs

    def log_probs(self, theta, states) -> np.ndarray:
        return self._forward(theta, states)[3]

    def probs(self, theta, states) -> np.ndarray:
        return np.exp(self.log_probs(theta, states))

    def logp_batch(self, theta, states, actions):
        lp = self.log_probs(theta, states)
        a = np.asarray(actions, dtype=int).reshape(-1)
        return lp[np.arange(len(a)), a]

    def score_batch(self, theta, states, actions):
        w1, _, w2, _ = self.unpack(theta)
        x, pre, h, log_probs = self._forward(theta, states)
        a = np.asarray(actions, dtype=int).reshape(-1)
        n = len(a)
        delta = -np.exp(log_probs)
        delta[np.arange(n), a] += 1.0
        # ReLU subgradient at 0 is 0
        dpre = (delta @ w2) * (pre > 0.0)
        g_w1 = dpre[:, :, None] * x[:, None, :]
        g_w2 = delta[:, :, None] * h[:, None, :]
        return np.concatenate([g_w1.reshape(n, -1), dpre, g_w2.reshape(n, -1), delta], axis=1)

    def sample_actions(self, theta, states, rng):
        p = self.probs(theta, states)
        u = rng.random(len(p))
        cdf = np.cumsum(p, axis=1)
        return np.minimum((u[:, None] >= cdf).sum(axis=1), self.n_actions - 1)

    def greedy_actions(self, theta, states):
        return np.argmax(self.log_probs(theta, states), axis=1)


def make_policy(kind: str, **dims) -> Policy:
    if kind == "gaussian_shift":
        return GaussianShiftPolicy()
    if kind == "softmax_mlp":
        return SoftmaxMLPPolicy(**dims)
    raise ValueError(f"unknown policy kind {kind!r}")


def policy_for_env(env) -> Policy:
    if env.spec.action_kind == "discrete":
        return SoftmaxMLPPolicy(obs_dim=env.spec.state_dim, hidden=32, n_actions=env.spec.n_actions)
    return GaussianShiftPolicy()
