"""Discounted MDP environments: classic cartpole and scalar linear quadratic control.

Both environments are pure functions of ``(state, action)``; all randomness
(initial state draws) comes from a caller-owned ``numpy.random.Generator``.
Sign convention: rewards are maximized, so the LQC cost enters negated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_kind: str  # "discrete" or "continuous"
    gamma: float
    episode_cap: int
    n_actions: Optional[int] = None
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self):
        # gamma = 0 is admitted so the degenerate one-step occupancy is expressible
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.episode_cap < 1:
            raise ValueError("episode_cap must be >= 1")
        if self.action_kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action_kind {self.action_kind!r}")
        if self.action_kind == "discrete" and not self.n_actions:
            raise ValueError("discrete action space needs n_actions")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: object
    reward: float
    next_state: np.ndarray
    terminal: bool
    timestep: int


@dataclass(frozen=True)
class Sample:
    """One state-action pair plus what the estimators need to reweight it."""

    state: np.ndarray
    action: object
    behavior_logp: float
    advantage: float
    discount_weight: float
    reward: float = 0.0


@dataclass
class Samples:
    """Struct-of-arrays store for a batch of :class:`Sample` records.

    ``n_units`` is the estimator normalizer: the number of i.i.d. draws in
    occupancy mode, or the number of episodes in single-path mode.
    """

    states: np.ndarray
    actions: np.ndarray
    behavior_logp: np.ndarray
    advantages: np.ndarray
    discount_weights: np.ndarray
    rewards: np.ndarray
    n_units: int
    mode: str = "iid"
    episode_returns: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        n = len(self.actions)
        for name in ("states", "behavior_logp", "advantages", "discount_weights", "rewards"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if n == 0:
            raise ValueError("empty sample set")

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(
                state=self.states[i],
                action=self.actions[i],
                behavior_logp=float(self.behavior_logp[i]),
                advantage=float(self.advantages[i]),
                discount_weight=float(self.discount_weights[i]),
                reward=float(self.rewards[i]),
            )

    def take(self, order: np.ndarray) -> "Samples":
        """Return a reordered copy (episode bookkeeping is left untouched)."""
        return Samples(
            states=self.states[order],
            actions=self.actions[order],
            behavior_logp=self.behavior_logp[order],
            advantages=self.advantages[order],
            discount_weights=self.discount_weights[order],
            rewards=self.rewards[order],
            n_units=self.n_units,
            mode=self.mode,
            episode_returns=self.episode_returns,
        )


class Env:
    """Minimal environment interface shared by the samplers."""

    spec: EnvSpec

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def reset_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.stack([self.reset(rng) for _ in range(n)])

    def step(self, state, action, timestep: int = 0) -> Transition:
        raise NotImplementedError

    def step_batch(self, states, actions, timesteps):
        """Vectorized step: returns ``(next_states, rewards, terminals)``."""
        out = [self.step(s, a, int(t)) for s, a, t in zip(states, actions, timesteps)]
        return (
            np.stack([tr.next_state for tr in out]),
            np.array([tr.reward for tr in out], dtype=float),
            np.array([tr.terminal for tr in out], dtype=bool),
        )

    def advantage(self, theta, states, actions):
        """Closed-form advantage, or ``None`` when none is known."""
        return None


# Barto-Sutton-Anderson constants
GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
HALF_LENGTH = 0.5
FORCE_MAG = 10.0
TAU = 0.02
X_THRESHOLD = 2.4
THETA_THRESHOLD = 12 * 2 * math.pi / 360
CARTPOLE_CAP = 200


def _cartpole_dynamics(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    x, x_dot, phi, phi_dot = states.T
    total_mass = CART_MASS + POLE_MASS
    polemass_length = POLE_MASS * HALF_LENGTH
    force = np.where(actions == 1, FORCE_MAG, -FORCE_MAG)
    cos_phi = np.cos(phi)
    sin_phi = np.sin(phi)
    temp = (force + polemass_length * phi_dot**2 * sin_phi) / total_mass
    phi_acc = (GRAVITY * sin_phi - cos_phi * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_phi**2 / total_mass)
    )
    x_acc = temp - polemass_length * phi_acc * cos_phi / total_mass
    return np.stack(
        [x + TAU * x_dot, x_dot + TAU * x_acc, phi + TAU * phi_dot, phi_dot + TAU * phi_acc],
        axis=1,
    )


class CartPole(Env):
    """Cart-pole balancing with explicit Euler integration, actions {0: left, 1: right}."""

    def __init__(self, gamma: float = 0.99, episode_cap: int = CARTPOLE_CAP):
        self.spec = EnvSpec(state_dim=4, action_kind="discrete", n_actions=2,
                            gamma=gamma, episode_cap=episode_cap)

    def reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def reset_batch(self, rng, n):
        return rng.uniform(-0.05, 0.05, size=(n, 4))

    def step_batch(self, states, actions, timesteps):
        states = np.asarray(states, dtype=float)
        if not np.all(np.isfinite(states)):
            raise ValueError("cartpole state must be finite")
        actions = np.asarray(actions)
        if np.any((actions != 0) & (actions != 1)):
            raise ValueError("cartpole actions must be 0 (left) or 1 (right)")
        nxt = _cartpole_dynamics(states, actions)
        failed = (np.abs(nxt[:, 0]) > X_THRESHOLD) | (np.abs(nxt[:, 2]) > THETA_THRESHOLD)
        capped = np.asarray(timesteps) + 1 >= self.spec.episode_cap
        return nxt, np.ones(len(states)), failed | capped

    def step(self, state, action, timestep=0):
        if timestep >= self.spec.episode_cap:
            raise ValueError(f"timestep {timestep} beyond episode cap {self.spec.episode_cap}")
        state = np.asarray(state, dtype=float)
        nxt, rew, term = self.step_batch(state[None, :], np.array([int(action)]), np.array([timestep]))
        return Transition(state=state, action=int(action), reward=float(rew[0]),
                          next_state=nxt[0], terminal=bool(term[0]), timestep=timestep)


def cartpole_step(state, action, timestep: int = 0) -> Transition:
    return CartPole().step(state, action, timestep)


class LQC(Env):
    """Scalar LQC in its RL encoding: deterministic ``s' = s + a``, reward ``-(s + a)^2``.

    The control noise lives inside the Gaussian policy, so transitions are
    deterministic and episodes never terminate (the samplers truncate).
    """

    def __init__(self, gamma: float = 0.5, episode_cap: int = 100):
        self.spec = EnvSpec(state_dim=1, action_kind="continuous", gamma=gamma,
                            episode_cap=episode_cap)

    def reset(self, rng):
        return np.array([rng.standard_normal()])

    def reset_batch(self, rng, n):
        return rng.standard_normal((n, 1))

    def step_batch(self, states, actions, timesteps):
        s = np.asarray(states, dtype=float).reshape(-1)
        a = np.asarray(actions, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise ValueError("LQC state and action must be finite")
        nxt = s + a
        return nxt[:, None], -(nxt**2), np.zeros(len(s), dtype=bool)

    def step(self, state, action, timestep=0):
        state = np.atleast_1d(np.asarray(state, dtype=float))
        nxt, rew, _ = self.step_batch(state[None, :], np.array([float(action)]), np.array([timestep]))
        return Transition(state=state, action=float(action), reward=float(rew[0]),
                          next_state=nxt[0], terminal=False, timestep=timestep)

    def advantage(self, theta, states, actions):
        from .estimators import lqc_advantage

        return lqc_advantage(theta, np.asarray(states).reshape(-1), np.asarray(actions).reshape(-1))


def lqc_step(state, action) -> Transition:
    return LQC().step(state, action)


def make_env(name: str, gamma: Optional[float] = None) -> Env:
    if name == "cartpole":
        return CartPole(gamma=0.99 if gamma is None else gamma)
    if name == "lqc":
        return LQC(gamma=0.5 if gamma is None else gamma)
    raise ValueError(f"unknown environment {name!r}")
