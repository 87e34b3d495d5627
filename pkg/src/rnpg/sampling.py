"""Trajectory samplers producing :class:`~rnpg.envs.Samples`.

``sample_occupancy_iid`` draws exact i.i.d. pairs from the discounted
occupancy measure by stopping a fresh rollout at a geometric time;
``sample_single_path`` keeps every step of full episodes, weighted by gamma^t.
"""
from __future__ import annotations

import numpy as np

from .envs import Env, Samples
from .estimators import advantage_reward_to_go

GEOMETRIC_SAFETY_CAP = 10**6
MAX_REJECTIONS = 10_000


def draw_horizon(gamma: float, rng: np.random.Generator, cap: int = GEOMETRIC_SAFETY_CAP) -> int:
    """``T`` with ``P(T = t) = gamma^t (1 - gamma)`` on ``{0, 1, ...}``."""
    if gamma == 0.0:
        return 0
    t = int(rng.geometric(1.0 - gamma)) - 1
    if t > cap:
        raise RuntimeError(f"geometric horizon {t} exceeds safety cap {cap}; gamma={gamma} is too close to 1")
    return t


def draw_horizons(gamma: float, count: int, rng: np.random.Generator,
                  cap: int = GEOMETRIC_SAFETY_CAP) -> np.ndarray:
    if gamma == 0.0:
        return np.zeros(count, dtype=int)
    t = rng.geometric(1.0 - gamma, size=count) - 1
    if t.max() > cap:
        raise RuntimeError(f"geometric horizon {t.max()} exceeds safety cap {cap}; "
                           f"gamma={gamma} is too close to 1")
    return t


def _roll_to_horizons(env: Env, policy, theta, horizons: np.ndarray, rng):
    """Roll one fresh episode per horizon in lockstep.

    Returns ``(states, reached)``: the state at each horizon and whether the
    episode got there without terminating.
    """
    n = len(horizons)
    states = env.reset_batch(rng, n)
    reached = horizons < env.spec.episode_cap
    for t in range(int(horizons[reached].max()) if reached.any() else 0):
        idx = np.flatnonzero(reached & (horizons > t))
        if len(idx) == 0:
            break
        acts = policy.sample_actions(theta, states[idx], rng)
        nxt, _, term = env.step_batch(states[idx], acts, np.full(len(idx), t))
        states[idx] = nxt
        reached[idx[term]] = False
    return states, reached


def _continuation_returns(env: Env, policy, theta, states, actions, t0, rng):
    """Discounted return from each ``(state, action)`` at time ``t0`` until its episode ends."""
    gamma = env.spec.gamma
    n = len(states)
    total = np.zeros(n)
    disc = np.ones(n)
    s, a, t = states.copy(), np.asarray(actions).copy(), np.asarray(t0).copy()
    active = np.arange(n)
    while len(active):
        nxt, rew, term = env.step_batch(s[active], a[active], t[active])
        total[active] += disc[active] * rew
        term = term | (t[active] + 1 >= env.spec.episode_cap)
        disc[active] *= gamma
        s[active] = nxt
        t[active] += 1
        active = active[~term]
        if len(active):
            a[active] = policy.sample_actions(theta, s[active], rng)
    return total


def sample_occupancy_iid(env: Env, policy, theta, count: int, rng: np.random.Generator) -> Samples:
    """``count`` independent state-action pairs from the discounted occupancy measure.

    Each pair is the last one of a fresh rollout stopped at a geometric time.
    For episodic environments a rollout that terminates before its horizon is
    discarded and redrawn. Advantages use the environment's closed form when
    it has one, else a centred Monte Carlo return of the continued episode.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    gamma = env.spec.gamma
    states = np.empty((count, env.spec.state_dim))
    horizons = np.empty(count, dtype=int)
    pending = np.arange(count)
    for _attempt in range(MAX_REJECTIONS):
        h = draw_horizons(gamma, len(pending), rng)
        s, ok = _roll_to_horizons(env, policy, theta, h, rng)
        states[pending[ok]] = s[ok]
        horizons[pending[ok]] = h[ok]
        pending = pending[~ok]
        if len(pending) == 0:
            break
    else:
        raise RuntimeError("could not reach the drawn horizons; the environment terminates too quickly")
    actions = policy.sample_actions(theta, states, rng)
    _, rewards, _ = env.step_batch(states, actions, horizons)
    adv = env.advantage(theta, states, actions)
    if adv is None:
        returns = _continuation_returns(env, policy, theta, states, actions, horizons, rng)
        adv = returns - returns.mean()
    return Samples(
        states=states,
        actions=actions,
        behavior_logp=policy.logp_batch(theta, states, actions),
        advantages=np.asarray(adv, dtype=float),
        discount_weights=np.ones(count),
        rewards=np.asarray(rewards, dtype=float),
        n_units=count,
        mode="iid",
    )


def sample_single_path(env: Env, policy, theta, episodes: int, rng: np.random.Generator) -> Samples:
    """Roll ``episodes`` full episodes in lockstep and keep every timestep."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    gamma = env.spec.gamma
    cap = env.spec.episode_cap
    states = env.reset_batch(rng, episodes)
    ep_states = [[] for _ in range(episodes)]
    ep_actions = [[] for _ in range(episodes)]
    ep_rewards = [[] for _ in range(episodes)]
    active = np.arange(episodes)
    for t in range(cap):
        cur = states[active]
        acts = policy.sample_actions(theta, cur, rng)
        nxt, rew, term = env.step_batch(cur, acts, np.full(len(active), t))
        for j, e in enumerate(active):
            ep_states[e].append(cur[j])
            ep_actions[e].append(acts[j])
            ep_rewards[e].append(rew[j])
        states[active] = nxt
        active = active[~term]
        if len(active) == 0:
            break
    adv, _ = advantage_reward_to_go(ep_rewards, gamma)
    all_states = np.stack([s for ep in ep_states for s in ep])
    all_actions = np.asarray([a for ep in ep_actions for a in ep])
    weights = np.concatenate([gamma ** np.arange(len(ep)) for ep in ep_rewards])
    return Samples(
        states=all_states,
        actions=all_actions,
        behavior_logp=policy.logp_batch(theta, all_states, all_actions),
        advantages=adv,
        discount_weights=weights,
        rewards=np.concatenate([np.asarray(r, dtype=float) for r in ep_rewards]),
        n_units=episodes,
        mode="single_path",
        episode_returns=np.array([float(np.sum(r)) for r in ep_rewards]),
    )
