import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rnpg.envs import CARTPOLE_CAP, CartPole, EnvSpec, LQC, cartpole_step, lqc_step, make_env
from rnpg.policies import GaussianShiftPolicy, policy_for_env
from rnpg.sampling import draw_horizon, draw_horizons, sample_occupancy_iid, sample_single_path


def gen(seed=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def test_cartpole_push_right_from_rest():
    # worked by hand in exact arithmetic: temp = 100/11, pole acc = -600/41,
    # cart acc = 4400/451; Euler integration with tau = 1/50
    tr = cartpole_step(np.zeros(4), 1, 0)
    expected = [0.0, float(Fraction(4400, 451) / 50), 0.0, float(Fraction(-600, 41) / 50)]
    np.testing.assert_allclose(tr.next_state, expected, rtol=1e-12, atol=1e-15)
    assert tr.reward == 1.0
    assert not tr.terminal


def test_cartpole_push_left_mirrors_right():
    right = cartpole_step(np.zeros(4), 1).next_state
    left = cartpole_step(np.zeros(4), 0).next_state
    np.testing.assert_allclose(left, -right, atol=1e-15)


def test_cartpole_terminates_past_angle_limit():
    tr = cartpole_step(np.array([0.0, 0.0, 0.3, 0.0]), 0)
    assert tr.terminal
    assert tr.reward == 1.0


def test_cartpole_terminates_past_track_edge():
    assert cartpole_step(np.array([2.45, 0.0, 0.0, 0.0]), 1).terminal


def test_cartpole_episode_cap():
    assert not cartpole_step(np.zeros(4), 1, CARTPOLE_CAP - 2).terminal
    assert cartpole_step(np.zeros(4), 1, CARTPOLE_CAP - 1).terminal


def test_cartpole_reset_range():
    s = CartPole().reset_batch(gen(), 1000)
    assert s.shape == (1000, 4)
    assert np.all(np.abs(s) <= 0.05)


def test_cartpole_scalar_and_batch_agree():
    env = CartPole()
    states = env.reset_batch(gen(3), 50)
    actions = gen(4).integers(0, 2, 50)
    nxt, rew, term = env.step_batch(states, actions, np.zeros(50, dtype=int))
    for i in range(50):
        tr = env.step(states[i], actions[i])
        assert np.array_equal(tr.next_state, nxt[i])
        assert tr.terminal == term[i]


def test_lqc_step_examples():
    tr = lqc_step(np.array([1.0]), 0.5)
    assert tr.reward == -2.25
    np.testing.assert_array_equal(tr.next_state, [1.5])
    assert not tr.terminal
    assert lqc_step(np.array([0.0]), 0.0).reward == 0.0


def test_lqc_reset_is_standard_normal():
    s = LQC().reset_batch(gen(1), 200_000)[:, 0]
    assert abs(s.mean()) < 4 / math.sqrt(200_000)
    assert abs(s.var() - 1.0) < 4 * math.sqrt(2 / 200_000)


def test_env_spec_rejects_bad_gamma():
    with pytest.raises(ValueError):
        EnvSpec(1, "continuous", 1.0, 10)
    with pytest.raises(ValueError):
        make_env("mountaincar")


def test_geometric_horizon_frequencies():
    rng = gen(7)
    gamma, n = 0.5, 100_000
    t = draw_horizons(gamma, n, rng)
    for k in range(6):
        p = gamma**k * (1 - gamma)
        band = 4 * math.sqrt(p * (1 - p) / n)
        assert abs(np.mean(t == k) - p) <= band, k


def test_geometric_horizon_gamma_zero():
    rng = gen()
    assert draw_horizon(0.0, rng) == 0
    assert np.all(draw_horizons(0.0, 10, rng) == 0)


def test_horizon_safety_cap():
    with pytest.raises(RuntimeError):
        draw_horizons(0.999999, 1000, gen(), cap=10)


def test_iid_occupancy_pairs_lqc():
    # under the gaussian shift policy s + a ~ N(theta, 1) whatever the state law
    env = LQC(gamma=0.5)
    pol = GaussianShiftPolicy()
    n = 200_000
    s = sample_occupancy_iid(env, pol, np.array([1.0]), n, gen(11))
    x = s.states[:, 0] + s.actions
    assert abs(x.mean() - 1.0) < 4 / math.sqrt(n)
    assert abs(x.var() - 1.0) < 4 * math.sqrt(2 / n)
    assert s.mode == "iid" and s.n_units == n
    np.testing.assert_array_equal(s.discount_weights, 1.0)


def test_iid_occupancy_gamma_zero_is_initial_distribution():
    env = LQC(gamma=0.0)
    s = sample_occupancy_iid(env, GaussianShiftPolicy(), np.array([0.0]), 50_000, gen(2))
    st_ = s.states[:, 0]
    assert abs(st_.var() - 1.0) < 4 * math.sqrt(2 / 50_000)


def test_iid_cartpole_never_returns_terminal_states():
    env = CartPole()
    pol = policy_for_env(env)
    theta = pol.init_params(gen(1))
    s = sample_occupancy_iid(env, pol, theta, 200, gen(5))
    assert np.all(np.abs(s.states[:, 0]) <= 2.4)
    assert np.all(np.abs(s.states[:, 2]) <= 12 * 2 * math.pi / 360)


def test_single_path_weights_and_lengths():
    env = CartPole()
    pol = policy_for_env(env)
    theta = pol.init_params(gen(1))
    s = sample_single_path(env, pol, theta, 4, gen(9))
    assert s.mode == "single_path" and s.n_units == 4
    assert len(s.episode_returns) == 4
    assert s.episode_returns.sum() == len(s)
    starts = np.flatnonzero(s.discount_weights == 1.0)
    assert len(starts) == 4
    for a, b in zip(starts, list(starts[1:]) + [len(s)]):
        np.testing.assert_allclose(s.discount_weights[a:b], 0.99 ** np.arange(b - a))
    assert np.all(s.episode_returns <= CARTPOLE_CAP)


def test_samplers_deterministic_under_seed():
    env = CartPole()
    pol = policy_for_env(env)
    theta = pol.init_params(gen(1))
    a = sample_single_path(env, pol, theta, 3, gen(4))
    b = sample_single_path(env, pol, theta, 3, gen(4))
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.actions, b.actions)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=4, max_size=4), st.integers(0, 1))
def test_cartpole_step_is_pure(state, action):
    s = np.array(state)
    a = cartpole_step(s, action)
    b = cartpole_step(s.copy(), action)
    assert np.array_equal(a.next_state, b.next_state)
    assert a.reward == 1.0
