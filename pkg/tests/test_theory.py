import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rnpg.theory import (
    lqc_eta,
    lqc_grad,
    lqc_sigma_eta,
    normalized_error,
    stationary_covariance,
    theorem3_bound,
    theorem3_frequency,
    theorem3_log_term,
    theoretical_sigma,
)

MC = 10**6


def test_eta_and_grad_values():
    assert lqc_eta(0.0, 0.5) == -2.0
    assert lqc_eta(1.0, 0.5) == -4.0
    assert lqc_grad(0.0, 0.5) == 0.0
    assert lqc_grad(1.0, 0.5) == -4.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.05, 0.95))
def test_grad_matches_finite_difference(theta, gamma):
    h = 1e-6
    fd = (lqc_eta(theta + h, gamma) - lqc_eta(theta - h, gamma)) / (2 * h)
    assert abs(fd - lqc_grad(theta, gamma)) <= 1e-6 * max(1.0, abs(fd))
    assert lqc_eta(theta, gamma) <= lqc_eta(0.0, gamma)


def test_sigma_eta_closed_form_and_monte_carlo():
    assert lqc_sigma_eta(0.5) == 40.0
    x = np.random.default_rng(1).standard_normal(2 * 10**6)
    g = (1 - x * x) * x / 0.5
    assert abs(g.var() - 40.0) <= 4 * g.var() * math.sqrt(8 / len(x))


def test_gamma_out_of_range():
    with pytest.raises(ValueError):
        lqc_eta(0.0, 1.0)


def test_normalized_error():
    assert normalized_error(0.0, 0.0, 0.5) == 0.0
    assert normalized_error(0.01, 0.0, 1e-4) == pytest.approx(1.0)
    assert normalized_error(0.02, 0.0, 1e-4) == pytest.approx(2 * normalized_error(0.01, 0.0, 1e-4))
    with pytest.raises(ValueError):
        normalized_error(1.0, 0.0, 0.0)


def test_large_batch_limit():
    th = theoretical_sigma(0.5, 10_000, 1, 0.01, mc_reps=MC)
    assert th.fbar_inv == pytest.approx(1 / 1.01, rel=0.01)


def test_fbar_inv_two_seeds_agree():
    a = theoretical_sigma(0.5, 5, 5, 0.01, mc_reps=MC, seed=1)
    b = theoretical_sigma(0.5, 5, 5, 0.01, mc_reps=MC, seed=2)
    assert a.fbar_inv != b.fbar_inv
    assert abs(a.fbar_inv - b.fbar_inv) <= 3 * math.hypot(a.se_fbar_inv, b.se_fbar_inv)


def test_fbar_inv_matches_normal_draws():
    # the chi-square shortcut against the literal mean of B squared normals
    th = theoretical_sigma(0.5, 5, 1, 0.01, mc_reps=MC, seed=3)
    x = np.random.default_rng(4).standard_normal((MC, 5))
    inv = 1 / (0.01 + (x * x).mean(axis=1))
    se = math.hypot(th.se_fbar_inv, inv.std() / math.sqrt(MC))
    assert abs(inv.mean() - th.fbar_inv) <= 4 * se


def test_theory_invariants():
    th = theoretical_sigma(0.5, 5, 5, 0.01, mc_reps=MC)
    assert th.sigma_eta == 40.0
    assert th.g_matrix == pytest.approx(-2 / 0.5 * th.fbar_inv)
    assert th.g_matrix < 0
    assert th.sigma2 >= 0 and th.sigma2_prime >= th.sigma1
    assert th.sigma_inf > 0
    assert th.sigma_hat == pytest.approx(th.sigma1 / 5 + th.sigma2 / 25)
    assert th.sigma_inf == pytest.approx(stationary_covariance([[th.g_matrix]], [[th.sigma_hat]])[0, 0],
                                         rel=1e-12)


def test_reuse_shrinks_predicted_variance():
    one = theoretical_sigma(0.5, 5, 1, 0.01, mc_reps=MC, seed=7)
    ten = theoretical_sigma(0.5, 5, 10, 0.01, mc_reps=MC, seed=7)
    assert one.sigma_hat == pytest.approx((one.sigma1 + one.sigma2) / 5)
    assert ten.sigma_hat < one.sigma_hat
    assert ten.sigma_inf < one.sigma_inf


def test_theory_is_reproducible():
    a = theoretical_sigma(0.5, 5, 5, 0.01, mc_reps=MC, seed=9).to_dict()
    b = theoretical_sigma(0.5, 5, 5, 0.01, mc_reps=MC, seed=9).to_dict()
    assert a == b


def test_theory_rejects_small_mc():
    with pytest.raises(ValueError):
        theoretical_sigma(0.5, 5, 5, 0.01, mc_reps=1000)


def test_stationary_covariance_solves_lyapunov():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(3, 3))
    g = -(m @ m.T + np.eye(3))
    q = rng.normal(size=(3, 3))
    q = q @ q.T
    s = stationary_covariance(g, q)
    np.testing.assert_allclose(g @ s + s @ g.T, -q, atol=1e-10)


def _bound_by_hand(C, K, B, n, delta, traces, d):
    mpmath.mp.dps = 40
    L = mpmath.log(mpmath.pi**2 * n**2 * (d + 1) / (3 * mpmath.mpf(delta)))
    beta = mpmath.sqrt(mpmath.mpf(C)**2 * L / (K**3 * B * (B - 1))) + mpmath.fsum(traces) / (K**2 * B)
    return float(mpmath.sqrt(2 * beta * L) + 2 * mpmath.mpf(C) * L / K)


def test_theorem3_bound_dual_evaluation():
    args = dict(C=1.0, K=10, B=4, n=100, delta=0.05, trace_vars=[1.0] * 10, d=1)
    got = theorem3_bound(**args)
    want = _bound_by_hand(1.0, 10, 4, 100, 0.05, [1.0] * 10, 1)
    assert abs(got - want) <= 1e-12 * want


def test_theorem3_degenerate_limit_and_scaling():
    vals = [theorem3_bound(c, 5, 4, 10, 0.05, [0.0] * 5, 1) for c in (1e-2, 1e-6, 1e-12, 1e-24)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-10
    L = theorem3_log_term(10, 1, 0.05)
    assert L == pytest.approx(math.log(math.pi**2 * 100 * 2 / 0.15))
    # with C negligible the trace term gives beta = sum / (K^2 B), i.e. 1 / (K B) for unit traces
    b5 = theorem3_bound(1e-300, 5, 4, 10, 0.05, [1.0] * 5, 1)
    b10 = theorem3_bound(1e-300, 10, 4, 10, 0.05, [1.0] * 10, 1)
    assert (b5 / b10) ** 2 == pytest.approx(2.0, rel=1e-12)


def test_theorem3_errors():
    with pytest.raises(ValueError):
        theorem3_bound(1.0, 2, 1, 10, 0.05, [1.0, 1.0], 1)
    with pytest.raises(ValueError):
        theorem3_bound(1.0, 2, 3, 10, 0.05, [1.0], 1)


def test_theorem3_frequency_small():
    res = theorem3_frequency(reps=50, seed=1)
    assert res["frequency"] >= 0.95
    assert len(res["lhs"]) == 50
