"""Closed-form LQC quantities and the predicted limiting law of the normalized error.

Everything here is computed from formulas and plain Monte Carlo over normal
variates; nothing imports the training code, so it can serve as an oracle.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

# spawn key separating oracle Monte Carlo from training streams
THEORY_STREAM = 0x5EED_7E0
DEFAULT_MC_REPS = 10**7
MC_CHUNK = 10**6


def lqc_eta(theta, gamma: float):
    """Discounted LQC return ``-(1 + theta^2) / (1 - gamma)``."""
    _check_gamma(gamma)
    theta = np.asarray(theta, dtype=float)
    return -(1.0 + theta * theta) / (1.0 - gamma)


def lqc_grad(theta, gamma: float):
    _check_gamma(gamma)
    return -2.0 * np.asarray(theta, dtype=float) / (1.0 - gamma)


def lqc_sigma_eta(gamma: float) -> float:
    """Variance of the single-sample gradient at the optimum, ``10 / (1 - gamma)^2``.

    Var((1 - X^2) X) for standard normal X is E[X^6] - 2E[X^4] + E[X^2] = 15 - 6 + 1.
    """
    _check_gamma(gamma)
    return 10.0 / (1.0 - gamma) ** 2


def _check_gamma(gamma):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def normalized_error(theta_n, theta_bar, alpha_n):
    if np.any(np.asarray(alpha_n) <= 0):
        raise ValueError("step size must be positive")
    return (np.asarray(theta_n, dtype=float) - theta_bar) / np.sqrt(alpha_n)


@dataclass
class AsymptoticTheory:
    sigma_eta: float
    fbar_inv: float
    sigma1: float
    sigma2_prime: float
    sigma2: float
    sigma_hat: float
    g_matrix: float
    sigma_inf: float
    B: int
    K: int
    gamma: float
    epsilon: float
    mc_reps: int
    se_fbar_inv: float
    se_sigma2_prime: float
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _inverse_fisher_moments(B, epsilon, mc_reps, seed, chunk=MC_CHUNK):
    """Monte Carlo E[Y^-1], E[Y^-2] and their standard errors, Y = eps + chi2_B / B.

    ``chi2_B / B`` is the mean of B squared standard normals. Chunks draw from
    spawned substreams and are reduced in order, so the result depends only on
    ``(seed, mc_reps, chunk)``.
    """
    n_chunks = -(-mc_reps // chunk)
    streams = np.random.SeedSequence([seed, THEORY_STREAM]).spawn(n_chunks)
    s1 = s2 = s4 = 0.0
    remaining = mc_reps
    for ss in streams:
        m = min(chunk, remaining)
        remaining -= m
        rng = np.random.Generator(np.random.PCG64(ss))
        inv = 1.0 / (epsilon + rng.chisquare(B, size=m) / B)
        inv2 = inv * inv
        s1 += inv.sum()
        s2 += inv2.sum()
        s4 += (inv2 * inv2).sum()
    n = mc_reps
    m1, m2, m4 = s1 / n, s2 / n, s4 / n
    se1 = math.sqrt(max(m2 - m1 * m1, 0.0) / (n - 1))
    se2 = math.sqrt(max(m4 - m2 * m2, 0.0) / (n - 1))
    return m1, m2, se1, se2


def theoretical_sigma(gamma: float, B: int, K: int, epsilon: float,
                      mc_reps: int = DEFAULT_MC_REPS, seed: int = 0) -> AsymptoticTheory:
    """Predicted stationary variance of ``(theta_n - 0) / sqrt(alpha_n)`` for the LQC problem."""
    _check_gamma(gamma)
    if mc_reps < 10**5:
        raise ValueError("mc_reps must be at least 1e5")
    if B < 1 or K < 1 or epsilon <= 0:
        raise ValueError("need B >= 1, K >= 1 and epsilon > 0")
    sigma_eta = lqc_sigma_eta(gamma)
    fbar_inv, inv_sq, se1, se2 = _inverse_fisher_moments(B, epsilon, mc_reps, seed)
    sigma1 = fbar_inv**2 * sigma_eta
    sigma2_prime = sigma_eta * inv_sq
    sigma2 = sigma2_prime - sigma1
    if sigma2 < 0:
        raise ArithmeticError("Sigma_2' < Sigma_1 violates Jensen's inequality; Monte Carlo broken")
    sigma_hat = sigma1 / B + sigma2 / (K * B)
    g = -2.0 / (1.0 - gamma) * fbar_inv
    return AsymptoticTheory(
        sigma_eta=sigma_eta, fbar_inv=fbar_inv, sigma1=sigma1, sigma2_prime=sigma2_prime,
        sigma2=sigma2, sigma_hat=sigma_hat, g_matrix=g, sigma_inf=-sigma_hat / (2.0 * g),
        B=B, K=K, gamma=gamma, epsilon=epsilon, mc_reps=mc_reps,
        se_fbar_inv=se1, se_sigma2_prime=sigma_eta * se2, seed=seed,
    )


def stationary_covariance(g_matrix, sigma_hat):
    """Solve ``vec(S) = -(G kron-sum G)^{-1} vec(Sigma_hat)`` for the OU stationary covariance."""
    g = np.atleast_2d(np.asarray(g_matrix, dtype=float))
    s = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    d = len(g)
    eye = np.eye(d)
    ksum = np.kron(g, eye) + np.kron(eye, g)
    vec = -np.linalg.solve(ksum, s.reshape(-1, order="F"))
    return vec.reshape(d, d, order="F")


def theorem3_log_term(n: int, d: int, delta: float) -> float:
    return math.log(math.pi**2 * n**2 * (d + 1) / (3.0 * delta))


def theorem3_bound(C: float, K: int, B: int, n: int, delta: float, trace_vars, d: int) -> float:
    """High-probability radius for the reused gradient estimate around a local optimum."""
    trace_vars = list(trace_vars)
    if B < 2:
        raise ValueError("bound needs B >= 2 (sample covariance undefined)")
    if C <= 0 or not 0 < delta < 1:
        raise ValueError("need C > 0 and delta in (0, 1)")
    if len(trace_vars) != K:
        raise ValueError(f"expected {K} per-batch variance traces, got {len(trace_vars)}")
    log_term = theorem3_log_term(n, d, delta)
    beta = math.sqrt(C**2 / (K**3 * B * (B - 1)) * log_term) + sum(trace_vars) / (K**2 * B)
    return math.sqrt(2.0 * beta * log_term) + 2.0 * C / K * log_term


def theorem3_frequency(reps: int = 200, K: int = 10, B: int = 5, n: int = 100,
                       delta: float = 0.05, gamma: float = 0.5, seed: int = 0) -> dict:
    """Empirical coverage of :func:`theorem3_bound` on the LQC problem at ``theta* = 0``.

    Parameters stay frozen at the optimum, so every likelihood ratio is one and
    each replication draws ``K`` fresh batches of single-sample gradients.
    ``C`` is the largest bounded quantity observed across all replications.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, THEORY_STREAM, 3]))
    x = rng.standard_normal((reps, K, B))
    g = (1.0 - x * x) * x / (1.0 - gamma)
    lhs = np.abs(g.mean(axis=(1, 2)))  # true gradient is zero at the optimum
    traces = g.var(axis=2, ddof=1)
    C = max(float(np.abs(g).max()), 1.0, abs(float(lqc_eta(0.0, gamma))))
    rhs = np.array([theorem3_bound(C, K, B, n, delta, traces[r], 1) for r in range(reps)])
    covered = lhs <= rhs
    return {"frequency": float(covered.mean()), "C": C, "lhs": lhs, "rhs": rhs,
            "reps": reps, "delta": delta}
